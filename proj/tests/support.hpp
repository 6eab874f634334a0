// Copyright (C) 2026 The lmeec Authors
// SPDX-License-Identifier: Apache-2.0

// Shared helpers for the unit tests.

#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "lmeec/mask.hpp"
#include "lmeec/numerics.hpp"

namespace lmeec::test {

inline FeatureMap random_map(std::mt19937_64& rng, std::size_t h, std::size_t w, std::size_t c, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    FeatureMap m(h, w, c);
    for (double& v : m.data()) v = normal(rng);
    return m;
}

inline Mask random_mask(std::mt19937_64& rng, std::size_t h, std::size_t w, double p = 0.5) {
    std::bernoulli_distribution coin(p);
    Mask m(h, w);
    for (std::size_t n = 0; n < m.size(); ++n) m.set_at(n, coin(rng));
    return m;
}

inline Mask rect(std::size_t h, std::size_t w, std::size_t i0, std::size_t j0, std::size_t rh, std::size_t rw) {
    Mask m(h, w);
    for (std::size_t i = i0; i < i0 + rh; ++i) {
        for (std::size_t j = j0; j < j0 + rw; ++j) m.set(i, j);
    }
    return m;
}

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("lmeec_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace lmeec::test
