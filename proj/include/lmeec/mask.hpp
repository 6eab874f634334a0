// Copyright (C) 2026 The lmeec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lmeec {

/// Binary foreground grid, row-major.
class Mask {
public:
    Mask() = default;
    Mask(std::size_t h, std::size_t w) : h_(h), w_(w), bits_(h * w, 0) {}
    Mask(std::size_t h, std::size_t w, std::vector<std::uint8_t> bits) : h_(h), w_(w), bits_(std::move(bits)) {
        if (bits_.size() != h * w) throw std::invalid_argument("Mask: bit count does not match dimensions");
        for (auto& b : bits_) b = b ? 1 : 0;
    }

    std::size_t height() const { return h_; }
    std::size_t width() const { return w_; }
    std::size_t size() const { return bits_.size(); }

    bool operator()(std::size_t i, std::size_t j) const { return bits_[i * w_ + j] != 0; }
    void set(std::size_t i, std::size_t j, bool v = true) { bits_[i * w_ + j] = v ? 1 : 0; }
    bool at(std::size_t n) const { return bits_[n] != 0; }
    void set_at(std::size_t n, bool v) { bits_[n] = v ? 1 : 0; }

    std::size_t count() const {
        std::size_t n = 0;
        for (auto b : bits_) n += b;
        return n;
    }
    bool any() const { return count() > 0; }
    bool same_dims(const Mask& o) const { return h_ == o.h_ && w_ == o.w_; }

    const std::vector<std::uint8_t>& bits() const { return bits_; }

    friend bool operator==(const Mask&, const Mask&) = default;

private:
    std::size_t h_ = 0, w_ = 0;
    std::vector<std::uint8_t> bits_;
};

}  // namespace lmeec
