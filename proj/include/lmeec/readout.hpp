// Copyright (C) 2026 The lmeec Authors
// SPDX-License-Identifier: Apache-2.0

// Single-head dot-product attention readout: every query location attends
// over the memory tokens and returns the attention-weighted token label.

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lmeec/mask.hpp"
#include "lmeec/memory.hpp"
#include "lmeec/numerics.hpp"

namespace lmeec::readout {

struct ReadoutConfig {
    std::optional<double> temperature;  // defaults to sqrt(C)
    double threshold = 0.5;

    double resolved_temperature(std::size_t channels) const {
        return temperature.value_or(std::sqrt(static_cast<double>(channels)));
    }
    void validate() const {
        if (temperature && !(*temperature > 0.0)) throw std::invalid_argument("readout: temperature must be > 0");
        if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("readout: threshold must lie in (0,1)");
    }
};

inline SpatialMap attend(const FeatureMap& query, const memory::TokenSet& toks, const ReadoutConfig& cfg = {}) {
    cfg.validate();
    if (toks.empty()) throw std::invalid_argument("attend: empty token list");
    if (toks.channels != query.channels()) {
        throw std::invalid_argument("attend: tokens have " + std::to_string(toks.channels) + " channels, query has " +
                                    std::to_string(query.channels()));
    }
    const std::size_t c = query.channels(), n = toks.size();
    const double inv_t = 1.0 / cfg.resolved_temperature(c);
    SpatialMap out(query.height(), query.width());
    std::vector<double> logits(n);
    for (std::size_t q = 0; q < query.locations(); ++q) {
        const auto qv = query.location(q);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < n; ++t) {
            const double* kv = &toks.features[t * c];
            double dot = 0.0;
            for (std::size_t k = 0; k < c; ++k) dot += qv[k] * kv[k];
            logits[t] = dot * inv_t;
            mx = std::max(mx, logits[t]);
        }
        double z = 0.0, acc = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            const double e = std::exp(logits[t] - mx);
            z += e;
            acc += e * toks.labels[t];
        }
        out.data()[q] = acc / z;
    }
    return out;
}

struct Prediction {
    Mask mask;
    double confidence = 0.0;  // mean probability over predicted foreground, 0 when empty
    SpatialMap probability;
};

inline Prediction threshold_probabilities(const SpatialMap& prob, double threshold) {
    Prediction out;
    out.mask = Mask(prob.height(), prob.width());
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t q = 0; q < prob.size(); ++q) {
        if (prob.data()[q] >= threshold) {
            out.mask.set_at(q, true);
            sum += prob.data()[q];
            ++n;
        }
    }
    out.confidence = n ? sum / static_cast<double>(n) : 0.0;
    out.probability = prob;
    return out;
}

inline Prediction predict_mask(const FeatureMap& query, const memory::TokenSet& toks, const ReadoutConfig& cfg = {}) {
    return threshold_probabilities(attend(query, toks, cfg), cfg.threshold);
}

}  // namespace lmeec::readout
