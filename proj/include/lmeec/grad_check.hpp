// Copyright (C) 2026 The lmeec Authors
// SPDX-License-Identifier: Apache-2.0

// Central finite-difference check of fuse_backward against L = <G, fuse(F_mem, F_view)>.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lmeec/mv_moe.hpp"

namespace lmeec::moe {

struct GradCheckConfig {
    std::uint64_t seed = 0;
    std::size_t h = 4, w = 4, c = 4;
    std::size_t r = 0, s = 0;  // 0 selects default_hidden(c)
    double step = 1e-5;
    double tol = 1e-4;
    double abs_floor = 1e-8;  // |analytic - numeric| at or below this counts as agreement
    /// Draws are repeated until every ReLU input is at least this far from zero,
    /// so no finite-difference stencil straddles the kink.
    double kink_margin = 1e-4;
    /// Applied to the analytic gradients before comparison (fault injection).
    std::function<void(MoeGradients&)> corrupt;
};

struct GroupError {
    std::string name;
    std::size_t count = 0;
    double max_rel = 0.0;  // max over coordinates of |a-n| / max(|a|,|n|), zero when under the floor
    double max_abs = 0.0;
    bool pass = true;
};

struct GradCheckReport {
    std::vector<GroupError> groups;
    bool pass = true;
    double seconds = 0.0;
    double max_rel = 0.0;

    const GroupError* find(const std::string& name) const {
        for (const auto& g : groups) {
            if (g.name == name) return &g;
        }
        return nullptr;
    }
};

struct GradCheckProblem {
    FeatureMap f_mem, f_view, upstream;
    MoeParams params;
};

namespace detail {

inline GradCheckProblem draw_problem(const GradCheckConfig& cfg, std::uint64_t seed) {
    const std::size_t r = cfg.r ? cfg.r : default_hidden(cfg.c);
    const std::size_t s = cfg.s ? cfg.s : default_hidden(cfg.c);
    GradCheckProblem prob;
    prob.params = MoeParams::init_uniform(cfg.c, r, s, seed * 2654435761ULL + 17);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> bias(-0.5, 0.5);
    prob.params.for_each_tensor([&](const char* name, std::vector<double>& t) {
        if (std::string_view(name).ends_with("bias")) {
            for (double& v : t) v = bias(rng);
        }
    });
    auto random_map = [&] {
        FeatureMap m(cfg.h, cfg.w, cfg.c);
        for (double& v : m.data()) v = normal(rng);
        return m;
    };
    prob.f_mem = random_map();
    prob.f_view = random_map();
    prob.upstream = random_map();
    return prob;
}

inline double min_relu_input(const GradCheckProblem& prob) {
    const FuseCache k = fuse_forward(prob.f_mem, prob.f_view, prob.params).cache;
    double m = std::numeric_limits<double>::infinity();
    auto scan = [&m](std::span<const double> xs) {
        for (double v : xs) m = std::min(m, std::abs(v));
    };
    scan(k.ch_mem.z1.data());
    scan(k.ch_view.z1.data());
    scan(k.sp_mem.u.data());
    scan(k.sp_view.u.data());
    return m;
}

}  // namespace detail

/// Random inputs N(0,1), params uniform with biases also drawn so every path is exercised.
inline GradCheckProblem make_grad_check_problem(const GradCheckConfig& cfg) {
    for (std::uint64_t attempt = 0;; ++attempt) {
        GradCheckProblem prob = detail::draw_problem(cfg, cfg.seed + attempt * 0x9E3779B97F4A7C15ULL);
        if (attempt >= 64 || detail::min_relu_input(prob) >= cfg.kink_margin) return prob;
    }
}

namespace detail {

inline double inner(const FeatureMap& a, const FeatureMap& b) {
    double acc = 0.0;
    for (std::size_t n = 0; n < a.size(); ++n) acc += a.data()[n] * b.data()[n];
    return acc;
}

inline void compare(GroupError& g, double analytic, double numeric, double abs_floor) {
    const double diff = std::abs(analytic - numeric);
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    const double rel = diff <= abs_floor ? 0.0 : diff / scale;
    ++g.count;
    g.max_abs = std::max(g.max_abs, diff);
    g.max_rel = std::max(g.max_rel, rel);
}

}  // namespace detail

inline GradCheckReport grad_check(const GradCheckConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    GradCheckProblem prob = make_grad_check_problem(cfg);
    MoeParams& p = prob.params;

    const FuseResult fwd = fuse_forward(prob.f_mem, prob.f_view, p);
    MoeGradients grads = fuse_backward(p, fwd.cache, prob.upstream);
    if (cfg.corrupt) cfg.corrupt(grads);

    auto loss = [&](const FeatureMap& fm, const FeatureMap& fv, const MoeParams& pp) {
        return detail::inner(prob.upstream, fuse(fm, fv, pp));
    };
    const double inv2h = 0.5 / cfg.step;

    GradCheckReport rep;

    // Parameter tensors, in serialization order; gradient tensors visited in lockstep.
    std::vector<std::vector<double>*> analytic;
    grads.params.for_each_tensor([&](const char*, std::vector<double>& t) { analytic.push_back(&t); });
    std::size_t idx = 0;
    p.for_each_tensor([&](const char* name, std::vector<double>& t) {
        GroupError g;
        g.name = name;
        const std::vector<double>& a = *analytic[idx++];
        for (std::size_t n = 0; n < t.size(); ++n) {
            const double saved = t[n];
            t[n] = saved + cfg.step;
            const double lp = loss(prob.f_mem, prob.f_view, p);
            t[n] = saved - cfg.step;
            const double lm = loss(prob.f_mem, prob.f_view, p);
            t[n] = saved;
            detail::compare(g, a[n], (lp - lm) * inv2h, cfg.abs_floor);
        }
        rep.groups.push_back(g);
    });

    auto check_input = [&](const char* name, FeatureMap& x, const FeatureMap& a) {
        GroupError g;
        g.name = name;
        for (std::size_t n = 0; n < x.size(); ++n) {
            const double saved = x.data()[n];
            x.data()[n] = saved + cfg.step;
            const double lp = loss(prob.f_mem, prob.f_view, p);
            x.data()[n] = saved - cfg.step;
            const double lm = loss(prob.f_mem, prob.f_view, p);
            x.data()[n] = saved;
            detail::compare(g, a.data()[n], (lp - lm) * inv2h, cfg.abs_floor);
        }
        rep.groups.push_back(g);
    };
    check_input("F_mem", prob.f_mem, grads.d_mem);
    check_input("F_view", prob.f_view, grads.d_view);

    for (auto& g : rep.groups) {
        g.pass = g.max_rel < cfg.tol;
        rep.pass = rep.pass && g.pass;
        rep.max_rel = std::max(rep.max_rel, g.max_rel);
    }
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

inline void print_report(std::ostream& os, const GradCheckConfig& cfg, const GradCheckReport& rep) {
    os << "grad_check seed=" << cfg.seed << " dims=" << cfg.h << "," << cfg.w << "," << cfg.c << " step=" << cfg.step
       << " tol=" << cfg.tol << "\n";
    for (const auto& g : rep.groups) {
        os << "  " << (g.pass ? "ok  " : "FAIL") << "  " << g.name << "  n=" << g.count << "  max_rel=" << g.max_rel
           << "  max_abs=" << g.max_abs << "\n";
    }
    os << (rep.pass ? "PASS" : "FAIL") << " max_rel=" << rep.max_rel << "\n";
}

}  // namespace lmeec::moe
