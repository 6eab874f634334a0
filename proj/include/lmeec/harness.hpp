// Copyright (C) 2026 The lmeec Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic two-view streams and the experiments run on them.
//
// World model: a round blob on an h x w token grid over a uniform background.
// Exo tokens carry the object signature s(theta) inside the blob and the
// background signature b elsewhere, plus iid noise. The signature rotates
// in a 2-D channel plane while the object is visible, so an old appearance
// stops matching a new one. Ego tokens see the same world through a fixed
// channel permutation (swap of channel pairs) and an additive offset; the
// object sits at a vertically mirrored position.
//
// Channel layout (C >= 8): pairs (0,1),(2,3) hold the object plane, (4,5) the
// background, (6,7) the ego offset; any further channels carry noise only.
// Each signature mixes a pair-symmetric part, kept by the permutation, with a
// pair-antisymmetric part, negated by it. The mix sets the cross-view
// correlation <x, Perm(x)> / |x|^2.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lmeec/mask.hpp"
#include "lmeec/memory.hpp"
#include "lmeec/metrics.hpp"
#include "lmeec/mv_moe.hpp"
#include "lmeec/numerics.hpp"
#include "lmeec/readout.hpp"

namespace lmeec::harness {

struct StreamSpec {
    std::uint64_t seed = 0;
    std::size_t T = 60;
    std::size_t h = 8, w = 8, C = 8;
    double blob_radius = 1.5;
    double drift_speed = 0.3;          // grid cells per frame
    std::size_t visible_run = 8;       // frames visible before each departure
    std::size_t revisit_gap = 12;      // frames absent before the object returns; 0 = never leaves
    std::vector<std::pair<std::size_t, std::size_t>> occlusion_windows;  // inclusive, 1-based
    double appearance_drift = 0.05;    // per-frame iid perturbation of the object signature
    double appearance_rotation = 0.25; // radians per visible frame
    double noise = 0.15;               // background noise sigma per channel
    double object_amplitude = 5.0;
    double background_amplitude = 3.0;
    double cross_view_correlation = 0.5;
    double view_offset = 1.0;

    void validate() const {
        auto fail = [](const std::string& m) { throw std::invalid_argument("StreamSpec: " + m); };
        if (T < 1) fail("T must be >= 1");
        if (h < 1 || w < 1) fail("grid must be at least 1x1");
        if (C < 8) fail("C must be >= 8");
        if (!(blob_radius > 0.0)) fail("blob_radius must be > 0");
        if (!(drift_speed >= 0.0)) fail("drift_speed must be >= 0");
        if (!(noise >= 0.0) || !(appearance_drift >= 0.0)) fail("noise scales must be >= 0");
        if (object_amplitude < 4.0 * noise || background_amplitude < 4.0 * noise) {
            fail("signatures must exceed 4 sigma of the noise");
        }
        if (!(cross_view_correlation >= -1.0 && cross_view_correlation <= 1.0)) {
            fail("cross_view_correlation must lie in [-1,1]");
        }
        for (const auto& [a, b] : occlusion_windows) {
            if (a < 1 || b > T || a > b) fail("occlusion window outside [1,T]");
        }
    }
};

struct StreamRecord {
    std::uint32_t t = 0;
    FeatureMap ego_feature;
    Mask ego_mask;
    FeatureMap exo_feature;
    Mask exo_gt_mask;

    friend bool operator==(const StreamRecord&, const StreamRecord&) = default;
};

namespace detail {

inline std::size_t swap_pair(std::size_t k, std::size_t C) {
    if (k % 2 == 0) return k + 1 < C ? k + 1 : k;
    return k - 1;
}

struct Signatures {
    std::vector<double> obj_cos, obj_sin;  // object plane basis, unit norm
    std::vector<double> background;        // unit norm
    std::vector<double> offset;            // unit norm along the offset pair
};

inline Signatures make_signatures(const StreamSpec& s) {
    // rho = cos(2 psi) for a unit vector cos(psi) * sym + sin(psi) * anti
    const double psi = 0.5 * std::acos(s.cross_view_correlation);
    const double cs = std::cos(psi) / std::sqrt(2.0), sn = std::sin(psi) / std::sqrt(2.0);
    Signatures g;
    g.obj_cos.assign(s.C, 0.0);
    g.obj_sin.assign(s.C, 0.0);
    g.background.assign(s.C, 0.0);
    g.offset.assign(s.C, 0.0);
    g.obj_cos[0] = cs + sn;
    g.obj_cos[1] = cs - sn;
    g.obj_sin[2] = cs + sn;
    g.obj_sin[3] = cs - sn;
    g.background[4] = cs + sn;
    g.background[5] = cs - sn;
    g.offset[6] = g.offset[7] = 1.0 / std::sqrt(2.0);
    return g;
}

inline bool in_blob(double cy, double cx, double r, std::size_t i, std::size_t j) {
    const double di = static_cast<double>(i) - cy, dj = static_cast<double>(j) - cx;
    return di * di + dj * dj <= r * r;
}

}  // namespace detail

/// True when the object is on screen at frame t (1-based).
inline bool object_visible(const StreamSpec& s, std::size_t t) {
    for (const auto& [a, b] : s.occlusion_windows) {
        if (t >= a && t <= b) return false;
    }
    if (s.revisit_gap == 0 || s.visible_run == 0) return true;
    return (t - 1) % (s.visible_run + s.revisit_gap) < s.visible_run;
}

inline std::vector<StreamRecord> gen_stream(const StreamSpec& spec) {
    spec.validate();
    const std::size_t h = spec.h, w = spec.w, C = spec.C;
    const auto sig = detail::make_signatures(spec);
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const double r = spec.blob_radius;
    auto span_lo = [r](std::size_t n) { return std::min(r, (static_cast<double>(n) - 1.0) / 2.0); };
    const double lo_y = span_lo(h), hi_y = static_cast<double>(h) - 1.0 - lo_y;
    const double lo_x = span_lo(w), hi_x = static_cast<double>(w) - 1.0 - lo_x;
    double cy = lo_y + unit(rng) * (hi_y - lo_y);
    double cx = lo_x + unit(rng) * (hi_x - lo_x);
    const double heading = unit(rng) * 2.0 * M_PI;
    double vy = spec.drift_speed * std::sin(heading), vx = spec.drift_speed * std::cos(heading);
    double theta = unit(rng) * 2.0 * M_PI;

    std::vector<StreamRecord> out;
    out.reserve(spec.T);
    std::vector<double> obj(C), world(C);
    for (std::size_t t = 1; t <= spec.T; ++t) {
        const bool visible = object_visible(spec, t);
        for (std::size_t k = 0; k < C; ++k) {
            obj[k] = spec.object_amplitude * (std::cos(theta) * sig.obj_cos[k] + std::sin(theta) * sig.obj_sin[k]) +
                     spec.appearance_drift * normal(rng);
        }
        StreamRecord rec;
        rec.t = static_cast<std::uint32_t>(t);
        rec.exo_feature = FeatureMap(h, w, C);
        rec.ego_feature = FeatureMap(h, w, C);
        rec.exo_gt_mask = Mask(h, w);
        rec.ego_mask = Mask(h, w);
        const double ego_cy = static_cast<double>(h) - 1.0 - cy;
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                const bool fg_exo = visible && detail::in_blob(cy, cx, r, i, j);
                const bool fg_ego = visible && detail::in_blob(ego_cy, cx, r, i, j);
                if (fg_exo) rec.exo_gt_mask.set(i, j);
                if (fg_ego) rec.ego_mask.set(i, j);
                for (std::size_t k = 0; k < C; ++k) {
                    const double base = fg_exo ? obj[k] : spec.background_amplitude * sig.background[k];
                    rec.exo_feature(i, j, k) = base + spec.noise * normal(rng);
                }
                for (std::size_t k = 0; k < C; ++k) {
                    world[k] = fg_ego ? obj[k] : spec.background_amplitude * sig.background[k];
                }
                for (std::size_t k = 0; k < C; ++k) {
                    rec.ego_feature(i, j, k) = world[detail::swap_pair(k, C)] + spec.view_offset * sig.offset[k] +
                                               spec.noise * normal(rng);
                }
            }
        }
        out.push_back(std::move(rec));

        if (visible) theta += spec.appearance_rotation;
        cy += vy;
        cx += vx;
        if (cy < lo_y || cy > hi_y) {
            vy = -vy;
            cy = std::clamp(cy, lo_y, hi_y);
        }
        if (cx < lo_x || cx > hi_x) {
            vx = -vx;
            cx = std::clamp(cx, lo_x, hi_x);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Policy ablation

/// Policy as driven by the harness: fifo and iou_select keep the initial frame.
inline memory::CompressionPolicy harness_policy(memory::PolicyKind kind, std::uint64_t seed = 0) {
    switch (kind) {
        case memory::PolicyKind::ours: return memory::CompressionPolicy::ours();
        case memory::PolicyKind::fifo: return memory::CompressionPolicy::fifo(true);
        case memory::PolicyKind::cluster: return memory::CompressionPolicy::cluster(seed);
        case memory::PolicyKind::iou_select: return memory::CompressionPolicy::iou_select(0.5, true);
    }
    return memory::CompressionPolicy::ours();
}

inline std::vector<memory::PolicyKind> all_policies() {
    return {memory::PolicyKind::ours, memory::PolicyKind::fifo, memory::PolicyKind::cluster,
            memory::PolicyKind::iou_select};
}

struct PolicyRun {
    std::string policy;
    std::size_t M = 0;
    std::size_t T = 0;
    metrics::Summary summary;
    std::vector<metrics::FramePairResult> frames;
    double seconds = 0.0;
};

/// Streams the records through a dual memory under `policy` and scores the exo predictions.
inline PolicyRun run_policy(const std::vector<StreamRecord>& records, std::size_t M,
                            const memory::CompressionPolicy& policy, const readout::ReadoutConfig& cfg = {},
                            std::string name = {}) {
    if (records.empty()) throw std::invalid_argument("run_policy: empty stream");
    const auto t0 = std::chrono::steady_clock::now();
    const auto& first = records.front().exo_feature;
    memory::DualMemory mem(first.height(), first.width(), first.channels(), M);
    const std::size_t P = first.locations();
    PolicyRun run;
    run.policy = name.empty() ? memory::to_string(policy.kind) : std::move(name);
    run.M = M;
    run.T = records.size();
    run.frames.reserve(records.size());
    std::vector<double> labels(P);
    for (const auto& rec : records) {
        for (std::size_t q = 0; q < P; ++q) labels[q] = rec.ego_mask.at(q) ? 1.0 : 0.0;
        // Ego frames are ground truth: their score is 1 when the object is visible.
        mem.ego.append(rec.ego_feature.data(), labels, rec.t, policy, rec.ego_mask.any() ? 1.0 : 0.0);

        const auto pred = readout::predict_mask(rec.exo_feature, mem.tokens(), cfg);
        for (std::size_t q = 0; q < P; ++q) labels[q] = pred.mask.at(q) ? 1.0 : 0.0;
        mem.exo.append(rec.exo_feature.data(), labels, rec.t, policy, pred.confidence);

        run.frames.push_back(metrics::evaluate_frame(pred.mask, rec.exo_gt_mask));
    }
    run.summary = metrics::aggregate(run.frames);
    run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return run;
}

/// Memory large enough to never reduce: the upper bound every bounded policy is compared against.
inline PolicyRun run_unbounded(const std::vector<StreamRecord>& records, const readout::ReadoutConfig& cfg = {}) {
    auto run = run_policy(records, records.size(), memory::CompressionPolicy::ours(), cfg, "unbounded");
    run.M = 0;
    return run;
}

/// One run per policy, ranked by mean IoU (descending, undefined last; stable).
inline std::vector<PolicyRun> run_ablation(const std::vector<StreamRecord>& records, std::size_t M,
                                           const std::vector<memory::PolicyKind>& policies,
                                           const readout::ReadoutConfig& cfg = {}, std::uint64_t cluster_seed = 0) {
    std::vector<PolicyRun> runs;
    for (auto kind : policies) runs.push_back(run_policy(records, M, harness_policy(kind, cluster_seed), cfg));
    std::stable_sort(runs.begin(), runs.end(), [](const PolicyRun& a, const PolicyRun& b) {
        const double x = a.summary.mean_iou.value_or(-1.0), y = b.summary.mean_iou.value_or(-1.0);
        return x > y;
    });
    return runs;
}

inline std::vector<PolicyRun> run_ablation(const StreamSpec& spec, std::size_t M,
                                           const std::vector<memory::PolicyKind>& policies,
                                           const readout::ReadoutConfig& cfg = {}) {
    return run_ablation(gen_stream(spec), M, policies, cfg, spec.seed);
}

struct SweepCell {
    std::size_t M = 0, T = 0;
    std::vector<PolicyRun> runs;
};

inline std::vector<SweepCell> sweep(const StreamSpec& spec, const std::vector<std::size_t>& M_values,
                                    const std::vector<std::size_t>& T_values,
                                    const std::vector<memory::PolicyKind>& policies = all_policies(),
                                    const readout::ReadoutConfig& cfg = {}) {
    std::vector<std::size_t> Ts = T_values;
    if (Ts.empty()) Ts.push_back(spec.T);
    std::vector<SweepCell> cells;
    for (std::size_t T : Ts) {
        StreamSpec s = spec;
        s.T = T;
        const auto records = gen_stream(s);
        for (std::size_t M : M_values) {
            cells.push_back({M, T, run_ablation(records, M, policies, cfg, spec.seed)});
        }
    }
    return cells;
}

// ---------------------------------------------------------------------------
// Toy fusion training

enum class ToyTarget { sum, gated };

inline const char* to_string(ToyTarget t) { return t == ToyTarget::sum ? "sum" : "gated"; }

struct ToyTaskSpec {
    ToyTarget target = ToyTarget::gated;
    std::size_t h = 4, w = 4, c = 4;
    std::size_t r = 4, s = 4;
    std::size_t samples = 8;
    std::size_t steps = 2000;
    double step_size = 0.4;
    double sharpness = 2.0;  // slope of the content-dependent spatial gate
};

struct ToySample {
    FeatureMap f_mem, f_view, target;
};

/// Targets A*F_mem + B*F_view with A = (1+a_c[k])(1+a_s[i,j]), B = (1+b_c[k])(1+b_s[i,j]).
/// Channel gates are fixed per task; spatial gates follow the local contrast between the experts
/// so they vary over the grid and are a function of the input.
inline std::vector<ToySample> make_toy_data(const ToyTaskSpec& task, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> gate(0.1, 0.9);
    std::vector<double> a_c(task.c), b_c(task.c);
    for (auto& v : a_c) v = gate(rng);
    for (auto& v : b_c) v = gate(rng);
    std::vector<ToySample> data;
    for (std::size_t n = 0; n < task.samples; ++n) {
        ToySample smp{FeatureMap(task.h, task.w, task.c), FeatureMap(task.h, task.w, task.c),
                      FeatureMap(task.h, task.w, task.c)};
        for (double& v : smp.f_mem.data()) v = normal(rng);
        for (double& v : smp.f_view.data()) v = normal(rng);
        for (std::size_t i = 0; i < task.h; ++i) {
            for (std::size_t j = 0; j < task.w; ++j) {
                const double a_s = sigmoid(task.sharpness * (smp.f_mem(i, j, 0) - smp.f_view(i, j, 0)));
                const double b_s = 1.0 - a_s;
                for (std::size_t k = 0; k < task.c; ++k) {
                    double A = 1.0, B = 1.0;
                    if (task.target == ToyTarget::gated) {
                        A = (1.0 + a_c[k]) * (1.0 + a_s);
                        B = (1.0 + b_c[k]) * (1.0 + b_s);
                    }
                    smp.target(i, j, k) = A * smp.f_mem(i, j, k) + B * smp.f_view(i, j, k);
                }
            }
        }
        data.push_back(std::move(smp));
    }
    return data;
}

struct ToyResult {
    moe::MoeParams params;
    std::vector<double> loss_curve;  // loss before each step, then the final loss
    double mse_moe = 0.0;
    double mse_add = 0.0;
    double mse_mem_only = 0.0;   // best per-channel gain on F_mem alone ("without the other view")
    double mse_view_only = 0.0;  // same for F_view
    bool diverged = false;
    double step_size = 0.0;
};

namespace detail {

inline double mse(const FeatureMap& a, const FeatureMap& b) {
    double acc = 0.0;
    for (std::size_t n = 0; n < a.size(); ++n) {
        const double d = a.data()[n] - b.data()[n];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

inline double single_expert_mse(const std::vector<ToySample>& data, bool use_mem) {
    const std::size_t c = data.front().target.channels();
    std::vector<double> num(c, 0.0), den(c, 0.0);
    for (const auto& s : data) {
        const auto& x = use_mem ? s.f_mem : s.f_view;
        for (std::size_t n = 0; n < x.size(); ++n) {
            num[n % c] += x.data()[n] * s.target.data()[n];
            den[n % c] += x.data()[n] * x.data()[n];
        }
    }
    double acc = 0.0;
    std::size_t count = 0;
    for (const auto& s : data) {
        const auto& x = use_mem ? s.f_mem : s.f_view;
        for (std::size_t n = 0; n < x.size(); ++n) {
            const double g = den[n % c] > 0 ? num[n % c] / den[n % c] : 0.0;
            const double d = g * x.data()[n] - s.target.data()[n];
            acc += d * d;
            ++count;
        }
    }
    return acc / static_cast<double>(count);
}

}  // namespace detail

inline double toy_loss(const std::vector<ToySample>& data, const moe::MoeParams& p) {
    double acc = 0.0;
    for (const auto& s : data) acc += detail::mse(moe::fuse(s.f_mem, s.f_view, p), s.target);
    return acc / static_cast<double>(data.size());
}

/// Full-batch fixed-step gradient descent on the mean squared fusion error.
inline ToyResult train_moe_toy(std::uint64_t seed, const ToyTaskSpec& task) {
    const auto data = make_toy_data(task, seed);
    ToyResult res;
    res.step_size = task.step_size;
    res.params = moe::MoeParams::init_uniform(task.c, task.r, task.s, seed + 0x9e3779b97f4a7c15ULL);
    const double scale = 2.0 / static_cast<double>(data.size() * data.front().target.size());

    for (std::size_t it = 0; it <= task.steps; ++it) {
        double loss = 0.0;
        moe::MoeParams grad_sum = res.params;
        grad_sum.for_each_tensor([](const char*, std::vector<double>& t) { std::fill(t.begin(), t.end(), 0.0); });
        bool blew_up = false;
        for (const auto& s : data) {
            moe::FuseResult fwd;
            try {
                fwd = moe::fuse_forward(s.f_mem, s.f_view, res.params);
            } catch (const std::invalid_argument&) {
                // Intermediate maps reject non-finite values once the weights overflow.
                blew_up = true;
                break;
            }
            FeatureMap d(fwd.fused.height(), fwd.fused.width(), fwd.fused.channels());
            for (std::size_t n = 0; n < d.size(); ++n) {
                const double e = fwd.fused.data()[n] - s.target.data()[n];
                loss += e * e;
                d.data()[n] = scale * e;
            }
            if (it == task.steps) continue;
            moe::MoeGradients g;
            try {
                g = moe::fuse_backward(res.params, fwd.cache, d);
            } catch (const std::invalid_argument&) {
                blew_up = true;
                break;
            }
            std::vector<std::vector<double>*> dst;
            grad_sum.for_each_tensor([&](const char*, std::vector<double>& t) { dst.push_back(&t); });
            std::size_t idx = 0;
            g.params.for_each_tensor([&](const char*, const std::vector<double>& t) {
                auto& out = *dst[idx++];
                for (std::size_t n = 0; n < t.size(); ++n) out[n] += t[n];
            });
        }
        if (blew_up) loss = std::numeric_limits<double>::quiet_NaN();
        loss /= static_cast<double>(data.size() * data.front().target.size());
        res.loss_curve.push_back(loss);
        if (!std::isfinite(loss)) {
            res.diverged = true;
            break;
        }
        if (it == task.steps) break;
        std::vector<std::vector<double>*> grads;
        grad_sum.for_each_tensor([&](const char*, std::vector<double>& t) { grads.push_back(&t); });
        std::size_t idx = 0;
        res.params.for_each_tensor([&](const char*, std::vector<double>& t) {
            const auto& g = *grads[idx++];
            for (std::size_t n = 0; n < t.size(); ++n) t[n] -= task.step_size * g[n];
        });
    }
    res.mse_moe = res.loss_curve.back();
    double add = 0.0;
    for (const auto& s : data) add += detail::mse(lmeec::add(s.f_mem, s.f_view), s.target);
    res.mse_add = add / static_cast<double>(data.size());
    res.mse_mem_only = detail::single_expert_mse(data, true);
    res.mse_view_only = detail::single_expert_mse(data, false);
    return res;
}

}  // namespace lmeec::harness
