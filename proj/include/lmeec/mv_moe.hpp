// Copyright (C) 2026 The lmeec Authors
// SPDX-License-Identifier: Apache-2.0

// Memory-view mixture-of-experts fusion.
//
// Two expert features, the memory-aware feature and the view-specific (prompt)
// feature, are recalibrated densely and summed:
//
//   g          = avgpool(concat(F_mem, F_view))                    (2c)
//   w^c_e      = sigmoid(fc2_e(relu(fc1_e(g))))                      e in {mem, view}
//   Fd_e       = (1 + w^c_e) * F_e                                   channel residual
//   w^s_e      = sigmoid(conv_b_e(relu(conv_a_e(concat(Fd_mem, Fd_view)))))
//   Fdd_e      = (1 + w^s_e) * Fd_e                                  spatial residual
//   F_tar      = Fdd_mem + Fdd_view
//
// The spatial residual uses the spatial weights w^s.

#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lmeec/numerics.hpp"

namespace lmeec::moe {

/// Squeeze-and-excitation style default: c/2 with a floor of 4.
inline std::size_t default_hidden(std::size_t c) { return std::max<std::size_t>(4, c / 2); }

struct ChannelRouter {
    Linear fc1;  // 2c -> r
    Linear fc2;  // r -> c
    friend bool operator==(const ChannelRouter&, const ChannelRouter&) = default;
};

struct SpatialRouter {
    Conv3x3 conv_a;  // 2c -> s
    Conv3x3 conv_b;  // s -> 1
    friend bool operator==(const SpatialRouter&, const SpatialRouter&) = default;
};

struct MoeParams {
    std::size_t c = 0, r = 0, s = 0;
    ChannelRouter mlp1, mlp2;   // mem, view
    SpatialRouter conv1, conv2; // mem, view

    static MoeParams zeros(std::size_t c, std::size_t r, std::size_t s) {
        if (c == 0 || r == 0 || s == 0) throw ShapeError("MoeParams: c, r, s must be >= 1");
        MoeParams p;
        p.c = c;
        p.r = r;
        p.s = s;
        for (ChannelRouter* m : {&p.mlp1, &p.mlp2}) {
            m->fc1 = Linear(2 * c, r);
            m->fc2 = Linear(r, c);
        }
        for (SpatialRouter* b : {&p.conv1, &p.conv2}) {
            b->conv_a = Conv3x3(2 * c, s);
            b->conv_b = Conv3x3(s, 1);
        }
        return p;
    }

    static MoeParams zeros(std::size_t c) { return zeros(c, default_hidden(c), default_hidden(c)); }

    /// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
    static MoeParams init_uniform(std::size_t c, std::size_t r, std::size_t s, std::uint64_t seed) {
        MoeParams p = zeros(c, r, s);
        std::mt19937_64 rng(seed);
        auto fill = [&rng](std::vector<double>& wts, std::size_t fan_in) {
            const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
            std::uniform_real_distribution<double> dist(-a, a);
            for (double& v : wts) v = dist(rng);
        };
        for (ChannelRouter* m : {&p.mlp1, &p.mlp2}) {
            fill(m->fc1.weight, m->fc1.in);
            fill(m->fc2.weight, m->fc2.in);
        }
        for (SpatialRouter* b : {&p.conv1, &p.conv2}) {
            fill(b->conv_a.weight, b->conv_a.in * 9);
            fill(b->conv_b.weight, b->conv_b.in * 9);
        }
        return p;
    }

    /// Visits every parameter tensor in serialization order:
    /// mlp1, mlp2, conv1, conv2, each layer weights-then-bias.
    template <typename Self, typename Fn>
    static void visit(Self& self, Fn&& fn) {
        auto& m1 = self.mlp1;
        auto& m2 = self.mlp2;
        fn("mlp1.fc1.weight", m1.fc1.weight);
        fn("mlp1.fc1.bias", m1.fc1.bias);
        fn("mlp1.fc2.weight", m1.fc2.weight);
        fn("mlp1.fc2.bias", m1.fc2.bias);
        fn("mlp2.fc1.weight", m2.fc1.weight);
        fn("mlp2.fc1.bias", m2.fc1.bias);
        fn("mlp2.fc2.weight", m2.fc2.weight);
        fn("mlp2.fc2.bias", m2.fc2.bias);
        auto& c1 = self.conv1;
        auto& c2 = self.conv2;
        fn("conv1.a.weight", c1.conv_a.weight);
        fn("conv1.a.bias", c1.conv_a.bias);
        fn("conv1.b.weight", c1.conv_b.weight);
        fn("conv1.b.bias", c1.conv_b.bias);
        fn("conv2.a.weight", c2.conv_a.weight);
        fn("conv2.a.bias", c2.conv_a.bias);
        fn("conv2.b.weight", c2.conv_b.weight);
        fn("conv2.b.bias", c2.conv_b.bias);
    }
    template <typename Fn>
    void for_each_tensor(Fn&& fn) { visit(*this, std::forward<Fn>(fn)); }
    template <typename Fn>
    void for_each_tensor(Fn&& fn) const { visit(*this, std::forward<Fn>(fn)); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for_each_tensor([&n](const char*, const std::vector<double>& t) { n += t.size(); });
        return n;
    }

    /// FNV-1a over the bit patterns of every parameter; ties a cache to the params it was built from.
    std::uint64_t fingerprint() const {
        std::uint64_t hsh = 1469598103934665603ULL;
        auto mix = [&hsh](std::uint64_t v) {
            for (int b = 0; b < 8; ++b) {
                hsh ^= (v >> (8 * b)) & 0xffU;
                hsh *= 1099511628211ULL;
            }
        };
        mix(c);
        mix(r);
        mix(s);
        for_each_tensor([&mix](const char*, const std::vector<double>& t) {
            for (double v : t) mix(std::bit_cast<std::uint64_t>(v));
        });
        return hsh;
    }

    /// Parameters for the exchanged problem fuse(F_view, F_mem): the mem and view routers trade
    /// places and their first layers trade input halves, since both read concat(F_mem, F_view).
    MoeParams swapped() const {
        MoeParams p = *this;
        std::swap(p.mlp1, p.mlp2);
        std::swap(p.conv1, p.conv2);
        for (ChannelRouter* m : {&p.mlp1, &p.mlp2}) {
            for (std::size_t o = 0; o < m->fc1.out; ++o) {
                for (std::size_t k = 0; k < c; ++k) std::swap(m->fc1.w(o, k), m->fc1.w(o, k + c));
            }
        }
        for (SpatialRouter* b : {&p.conv1, &p.conv2}) {
            for (std::size_t o = 0; o < b->conv_a.out; ++o) {
                for (std::size_t k = 0; k < c; ++k) {
                    for (std::size_t di = 0; di < 3; ++di) {
                        for (std::size_t dj = 0; dj < 3; ++dj) {
                            std::swap(b->conv_a.w(o, k, di, dj), b->conv_a.w(o, k + c, di, dj));
                        }
                    }
                }
            }
        }
        return p;
    }

    void validate() const {
        if (c == 0 || r == 0 || s == 0) throw ShapeError("MoeParams: c, r, s must be >= 1");
        for (const ChannelRouter* m : {&mlp1, &mlp2}) {
            if (m->fc1.in != 2 * c || m->fc1.out != r || m->fc2.in != r || m->fc2.out != c) {
                throw ShapeError("MoeParams: channel router sized inconsistently");
            }
        }
        for (const SpatialRouter* b : {&conv1, &conv2}) {
            if (b->conv_a.in != 2 * c || b->conv_a.out != s || b->conv_b.in != s || b->conv_b.out != 1) {
                throw ShapeError("MoeParams: spatial router sized inconsistently");
            }
        }
        for_each_tensor([](const char* name, const std::vector<double>& t) {
            detail::require_finite(t, name);
        });
    }

    friend bool operator==(const MoeParams&, const MoeParams&) = default;
};

struct MoeGradients {
    MoeParams params;  // same shapes as the parameters, holding dL/dtheta
    FeatureMap d_mem;
    FeatureMap d_view;
};

namespace detail {

struct ChannelRouterTrace {
    ChannelVector z1, a1, z2, w;  // pre-activation, hidden, logits, gate
};

struct SpatialRouterTrace {
    FeatureMap u, v, q;  // conv_a output, relu(u), conv_b output
    SpatialMap w;
};

inline ChannelRouterTrace run_channel_router(const ChannelVector& g, const ChannelRouter& m) {
    ChannelRouterTrace t;
    t.z1 = linear(g, m.fc1);
    t.a1 = relu(t.z1);
    t.z2 = linear(t.a1, m.fc2);
    t.w = sigmoid(t.z2);
    return t;
}

inline SpatialRouterTrace run_spatial_router(const FeatureMap& y, const SpatialRouter& b) {
    SpatialRouterTrace t;
    t.u = conv2d(y, b.conv_a);
    t.v = relu(t.u);
    t.q = conv2d(t.v, b.conv_b);
    t.w = to_spatial(sigmoid(t.q));
    return t;
}

inline void check_pair(const FeatureMap& a, const FeatureMap& b, const MoeParams& p, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": expert shapes differ " + a.shape_string() + " vs " + b.shape_string());
    }
    if (a.channels() != p.c) {
        throw ShapeError(std::string(op) + ": params sized for c=" + std::to_string(p.c) + ", features have c=" +
                         std::to_string(a.channels()));
    }
}

}  // namespace detail

/// Channel-wise routing weights (w^c_mem, w^c_view), each in (0,1)^c.
inline std::pair<ChannelVector, ChannelVector> channel_route(const FeatureMap& f_mem, const FeatureMap& f_view,
                                                             const MoeParams& p) {
    detail::check_pair(f_mem, f_view, p, "channel_route");
    const ChannelVector g = global_avg_pool(concat_channels(f_mem, f_view));
    return {detail::run_channel_router(g, p.mlp1).w, detail::run_channel_router(g, p.mlp2).w};
}

/// out = w ⊗ F + F
inline FeatureMap channel_modulate(const FeatureMap& f, const ChannelVector& w) {
    if (w.size() != f.channels()) throw ShapeError("channel_modulate: weight width does not match " + f.shape_string());
    FeatureMap out = f;
    auto dst = out.data();
    const std::size_t c = f.channels();
    for (std::size_t n = 0; n < dst.size(); ++n) dst[n] = (1.0 + w[n % c]) * dst[n];
    return out;
}

/// Spatial routing maps (w^s_mem, w^s_view), each in (0,1)^{h x w}.
inline std::pair<SpatialMap, SpatialMap> spatial_route(const FeatureMap& fd_mem, const FeatureMap& fd_view,
                                                       const MoeParams& p) {
    detail::check_pair(fd_mem, fd_view, p, "spatial_route");
    const FeatureMap y = concat_channels(fd_mem, fd_view);
    return {detail::run_spatial_router(y, p.conv1).w, detail::run_spatial_router(y, p.conv2).w};
}

inline FeatureMap spatial_modulate(const FeatureMap& fd, const SpatialMap& w) {
    if (w.height() != fd.height() || w.width() != fd.width()) {
        throw ShapeError("spatial_modulate: map does not match " + fd.shape_string());
    }
    FeatureMap out = fd;
    auto dst = out.data();
    const std::size_t c = fd.channels();
    for (std::size_t n = 0; n < dst.size(); ++n) dst[n] = (1.0 + w.data()[n / c]) * dst[n];
    return out;
}

/// Everything fuse_backward needs, captured at forward time.
struct FuseCache {
    std::uint64_t params_fingerprint = 0;
    bool valid = false;
    FeatureMap f_mem, f_view;
    ChannelVector pooled;
    detail::ChannelRouterTrace ch_mem, ch_view;
    FeatureMap fd_mem, fd_view, y;
    detail::SpatialRouterTrace sp_mem, sp_view;
};

struct FuseResult {
    FeatureMap fused;
    FuseCache cache;
};

inline FuseResult fuse_forward(const FeatureMap& f_mem, const FeatureMap& f_view, const MoeParams& p) {
    detail::check_pair(f_mem, f_view, p, "fuse");
    FuseResult res;
    FuseCache& k = res.cache;
    k.f_mem = f_mem;
    k.f_view = f_view;
    k.pooled = global_avg_pool(concat_channels(f_mem, f_view));
    k.ch_mem = detail::run_channel_router(k.pooled, p.mlp1);
    k.ch_view = detail::run_channel_router(k.pooled, p.mlp2);
    k.fd_mem = channel_modulate(f_mem, k.ch_mem.w);
    k.fd_view = channel_modulate(f_view, k.ch_view.w);
    k.y = concat_channels(k.fd_mem, k.fd_view);
    k.sp_mem = detail::run_spatial_router(k.y, p.conv1);
    k.sp_view = detail::run_spatial_router(k.y, p.conv2);
    res.fused = add(spatial_modulate(k.fd_mem, k.sp_mem.w), spatial_modulate(k.fd_view, k.sp_view.w));
    k.params_fingerprint = p.fingerprint();
    k.valid = true;
    return res;
}

inline FeatureMap fuse(const FeatureMap& f_mem, const FeatureMap& f_view, const MoeParams& p) {
    const auto [wc_mem, wc_view] = channel_route(f_mem, f_view, p);
    const FeatureMap fd_mem = channel_modulate(f_mem, wc_mem);
    const FeatureMap fd_view = channel_modulate(f_view, wc_view);
    const auto [ws_mem, ws_view] = spatial_route(fd_mem, fd_view, p);
    return add(spatial_modulate(fd_mem, ws_mem), spatial_modulate(fd_view, ws_view));
}

namespace detail {

inline MoeParams zeros_like(const MoeParams& p) {
    MoeParams g = p;
    g.for_each_tensor([](const char*, std::vector<double>& t) { std::fill(t.begin(), t.end(), 0.0); });
    return g;
}

// Backward through sigmoid(conv_b(relu(conv_a(y)))) given dL/dw; accumulates into d_y.
inline void spatial_router_backward(const FeatureMap& y, const SpatialRouter& b, const SpatialRouterTrace& t,
                                    const SpatialMap& d_w, SpatialRouter& grad, FeatureMap& d_y) {
    FeatureMap d_q(y.height(), y.width(), 1);
    for (std::size_t n = 0; n < d_q.size(); ++n) {
        const double s = t.w.data()[n];
        d_q.data()[n] = d_w.data()[n] * s * (1.0 - s);
    }
    FeatureMap d_v(t.v.height(), t.v.width(), t.v.channels());
    conv2d_backward(t.v, b.conv_b, d_q, grad.conv_b, d_v);
    for (std::size_t n = 0; n < d_v.size(); ++n) {
        if (!(t.u.data()[n] > 0.0)) d_v.data()[n] = 0.0;
    }
    conv2d_backward(y, b.conv_a, d_v, grad.conv_a, d_y);
}

// Backward through sigmoid(fc2(relu(fc1(g)))) given dL/dw; accumulates into d_g.
inline void channel_router_backward(const ChannelVector& g, const ChannelRouter& m, const ChannelRouterTrace& t,
                                    const std::vector<double>& d_w, ChannelRouter& grad, std::vector<double>& d_g) {
    std::vector<double> d_z2(d_w.size());
    for (std::size_t k = 0; k < d_w.size(); ++k) d_z2[k] = d_w[k] * t.w[k] * (1.0 - t.w[k]);
    std::vector<double> d_a1(t.a1.size(), 0.0);
    linear_backward(t.a1, m.fc2, d_z2, grad.fc2, d_a1);
    for (std::size_t k = 0; k < d_a1.size(); ++k) {
        if (!(t.z1[k] > 0.0)) d_a1[k] = 0.0;
    }
    linear_backward(g, m.fc1, d_a1, grad.fc1, d_g);
}

}  // namespace detail

/// Reverse pass for L = <d_fused, F_tar>. `p` must be the parameters the cache was built with.
inline MoeGradients fuse_backward(const MoeParams& p, const FuseCache& k, const FeatureMap& d_fused) {
    if (!k.valid) throw std::invalid_argument("fuse_backward: empty cache");
    if (k.params_fingerprint != p.fingerprint()) {
        throw std::invalid_argument("fuse_backward: cache was produced with different parameters (stale cache)");
    }
    if (!d_fused.same_shape(k.f_mem)) {
        throw ShapeError("fuse_backward: upstream gradient " + d_fused.shape_string() + " does not match " +
                         k.f_mem.shape_string());
    }
    const std::size_t h = k.f_mem.height(), w = k.f_mem.width(), c = k.f_mem.channels();
    const std::size_t P = h * w;
    auto G = d_fused.data();

    MoeGradients out;
    out.params = detail::zeros_like(p);

    // Spatial residual: Fdd_e = (1 + ws_e) * Fd_e.
    FeatureMap d_fd_mem(h, w, c), d_fd_view(h, w, c);
    SpatialMap d_ws_mem(h, w), d_ws_view(h, w);
    for (std::size_t q = 0; q < P; ++q) {
        const double wm = k.sp_mem.w.data()[q], wv = k.sp_view.w.data()[q];
        double am = 0.0, av = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t n = q * c + ch;
            d_fd_mem.data()[n] = (1.0 + wm) * G[n];
            d_fd_view.data()[n] = (1.0 + wv) * G[n];
            am += G[n] * k.fd_mem.data()[n];
            av += G[n] * k.fd_view.data()[n];
        }
        d_ws_mem.data()[q] = am;
        d_ws_view.data()[q] = av;
    }

    // Spatial routers read y = concat(Fd_mem, Fd_view).
    FeatureMap d_y(h, w, 2 * c);
    detail::spatial_router_backward(k.y, p.conv1, k.sp_mem, d_ws_mem, out.params.conv1, d_y);
    detail::spatial_router_backward(k.y, p.conv2, k.sp_view, d_ws_view, out.params.conv2, d_y);
    for (std::size_t q = 0; q < P; ++q) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            d_fd_mem.data()[q * c + ch] += d_y.data()[q * 2 * c + ch];
            d_fd_view.data()[q * c + ch] += d_y.data()[q * 2 * c + c + ch];
        }
    }

    // Channel residual: Fd_e = (1 + wc_e) * F_e.
    out.d_mem = FeatureMap(h, w, c);
    out.d_view = FeatureMap(h, w, c);
    std::vector<double> d_wc_mem(c, 0.0), d_wc_view(c, 0.0);
    for (std::size_t n = 0; n < P * c; ++n) {
        const std::size_t ch = n % c;
        d_wc_mem[ch] += d_fd_mem.data()[n] * k.f_mem.data()[n];
        d_wc_view[ch] += d_fd_view.data()[n] * k.f_view.data()[n];
        out.d_mem.data()[n] = (1.0 + k.ch_mem.w[ch]) * d_fd_mem.data()[n];
        out.d_view.data()[n] = (1.0 + k.ch_view.w[ch]) * d_fd_view.data()[n];
    }

    std::vector<double> d_g(2 * c, 0.0);
    detail::channel_router_backward(k.pooled, p.mlp1, k.ch_mem, d_wc_mem, out.params.mlp1, d_g);
    detail::channel_router_backward(k.pooled, p.mlp2, k.ch_view, d_wc_view, out.params.mlp2, d_g);

    // Average pool spreads d_g uniformly over all locations.
    const double inv = 1.0 / static_cast<double>(P);
    for (std::size_t q = 0; q < P; ++q) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            out.d_mem.data()[q * c + ch] += d_g[ch] * inv;
            out.d_view.data()[q * c + ch] += d_g[c + ch] * inv;
        }
    }
    return out;
}

}  // namespace lmeec::moe
