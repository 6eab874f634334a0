// Copyright (C) 2026 The lmeec Authors
// SPDX-License-Identifier: Apache-2.0

// Dense h x w x c arrays and the handful of kernels the fusion routers need.
// Layout is row-major with the channel axis innermost: index (i*w + j)*c + k.

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lmeec {

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

namespace detail {

inline std::string dims(std::size_t h, std::size_t w, std::size_t c) {
    return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c);
}

inline void require_finite(std::span<const double> values, const char* what) {
    for (double v : values) {
        if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": non-finite value");
    }
}

}  // namespace detail

class FeatureMap {
public:
    FeatureMap() = default;

    FeatureMap(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
        : h_(h), w_(w), c_(c), data_(h * w * c, fill) {
        if (h == 0 || w == 0 || c == 0) throw ShapeError("FeatureMap: zero dimension " + detail::dims(h, w, c));
    }

    FeatureMap(std::size_t h, std::size_t w, std::size_t c, std::vector<double> data)
        : h_(h), w_(w), c_(c), data_(std::move(data)) {
        if (h == 0 || w == 0 || c == 0) throw ShapeError("FeatureMap: zero dimension " + detail::dims(h, w, c));
        if (data_.size() != h * w * c) {
            throw ShapeError("FeatureMap: " + std::to_string(data_.size()) + " values for " + detail::dims(h, w, c));
        }
        detail::require_finite(data_, "FeatureMap");
    }

    std::size_t height() const { return h_; }
    std::size_t width() const { return w_; }
    std::size_t channels() const { return c_; }
    std::size_t locations() const { return h_ * w_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j, std::size_t k) { return data_[(i * w_ + j) * c_ + k]; }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const { return data_[(i * w_ + j) * c_ + k]; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    /// Channel vector at grid cell (i, j).
    std::span<const double> pixel(std::size_t i, std::size_t j) const {
        return std::span<const double>(data_).subspan((i * w_ + j) * c_, c_);
    }
    std::span<const double> location(std::size_t p) const {
        return std::span<const double>(data_).subspan(p * c_, c_);
    }

    bool same_shape(const FeatureMap& o) const { return h_ == o.h_ && w_ == o.w_ && c_ == o.c_; }
    std::string shape_string() const { return detail::dims(h_, w_, c_); }

    friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

private:
    std::size_t h_ = 0, w_ = 0, c_ = 0;
    std::vector<double> data_;
};

class ChannelVector {
public:
    ChannelVector() = default;
    explicit ChannelVector(std::size_t c, double fill = 0.0) : data_(c, fill) {
        if (c == 0) throw ShapeError("ChannelVector: zero channels");
    }
    explicit ChannelVector(std::vector<double> data) : data_(std::move(data)) {
        if (data_.empty()) throw ShapeError("ChannelVector: zero channels");
        detail::require_finite(data_, "ChannelVector");
    }

    std::size_t size() const { return data_.size(); }
    double& operator[](std::size_t k) { return data_[k]; }
    double operator[](std::size_t k) const { return data_[k]; }
    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    friend bool operator==(const ChannelVector&, const ChannelVector&) = default;

private:
    std::vector<double> data_;
};

class SpatialMap {
public:
    SpatialMap() = default;
    SpatialMap(std::size_t h, std::size_t w, double fill = 0.0) : h_(h), w_(w), data_(h * w, fill) {
        if (h == 0 || w == 0) throw ShapeError("SpatialMap: zero dimension");
    }
    SpatialMap(std::size_t h, std::size_t w, std::vector<double> data) : h_(h), w_(w), data_(std::move(data)) {
        if (h == 0 || w == 0) throw ShapeError("SpatialMap: zero dimension");
        if (data_.size() != h * w) throw ShapeError("SpatialMap: wrong value count");
        detail::require_finite(data_, "SpatialMap");
    }

    std::size_t height() const { return h_; }
    std::size_t width() const { return w_; }
    std::size_t size() const { return data_.size(); }
    double& operator()(std::size_t i, std::size_t j) { return data_[i * w_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * w_ + j]; }
    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    friend bool operator==(const SpatialMap&, const SpatialMap&) = default;

private:
    std::size_t h_ = 0, w_ = 0;
    std::vector<double> data_;
};

/// Fully connected layer, weight stored out x in row-major.
struct Linear {
    std::size_t in = 0, out = 0;
    std::vector<double> weight;
    std::vector<double> bias;

    Linear() = default;
    Linear(std::size_t in_features, std::size_t out_features)
        : in(in_features), out(out_features), weight(in_features * out_features, 0.0), bias(out_features, 0.0) {}

    double& w(std::size_t o, std::size_t i) { return weight[o * in + i]; }
    double w(std::size_t o, std::size_t i) const { return weight[o * in + i]; }

    friend bool operator==(const Linear&, const Linear&) = default;
};

/// 3x3 convolution, stride 1, zero padding 1. Weight layout out x in x 3 x 3.
struct Conv3x3 {
    std::size_t in = 0, out = 0;
    std::vector<double> weight;
    std::vector<double> bias;

    Conv3x3() = default;
    Conv3x3(std::size_t in_channels, std::size_t out_channels)
        : in(in_channels), out(out_channels), weight(out_channels * in_channels * 9, 0.0), bias(out_channels, 0.0) {}

    double& w(std::size_t o, std::size_t i, std::size_t di, std::size_t dj) {
        return weight[((o * in + i) * 3 + di) * 3 + dj];
    }
    double w(std::size_t o, std::size_t i, std::size_t di, std::size_t dj) const {
        return weight[((o * in + i) * 3 + di) * 3 + dj];
    }

    friend bool operator==(const Conv3x3&, const Conv3x3&) = default;
};

// ---------------------------------------------------------------------------
// Forward kernels

inline FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b) {
    if (a.height() != b.height() || a.width() != b.width()) {
        throw ShapeError("concat_channels: spatial mismatch " + a.shape_string() + " vs " + b.shape_string());
    }
    const std::size_t ca = a.channels(), cb = b.channels();
    FeatureMap out(a.height(), a.width(), ca + cb);
    auto dst = out.data();
    auto sa = a.data();
    auto sb = b.data();
    for (std::size_t p = 0; p < a.locations(); ++p) {
        for (std::size_t k = 0; k < ca; ++k) dst[p * (ca + cb) + k] = sa[p * ca + k];
        for (std::size_t k = 0; k < cb; ++k) dst[p * (ca + cb) + ca + k] = sb[p * cb + k];
    }
    return out;
}

inline FeatureMap slice_channels(const FeatureMap& x, std::size_t begin, std::size_t count) {
    if (count == 0 || begin + count > x.channels()) throw ShapeError("slice_channels: range out of bounds");
    FeatureMap out(x.height(), x.width(), count);
    auto dst = out.data();
    auto src = x.data();
    const std::size_t c = x.channels();
    for (std::size_t p = 0; p < x.locations(); ++p) {
        for (std::size_t k = 0; k < count; ++k) dst[p * count + k] = src[p * c + begin + k];
    }
    return out;
}

inline ChannelVector global_avg_pool(const FeatureMap& x) {
    ChannelVector out(x.channels());
    const std::size_t c = x.channels();
    auto src = x.data();
    for (std::size_t p = 0; p < x.locations(); ++p) {
        for (std::size_t k = 0; k < c; ++k) out[k] += src[p * c + k];
    }
    const double inv = 1.0 / static_cast<double>(x.locations());
    for (std::size_t k = 0; k < c; ++k) out[k] *= inv;
    return out;
}

inline ChannelVector linear(const ChannelVector& x, const Linear& layer) {
    if (x.size() != layer.in) {
        throw ShapeError("linear: input width " + std::to_string(x.size()) + " != " + std::to_string(layer.in));
    }
    if (layer.weight.size() != layer.in * layer.out || layer.bias.size() != layer.out) {
        throw ShapeError("linear: malformed layer");
    }
    ChannelVector out(layer.out);
    for (std::size_t o = 0; o < layer.out; ++o) {
        double acc = layer.bias[o];
        for (std::size_t i = 0; i < layer.in; ++i) acc += layer.w(o, i) * x[i];
        out[o] = acc;
    }
    return out;
}

inline FeatureMap conv2d(const FeatureMap& x, const Conv3x3& conv) {
    if (x.channels() != conv.in) {
        throw ShapeError("conv2d: input channels " + std::to_string(x.channels()) + " != " + std::to_string(conv.in));
    }
    if (conv.weight.size() != conv.out * conv.in * 9 || conv.bias.size() != conv.out) {
        throw ShapeError("conv2d: malformed kernel");
    }
    const std::size_t h = x.height(), w = x.width(), cin = conv.in, cout = conv.out;
    FeatureMap out(h, w, cout);
    auto dst = out.data();
    auto src = x.data();
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            double* o_px = &dst[(i * w + j) * cout];
            for (std::size_t o = 0; o < cout; ++o) o_px[o] = conv.bias[o];
            for (std::size_t di = 0; di < 3; ++di) {
                const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + di) - 1;
                if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t dj = 0; dj < 3; ++dj) {
                    const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + dj) - 1;
                    if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) continue;
                    const double* i_px = &src[(static_cast<std::size_t>(ii) * w + static_cast<std::size_t>(jj)) * cin];
                    for (std::size_t o = 0; o < cout; ++o) {
                        const double* k = &conv.weight[(o * cin) * 9 + di * 3 + dj];
                        double acc = 0.0;
                        for (std::size_t c = 0; c < cin; ++c) acc += k[c * 9] * i_px[c];
                        o_px[o] += acc;
                    }
                }
            }
        }
    }
    return out;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }
inline double relu(double v) { return v > 0.0 ? v : 0.0; }

template <typename T>
T relu(T x) {
    for (double& v : x.data()) v = relu(v);
    return x;
}

template <typename T>
T sigmoid(T x) {
    for (double& v : x.data()) v = sigmoid(v);
    return x;
}

inline FeatureMap add(const FeatureMap& a, const FeatureMap& b) {
    if (!a.same_shape(b)) throw ShapeError("add: " + a.shape_string() + " vs " + b.shape_string());
    FeatureMap out = a;
    auto dst = out.data();
    auto src = b.data();
    for (std::size_t n = 0; n < dst.size(); ++n) dst[n] += src[n];
    return out;
}

inline FeatureMap broadcast_mul(const FeatureMap& x, const ChannelVector& w) {
    if (w.size() != x.channels()) {
        throw ShapeError("broadcast_mul: channel vector of " + std::to_string(w.size()) + " for " + x.shape_string());
    }
    FeatureMap out = x;
    auto dst = out.data();
    const std::size_t c = x.channels();
    for (std::size_t n = 0; n < dst.size(); ++n) dst[n] *= w[n % c];
    return out;
}

inline FeatureMap broadcast_mul(const FeatureMap& x, const SpatialMap& w) {
    if (w.height() != x.height() || w.width() != x.width()) {
        throw ShapeError("broadcast_mul: spatial map does not match " + x.shape_string());
    }
    FeatureMap out = x;
    auto dst = out.data();
    const std::size_t c = x.channels();
    for (std::size_t n = 0; n < dst.size(); ++n) dst[n] *= w.data()[n / c];
    return out;
}

inline SpatialMap to_spatial(const FeatureMap& x) {
    if (x.channels() != 1) throw ShapeError("to_spatial: expected one channel, got " + x.shape_string());
    return SpatialMap(x.height(), x.width(), std::vector<double>(x.data().begin(), x.data().end()));
}

inline FeatureMap from_spatial(const SpatialMap& s) {
    return FeatureMap(s.height(), s.width(), 1, std::vector<double>(s.data().begin(), s.data().end()));
}

// ---------------------------------------------------------------------------
// Reverse-mode kernels. Gradient buffers are accumulated into (+=).

/// d_x += W^T d_out; d_weight += d_out x^T; d_bias += d_out.
inline void linear_backward(const ChannelVector& x, const Linear& layer, std::span<const double> d_out,
                            Linear& grad, std::span<double> d_x) {
    for (std::size_t o = 0; o < layer.out; ++o) {
        const double g = d_out[o];
        grad.bias[o] += g;
        for (std::size_t i = 0; i < layer.in; ++i) {
            grad.weight[o * layer.in + i] += g * x[i];
            d_x[i] += layer.w(o, i) * g;
        }
    }
}

inline void conv2d_backward(const FeatureMap& x, const Conv3x3& conv, const FeatureMap& d_out, Conv3x3& grad,
                            FeatureMap& d_x) {
    const std::size_t h = x.height(), w = x.width(), cin = conv.in, cout = conv.out;
    auto src = x.data();
    auto g_out = d_out.data();
    auto g_in = d_x.data();
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            const double* go = &g_out[(i * w + j) * cout];
            for (std::size_t o = 0; o < cout; ++o) grad.bias[o] += go[o];
            for (std::size_t di = 0; di < 3; ++di) {
                const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + di) - 1;
                if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t dj = 0; dj < 3; ++dj) {
                    const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + dj) - 1;
                    if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) continue;
                    const std::size_t base = (static_cast<std::size_t>(ii) * w + static_cast<std::size_t>(jj)) * cin;
                    for (std::size_t o = 0; o < cout; ++o) {
                        const double g = go[o];
                        if (g == 0.0) continue;
                        const std::size_t kbase = (o * cin) * 9 + di * 3 + dj;
                        for (std::size_t c = 0; c < cin; ++c) {
                            grad.weight[kbase + c * 9] += g * src[base + c];
                            g_in[base + c] += conv.weight[kbase + c * 9] * g;
                        }
                    }
                }
            }
        }
    }
}

}  // namespace lmeec
