// Copyright (C) 2026 The lmeec Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include "catch_amalgamated.hpp"
#include "lmeec/numerics.hpp"
#include "support.hpp"

using namespace lmeec;
using Catch::Matchers::WithinAbs;

namespace {

Linear random_linear(std::mt19937_64& rng, std::size_t in, std::size_t out) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Linear l(in, out);
    for (double& v : l.weight) v = normal(rng);
    for (double& v : l.bias) v = normal(rng);
    return l;
}

Conv3x3 random_conv(std::mt19937_64& rng, std::size_t in, std::size_t out) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Conv3x3 c(in, out);
    for (double& v : c.weight) v = normal(rng);
    for (double& v : c.bias) v = normal(rng);
    return c;
}

// Direct six-loop cross-correlation with explicit bounds checks for the zero padding.
FeatureMap naive_conv(const FeatureMap& x, const Conv3x3& k) {
    const long h = static_cast<long>(x.height()), w = static_cast<long>(x.width());
    FeatureMap out(x.height(), x.width(), k.out);
    for (long i = 0; i < h; ++i) {
        for (long j = 0; j < w; ++j) {
            for (std::size_t o = 0; o < k.out; ++o) {
                double acc = k.bias[o];
                for (std::size_t c = 0; c < k.in; ++c) {
                    for (long di = -1; di <= 1; ++di) {
                        for (long dj = -1; dj <= 1; ++dj) {
                            const long ii = i + di, jj = j + dj;
                            if (ii < 0 || jj < 0 || ii >= h || jj >= w) continue;
                            acc += k.weight[((o * k.in + c) * 3 + static_cast<std::size_t>(di + 1)) * 3 +
                                            static_cast<std::size_t>(dj + 1)] *
                                   x.data()[(static_cast<std::size_t>(ii) * x.width() + static_cast<std::size_t>(jj)) *
                                                x.channels() +
                                            c];
                        }
                    }
                }
                out(static_cast<std::size_t>(i), static_cast<std::size_t>(j), o) = acc;
            }
        }
    }
    return out;
}

}  // namespace

TEST_CASE("FeatureMap rejects invalid shapes and non-finite data") {
    CHECK_THROWS_AS(FeatureMap(0, 1, 1), ShapeError);
    CHECK_THROWS_AS(FeatureMap(1, 1, 0), ShapeError);
    CHECK_THROWS_AS(FeatureMap(1, 1, 2, std::vector<double>{1.0}), ShapeError);
    CHECK_THROWS_AS(FeatureMap(1, 1, 1, std::vector<double>{NAN}), std::invalid_argument);
    CHECK_THROWS_AS(ChannelVector(std::vector<double>{INFINITY}), std::invalid_argument);
    CHECK_THROWS_AS(SpatialMap(2, 2, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("FeatureMap layout is row-major, channel-innermost") {
    FeatureMap m(2, 3, 4);
    m(1, 2, 3) = 7.0;
    CHECK(m.data()[(1 * 3 + 2) * 4 + 3] == 7.0);
    CHECK(m.location(5)[3] == 7.0);
}

TEST_CASE("concat_channels") {
    SECTION("small example") {
        FeatureMap a(1, 1, 2, {1.0, 2.0});
        FeatureMap b(1, 1, 1, {5.0});
        const auto c = concat_channels(a, b);
        REQUIRE(c.channels() == 3);
        CHECK(c(0, 0, 0) == 1.0);
        CHECK(c(0, 0, 1) == 2.0);
        CHECK(c(0, 0, 2) == 5.0);
    }
    SECTION("concat then slice round-trips both inputs") {
        std::mt19937_64 rng(1);
        const auto a = test::random_map(rng, 3, 4, 2);
        const auto b = test::random_map(rng, 3, 4, 5);
        const auto c = concat_channels(a, b);
        CHECK(slice_channels(c, 0, 2) == a);
        CHECK(slice_channels(c, 2, 5) == b);
        CHECK(slice_channels(concat_channels(a, FeatureMap(3, 4, 3)), 0, 2) == a);
    }
    SECTION("index arithmetic oracle") {
        std::mt19937_64 rng(2);
        const auto a = test::random_map(rng, 3, 3, 4);
        const auto b = test::random_map(rng, 3, 3, 4);
        const auto c = concat_channels(a, b);
        for (std::size_t n = 0; n < c.size(); ++n) {
            const std::size_t p = n / 8, k = n % 8;
            const double expect = k < 4 ? a.data()[p * 4 + k] : b.data()[p * 4 + (k - 4)];
            CHECK(c.data()[n] == expect);
        }
    }
    SECTION("mismatched grids are rejected") {
        CHECK_THROWS_AS(concat_channels(FeatureMap(2, 2, 1), FeatureMap(2, 3, 1)), ShapeError);
        CHECK_THROWS_AS(slice_channels(FeatureMap(2, 2, 3), 2, 2), ShapeError);
    }
}

TEST_CASE("global_avg_pool") {
    CHECK(global_avg_pool(FeatureMap(3, 2, 2, 4.5))[1] == 4.5);
    CHECK(global_avg_pool(FeatureMap(2, 1, 1, {0.0, 2.0}))[0] == 1.0);

    std::mt19937_64 rng(3);
    const auto x = test::random_map(rng, 4, 4, 3);
    const auto g = global_avg_pool(x);
    for (std::size_t k = 0; k < 3; ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
            for (std::size_t j = 0; j < 4; ++j) acc += x(i, j, k);
        }
        CHECK_THAT(g[k], WithinAbs(acc / 16.0, 1e-12));
    }

    SECTION("linearity") {
        const auto y = test::random_map(rng, 4, 4, 3);
        const double alpha = 0.7, beta = -1.3;
        FeatureMap mix(4, 4, 3);
        for (std::size_t n = 0; n < mix.size(); ++n) mix.data()[n] = alpha * x.data()[n] + beta * y.data()[n];
        const auto gm = global_avg_pool(mix), gy = global_avg_pool(y);
        for (std::size_t k = 0; k < 3; ++k) CHECK_THAT(gm[k], WithinAbs(alpha * g[k] + beta * gy[k], 1e-10));
    }
}

TEST_CASE("linear") {
    Linear id(3, 3);
    for (std::size_t k = 0; k < 3; ++k) id.w(k, k) = 1.0;
    const ChannelVector x(std::vector<double>{0.5, -2.0, 3.0});
    CHECK(linear(x, id) == x);

    Linear z(3, 1);
    z.bias[0] = 0.3;
    CHECK(linear(x, z)[0] == 0.3);

    std::mt19937_64 rng(4);
    const auto l = random_linear(rng, 3, 2);
    const auto y = linear(x, l);
    for (std::size_t o = 0; o < 2; ++o) {
        const double dot = l.weight[o * 3] * 0.5 + l.weight[o * 3 + 1] * -2.0 + l.weight[o * 3 + 2] * 3.0 + l.bias[o];
        CHECK_THAT(y[o], WithinAbs(dot, 1e-12));
    }
    CHECK_THROWS_AS(linear(ChannelVector(2), l), ShapeError);
}

TEST_CASE("conv2d") {
    std::mt19937_64 rng(5);
    SECTION("delta kernel is the identity") {
        Conv3x3 delta(1, 1);
        delta.w(0, 0, 1, 1) = 1.0;
        for (int trial = 0; trial < 5; ++trial) {
            const auto x = test::random_map(rng, 4 + static_cast<std::size_t>(trial), 3, 1);
            CHECK(conv2d(x, delta) == x);
        }
    }
    SECTION("zero kernel with bias gives a constant map") {
        Conv3x3 k(2, 1);
        k.bias[0] = 0.7;
        const auto out = conv2d(test::random_map(rng, 3, 3, 2), k);
        for (double v : out.data()) CHECK(v == 0.7);
    }
    SECTION("naive six-loop oracle") {
        const auto x = test::random_map(rng, 5, 5, 2);
        const auto k = random_conv(rng, 2, 3);
        const auto a = conv2d(x, k), b = naive_conv(x, k);
        REQUIRE(a.same_shape(b));
        for (std::size_t n = 0; n < a.size(); ++n) CHECK_THAT(a.data()[n], WithinAbs(b.data()[n], 1e-10));
    }
    SECTION("channel mismatch") {
        CHECK_THROWS_AS(conv2d(FeatureMap(3, 3, 2), Conv3x3(3, 1)), ShapeError);
    }
}

TEST_CASE("pointwise activations and broadcasting") {
    CHECK(sigmoid(0.0) == 0.5);
    CHECK(relu(-3.0) == 0.0);
    CHECK(relu(3.0) == 3.0);

    std::mt19937_64 rng(6);
    const auto x = test::random_map(rng, 4, 4, 3, 4.0);
    const auto sx = sigmoid(x), rx = relu(x);
    for (double v : sx.data()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    for (double v : rx.data()) CHECK(v >= 0.0);

    SECTION("channel broadcast") {
        const auto m = test::random_map(rng, 2, 2, 2);
        const auto out = broadcast_mul(m, ChannelVector(std::vector<double>{1.0, 0.0}));
        for (std::size_t p = 0; p < 4; ++p) {
            CHECK(out.location(p)[0] == m.location(p)[0]);
            CHECK(out.location(p)[1] == 0.0);
        }
    }
    SECTION("spatial broadcast") {
        const auto m = test::random_map(rng, 2, 3, 2);
        SpatialMap s(2, 3);
        s(1, 2) = 2.0;
        const auto out = broadcast_mul(m, s);
        for (std::size_t i = 0; i < 2; ++i) {
            for (std::size_t j = 0; j < 3; ++j) {
                for (std::size_t k = 0; k < 2; ++k) CHECK(out(i, j, k) == m(i, j, k) * s(i, j));
            }
        }
    }
    SECTION("incompatible shapes") {
        CHECK_THROWS_AS(broadcast_mul(FeatureMap(2, 2, 2), ChannelVector(3)), ShapeError);
        CHECK_THROWS_AS(broadcast_mul(FeatureMap(2, 2, 2), SpatialMap(2, 3)), ShapeError);
        CHECK_THROWS_AS(add(FeatureMap(2, 2, 2), FeatureMap(2, 2, 1)), ShapeError);
    }
}

TEST_CASE("kernels are deterministic") {
    std::mt19937_64 rng(7);
    const auto x = test::random_map(rng, 6, 5, 3);
    const auto k = random_conv(rng, 3, 2);
    const auto a = conv2d(x, k), b = conv2d(x, k);
    CHECK(a == b);
}
