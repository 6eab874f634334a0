// Copyright (C) 2026 The lmeec Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "catch_amalgamated.hpp"
#include "lmeec/memory.hpp"

using namespace lmeec;
using namespace lmeec::memory;

namespace {

std::vector<double> constant_frame(std::size_t P, std::size_t C, double v) { return std::vector<double>(P * C, v); }

std::vector<double> random_frame(std::mt19937_64& rng, std::size_t P, std::size_t C) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> f(P * C);
    for (double& v : f) v = normal(rng);
    return f;
}

std::vector<double> zeros_labels(std::size_t P) { return std::vector<double>(P, 0.0); }

std::vector<CompressionPolicy> every_policy() {
    return {CompressionPolicy::ours(), CompressionPolicy::fifo(), CompressionPolicy::fifo(true),
            CompressionPolicy::cluster(3), CompressionPolicy::iou_select(0.5), CompressionPolicy::iou_select(0.5, true)};
}

std::vector<std::uint32_t> first_ts(const MemoryBank& b, std::size_t p = 0) {
    std::vector<std::uint32_t> out;
    for (const auto& e : b.slot(p)) out.push_back(e.first_t);
    return out;
}

// Exhaustive reference: Euclidean distance of every adjacent pair in extended precision, first minimum wins.
std::size_t brute_force_pair(const std::vector<MemoryEntry>& seq) {
    std::size_t best = 0;
    long double best_d = 0;
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
        long double acc = 0;
        for (std::size_t k = 0; k < seq[t].feature.size(); ++k) {
            const long double d = static_cast<long double>(seq[t].feature[k]) - seq[t + 1].feature[k];
            acc += d * d;
        }
        const long double dist = std::sqrt(acc);
        if (t == 0 || dist < best_d) {
            best_d = dist;
            best = t;
        }
    }
    return best;
}

}  // namespace

TEST_CASE("append keeps M entries per location") {
    for (const auto& pol : every_policy()) {
        MemoryBank b(View::ego, 2, 2, 3, 6);
        std::mt19937_64 rng(1);
        for (std::uint32_t t = 1; t <= 7; ++t) b.append(random_frame(rng, 4, 3), zeros_labels(4), t, pol, 1.0);
        for (std::size_t p = 0; p < 4; ++p) CHECK(b.slot(p).size() == 6);
        b.check_invariants();
    }
}

TEST_CASE("fifo evicts the oldest frame") {
    MemoryBank b(View::exo, 1, 2, 1, 3);
    for (std::uint32_t t = 1; t <= 4; ++t) b.append(constant_frame(2, 1, t), zeros_labels(2), t, CompressionPolicy::fifo());
    CHECK(first_ts(b) == std::vector<std::uint32_t>{2, 3, 4});
    CHECK(first_ts(b, 1) == std::vector<std::uint32_t>{2, 3, 4});
}

TEST_CASE("pinned fifo keeps the initial frame") {
    MemoryBank b(View::exo, 1, 1, 1, 3);
    for (std::uint32_t t = 1; t <= 6; ++t) {
        b.append(constant_frame(1, 1, t), zeros_labels(1), t, CompressionPolicy::fifo(true));
    }
    CHECK(first_ts(b) == std::vector<std::uint32_t>{1, 5, 6});
}

TEST_CASE("iou_select gates admission on a full bank") {
    MemoryBank b(View::exo, 1, 2, 1, 3);
    const auto pol = CompressionPolicy::iou_select(0.5);
    for (std::uint32_t t = 1; t <= 3; ++t) CHECK(b.append(constant_frame(2, 1, t), zeros_labels(2), t, pol, 0.9));
    const MemoryBank before = b;
    CHECK_FALSE(b.append(constant_frame(2, 1, 9), zeros_labels(2), 4, pol, 0.3));
    CHECK(b == before);
    CHECK_FALSE(b.append(constant_frame(2, 1, 9), zeros_labels(2), 5, pol, std::nullopt));
    CHECK(b == before);
    CHECK(b.append(constant_frame(2, 1, 9), zeros_labels(2), 6, pol, 0.5));
    CHECK(first_ts(b) == std::vector<std::uint32_t>{2, 3, 6});
    // Rejected frames are still validated.
    CHECK_THROWS_AS(b.append(constant_frame(2, 1, 9), zeros_labels(2), 6, pol, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(b.append(constant_frame(3, 1, 9), zeros_labels(2), 7, pol, 0.1), std::invalid_argument);
}

TEST_CASE("append rejects bad input") {
    MemoryBank b(View::ego, 2, 2, 2, 3);
    const auto pol = CompressionPolicy::ours();
    CHECK_THROWS_AS(b.append(constant_frame(4, 3, 0), zeros_labels(4), 1, pol), std::invalid_argument);
    CHECK_THROWS_AS(b.append(constant_frame(4, 2, 0), zeros_labels(3), 1, pol), std::invalid_argument);
    CHECK_THROWS_AS(b.append(constant_frame(4, 2, 0), std::vector<double>(4, 1.5), 1, pol), std::invalid_argument);
    CHECK_THROWS_AS(b.append(constant_frame(4, 2, NAN), zeros_labels(4), 1, pol), std::invalid_argument);
    b.append(constant_frame(4, 2, 0), zeros_labels(4), 5, pol);
    CHECK_THROWS_AS(b.append(constant_frame(4, 2, 0), zeros_labels(4), 5, pol), std::invalid_argument);
    CHECK_THROWS_AS(b.append(constant_frame(4, 2, 0), zeros_labels(4), 4, pol), std::invalid_argument);
    CHECK_THROWS_AS(MemoryBank(View::ego, 2, 2, 2, 0), std::invalid_argument);
    CHECK_THROWS_AS(CompressionPolicy::iou_select(1.5).validate(), std::invalid_argument);
    CHECK(b.length() == 1);
}

TEST_CASE("compress_once examples") {
    SECTION("identical frames merge the first pair, value unchanged") {
        MemoryBank b(View::ego, 1, 2, 2, 3);
        for (std::uint32_t t = 1; t <= 4; ++t) b.push_frame(constant_frame(2, 2, 0.25), zeros_labels(2), t);
        compress_once(b);
        for (std::size_t p = 0; p < 2; ++p) {
            REQUIRE(b.slot(p).size() == 3);
            CHECK(b.slot(p)[0].first_t == 1);
            CHECK(b.slot(p)[0].last_t == 2);
            for (const auto& e : b.slot(p)) CHECK(e.feature == std::vector<double>{0.25, 0.25});
        }
    }
    SECTION("hand-computed single location") {
        MemoryBank b(View::ego, 1, 1, 1, 3);
        const double vals[] = {0.0, 0.1, 0.5, 0.51};
        for (std::uint32_t t = 1; t <= 4; ++t) b.push_frame(std::vector<double>{vals[t - 1]}, zeros_labels(1), t);
        CHECK(redundant_pair(b.slot(0)) == 2);
        compress_once(b);
        const auto& s = b.slot(0);
        REQUIRE(s.size() == 3);
        CHECK(s[0].feature[0] == 0.0);
        CHECK(s[1].feature[0] == 0.1);
        CHECK(s[2].feature[0] == Catch::Approx(0.505).margin(1e-15));
        CHECK(s[2].first_t == 3);
        CHECK(s[2].last_t == 4);
    }
    SECTION("labels and spans merge with the features") {
        MemoryBank b(View::ego, 1, 1, 1, 2);
        b.push_frame(std::vector<double>{0.0}, std::vector<double>{0.0}, 1);
        b.push_frame(std::vector<double>{5.0}, std::vector<double>{1.0}, 2);
        b.push_frame(std::vector<double>{5.5}, std::vector<double>{0.5}, 7);
        compress_once(b);
        CHECK(b.slot(0)[1].label == 0.75);
        CHECK(b.slot(0)[1].feature[0] == 5.25);
        CHECK(b.slot(0)[1].first_t == 2);
        CHECK(b.slot(0)[1].last_t == 7);
    }
    SECTION("locations merge independently") {
        MemoryBank b(View::ego, 1, 2, 1, 3);
        const double a[] = {0.0, 0.05, 1.0, 2.0};  // closest pair at t = 1
        const double c[] = {0.0, 1.0, 2.0, 2.01};  // closest pair at t = 3
        for (std::uint32_t t = 1; t <= 4; ++t) b.push_frame(std::vector<double>{a[t - 1], c[t - 1]}, zeros_labels(2), t);
        CHECK(redundant_pair(b.slot(0)) == brute_force_pair(b.slot(0)));
        CHECK(redundant_pair(b.slot(1)) == brute_force_pair(b.slot(1)));
        compress_once(b);
        CHECK(first_ts(b, 0) == std::vector<std::uint32_t>{1, 3, 4});
        CHECK(first_ts(b, 1) == std::vector<std::uint32_t>{1, 2, 3});
    }
    SECTION("wrong length is rejected") {
        MemoryBank b(View::ego, 1, 1, 1, 3);
        b.push_frame(std::vector<double>{0.0}, zeros_labels(1), 1);
        CHECK_THROWS_AS(compress_once(b), std::invalid_argument);
        CHECK_THROWS_AS(cluster_reduce(b, 0), std::invalid_argument);
        CHECK_THROWS_AS(fifo_evict(b, false), std::invalid_argument);
    }
}

TEST_CASE("compress_once agrees with exhaustive search on random banks") {
    std::mt19937_64 rng(42);
    std::uniform_int_distribution<std::size_t> dim(1, 4), cap(1, 8), ch(1, 8);
    std::bernoulli_distribution dup(0.2);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t h = dim(rng), w = dim(rng), C = ch(rng), M = cap(rng), P = h * w;
        MemoryBank b(View::exo, h, w, C, M);
        std::vector<double> prev;
        for (std::uint32_t t = 1; t <= M + 1; ++t) {
            auto f = (!prev.empty() && dup(rng)) ? prev : random_frame(rng, P, C);
            b.push_frame(f, zeros_labels(P), t);
            prev = f;
        }
        std::vector<std::size_t> expect(P);
        for (std::size_t p = 0; p < P; ++p) expect[p] = brute_force_pair(b.slot(p));
        const MemoryBank before = b;
        compress_once(b);
        for (std::size_t p = 0; p < P; ++p) {
            const auto& s = before.slot(p);
            const std::size_t k = expect[p];
            REQUIRE(b.slot(p).size() == M);
            CHECK(b.slot(p)[k].first_t == s[k].first_t);
            CHECK(b.slot(p)[k].last_t == s[k + 1].last_t);
            for (std::size_t c = 0; c < C; ++c) {
                CHECK(b.slot(p)[k].feature[c] == (s[k].feature[c] + s[k + 1].feature[c]) / 2.0);
            }
        }
    }
}

TEST_CASE("frame-level variant merges one shared index") {
    std::mt19937_64 rng(5);
    MemoryBank b(View::ego, 2, 2, 2, 4);
    for (std::uint32_t t = 1; t <= 5; ++t) b.push_frame(random_frame(rng, 4, 2), zeros_labels(4), t);
    compress_once_frame_level(b);
    const auto ts = first_ts(b, 0);
    for (std::size_t p = 1; p < 4; ++p) CHECK(first_ts(b, p) == ts);
    auto pol = CompressionPolicy::ours();
    pol.frame_level = true;
    MemoryBank c(View::ego, 2, 2, 2, 4);
    std::mt19937_64 rng2(5);
    for (std::uint32_t t = 1; t <= 5; ++t) c.append(random_frame(rng2, 4, 2), zeros_labels(4), t, pol);
    CHECK(c == b);
}

TEST_CASE("cluster_reduce") {
    SECTION("a duplicated frame is the one dropped") {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            MemoryBank b(View::ego, 1, 1, 2, 4);
            const double vals[5][2] = {{0, 0}, {10, 0}, {10, 0}, {0, 10}, {-10, -10}};
            for (std::uint32_t t = 1; t <= 5; ++t) {
                b.push_frame(std::vector<double>{vals[t - 1][0], vals[t - 1][1]}, zeros_labels(1), t);
            }
            cluster_reduce(b, seed);
            const auto ts = first_ts(b);
            REQUIRE(ts.size() == 4);
            const std::set<std::uint32_t> kept(ts.begin(), ts.end());
            CHECK(kept.count(1) == 1);
            CHECK(kept.count(4) == 1);
            CHECK(kept.count(5) == 1);
            CHECK(kept.count(2) + kept.count(3) == 1);
        }
    }
    SECTION("identical frames: one dropped, values unchanged") {
        MemoryBank b(View::ego, 2, 1, 2, 3);
        for (std::uint32_t t = 1; t <= 4; ++t) b.push_frame(constant_frame(2, 2, 1.5), zeros_labels(2), t);
        cluster_reduce(b, 7);
        CHECK(b.length() == 3);
        for (std::size_t p = 0; p < 2; ++p) {
            for (const auto& e : b.slot(p)) CHECK(e.feature == std::vector<double>{1.5, 1.5});
        }
    }
    SECTION("fixed seed is deterministic") {
        std::mt19937_64 rng(9);
        MemoryBank b(View::ego, 2, 2, 3, 5);
        for (std::uint32_t t = 1; t <= 6; ++t) b.push_frame(random_frame(rng, 4, 3), zeros_labels(4), t);
        MemoryBank c = b;
        cluster_reduce(b, 11);
        cluster_reduce(c, 11);
        CHECK(b == c);
    }
    SECTION("kmeans argument checks") {
        CHECK_THROWS_AS(kmeans({{1.0}}, 2, 0), std::invalid_argument);
        CHECK_THROWS_AS(kmeans({{1.0}}, 0, 0), std::invalid_argument);
    }
}

TEST_CASE("tokens") {
    MemoryBank b(View::ego, 2, 2, 1, 3);
    CHECK(b.tokens().empty());
    b.push_frame(std::vector<double>{1, 2, 3, 4}, std::vector<double>{0, 1, 0, 1}, 1);
    const auto t1 = b.tokens();
    REQUIRE(t1.size() == 4);
    for (std::size_t n = 0; n < 4; ++n) CHECK(t1.feature(n)[0] == static_cast<double>(n + 1));
    CHECK(t1.labels == std::vector<double>{0, 1, 0, 1});
    for (std::uint32_t t = 2; t <= 4; ++t) b.push_frame(std::vector<double>{1, 2, 3, 4}, zeros_labels(4), t);
    compress_once(b);
    const auto t2 = b.tokens();
    CHECK(t2.size() == 4 * 3);
    // location-major, time-minor
    CHECK(t2.feature(0)[0] == 1.0);
    CHECK(t2.feature(2)[0] == 1.0);
    CHECK(t2.feature(3)[0] == 2.0);
}

TEST_CASE("capacity after many appends and losslessness on identical frames") {
    std::mt19937_64 rng(13);
    for (const auto& pol : every_policy()) {
        for (std::size_t M : {1u, 3u, 6u}) {
            MemoryBank b(View::ego, 2, 3, 2, M);
            for (std::uint32_t t = 1; t <= 10 * M; ++t) b.append(random_frame(rng, 6, 2), zeros_labels(6), t, pol, 1.0);
            for (std::size_t p = 0; p < 6; ++p) CHECK(b.slot(p).size() == M);
            b.check_invariants();
        }
    }
    MemoryBank b(View::exo, 2, 2, 3, 4);
    const auto frame = random_frame(rng, 4, 3);
    for (std::uint32_t t = 1; t <= 40; ++t) b.append(frame, std::vector<double>(4, 1.0), t, CompressionPolicy::ours());
    for (std::size_t p = 0; p < 4; ++p) {
        for (const auto& e : b.slot(p)) {
            for (std::size_t k = 0; k < 3; ++k) CHECK(e.feature[k] == frame[p * 3 + k]);
            CHECK(e.label == 1.0);
        }
    }
}

TEST_CASE("merged spans tile the admitted frames") {
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> iv(-20, 20);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t M = 2 + static_cast<std::size_t>(trial % 5);
        MemoryBank b(View::ego, 2, 2, 2, M);
        std::vector<std::vector<double>> frames;
        for (std::uint32_t t = 1; t <= 30; ++t) {
            std::vector<double> f(8);
            for (double& v : f) v = iv(rng);
            frames.push_back(f);
            b.append(f, zeros_labels(4), t, CompressionPolicy::ours());
        }
        for (std::size_t p = 0; p < 4; ++p) {
            const auto& s = b.slot(p);
            CHECK(s.front().first_t == 1);
            CHECK(s.back().last_t == 30);
            for (std::size_t n = 1; n < s.size(); ++n) CHECK(s[n].first_t == s[n - 1].last_t + 1);
        }
    }
    SECTION("one merge of singleton spans conserves the span-weighted sum") {
        MemoryBank b(View::ego, 2, 2, 2, 5);
        std::vector<double> total(8, 0.0);
        for (std::uint32_t t = 1; t <= 6; ++t) {
            std::vector<double> f(8);
            for (double& v : f) v = iv(rng);
            for (std::size_t n = 0; n < 8; ++n) total[n] += f[n];
            b.append(f, zeros_labels(4), t, CompressionPolicy::ours());
        }
        for (std::size_t p = 0; p < 4; ++p) {
            for (std::size_t k = 0; k < 2; ++k) {
                double acc = 0.0;
                for (const auto& e : b.slot(p)) acc += e.feature[k] * e.span_length();
                CHECK(acc == total[p * 2 + k]);
            }
        }
    }
    SECTION("stationary integer streams conserve it exactly at any depth") {
        MemoryBank b(View::ego, 1, 3, 2, 4);
        std::vector<double> f = {3, -7, 12, 0, 5, 5};
        for (std::uint32_t t = 1; t <= 50; ++t) b.append(f, zeros_labels(3), t, CompressionPolicy::ours());
        for (std::size_t p = 0; p < 3; ++p) {
            for (std::size_t k = 0; k < 2; ++k) {
                double acc = 0.0;
                for (const auto& e : b.slot(p)) acc += e.feature[k] * e.span_length();
                CHECK(acc == 50.0 * f[p * 2 + k]);
            }
        }
    }
}

TEST_CASE("all policies agree on streams no longer than M") {
    std::mt19937_64 rng(19);
    for (std::size_t T : {1u, 3u, 6u}) {
        std::vector<std::vector<double>> frames;
        for (std::size_t t = 0; t < T; ++t) frames.push_back(random_frame(rng, 4, 2));
        std::vector<MemoryBank> banks;
        for (const auto& pol : every_policy()) {
            MemoryBank b(View::exo, 2, 2, 2, 6);
            for (std::uint32_t t = 1; t <= T; ++t) b.append(frames[t - 1], zeros_labels(4), t, pol, 0.1);
            banks.push_back(b);
        }
        for (const auto& b : banks) CHECK(b == banks.front());
    }
}

TEST_CASE("identical streams and policies give identical banks") {
    for (const auto& pol : every_policy()) {
        MemoryBank a(View::ego, 3, 2, 3, 4), b(View::ego, 3, 2, 3, 4);
        std::mt19937_64 r1(23), r2(23);
        for (std::uint32_t t = 1; t <= 25; ++t) {
            a.append(random_frame(r1, 6, 3), zeros_labels(6), t, pol, 0.7);
            b.append(random_frame(r2, 6, 3), zeros_labels(6), t, pol, 0.7);
        }
        CHECK(a == b);
    }
}

TEST_CASE("policy names") {
    CHECK(parse_policy_kind("ours") == PolicyKind::ours);
    CHECK(parse_policy_kind("iou-select") == PolicyKind::iou_select);
    CHECK(std::string(to_string(PolicyKind::cluster)) == "cluster");
    CHECK_THROWS_AS(parse_policy_kind("lru"), std::invalid_argument);
}
