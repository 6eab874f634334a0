// Copyright (C) 2026 The lmeec Authors
// SPDX-License-Identifier: Apache-2.0

// Per-view memory banks and their capacity policies.
//
// A bank stores, for each of P = h*w spatial locations, a time-ordered sequence
// of at most M entries. When an append pushes the length to M+1 one reduction
// step runs:
//   ours        per location, merge the adjacent pair with the smallest
//               Euclidean distance into their mean
//   fifo        drop the oldest frame
//   cluster     k-means (k = M) over average-pooled frames, keep the frame
//               nearest each centroid
//   iou_select  once full, admit only frames scoring at least the threshold;
//               admitted frames evict fifo-style

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lmeec::memory {

enum class View : std::uint8_t { ego = 0, exo = 1 };

inline const char* to_string(View v) { return v == View::ego ? "ego" : "exo"; }

enum class PolicyKind { ours, fifo, cluster, iou_select };

inline const char* to_string(PolicyKind k) {
    switch (k) {
        case PolicyKind::ours: return "ours";
        case PolicyKind::fifo: return "fifo";
        case PolicyKind::cluster: return "cluster";
        case PolicyKind::iou_select: return "iou_select";
    }
    return "?";
}

inline PolicyKind parse_policy_kind(std::string_view name) {
    if (name == "ours") return PolicyKind::ours;
    if (name == "fifo") return PolicyKind::fifo;
    if (name == "cluster") return PolicyKind::cluster;
    if (name == "iou_select" || name == "iou-select") return PolicyKind::iou_select;
    throw std::invalid_argument("unknown compression policy '" + std::string(name) + "'");
}

struct CompressionPolicy {
    PolicyKind kind = PolicyKind::ours;
    double threshold = 0.5;     // iou_select admission score
    std::uint64_t seed = 0;     // cluster k-means++ seed
    bool pin_initial = false;   // fifo / iou_select: never evict the first admitted frame
    bool frame_level = false;   // ours: one merge index shared by all locations (comparison variant)

    static CompressionPolicy ours() { return {}; }
    static CompressionPolicy fifo(bool pin = false) {
        CompressionPolicy p;
        p.kind = PolicyKind::fifo;
        p.pin_initial = pin;
        return p;
    }
    static CompressionPolicy cluster(std::uint64_t seed = 0) {
        CompressionPolicy p;
        p.kind = PolicyKind::cluster;
        p.seed = seed;
        return p;
    }
    static CompressionPolicy iou_select(double threshold = 0.5, bool pin = false) {
        CompressionPolicy p;
        p.kind = PolicyKind::iou_select;
        p.threshold = threshold;
        p.pin_initial = pin;
        return p;
    }

    void validate() const {
        if (!(threshold >= 0.0 && threshold <= 1.0)) throw std::invalid_argument("policy threshold must lie in [0,1]");
    }
};

struct MemoryEntry {
    std::vector<double> feature;
    double label = 0.0;
    std::uint32_t first_t = 0;
    std::uint32_t last_t = 0;

    std::uint32_t span_length() const { return last_t - first_t + 1; }
    friend bool operator==(const MemoryEntry&, const MemoryEntry&) = default;
};

/// Flat (feature, label) list. Features are N x C row-major.
struct TokenSet {
    std::size_t channels = 0;
    std::vector<double> features;
    std::vector<double> labels;

    std::size_t size() const { return labels.size(); }
    bool empty() const { return labels.empty(); }
    std::span<const double> feature(std::size_t n) const {
        return std::span<const double>(features).subspan(n * channels, channels);
    }
    void push(std::span<const double> f, double label) {
        features.insert(features.end(), f.begin(), f.end());
        labels.push_back(label);
    }
    void append(const TokenSet& other) {
        if (other.empty()) return;
        if (channels == 0) channels = other.channels;
        if (other.channels != channels) throw std::invalid_argument("TokenSet::append: channel mismatch");
        features.insert(features.end(), other.features.begin(), other.features.end());
        labels.insert(labels.end(), other.labels.begin(), other.labels.end());
    }
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        acc += d * d;
    }
    return acc;
}

class MemoryBank {
public:
    MemoryBank() = default;
    MemoryBank(View view, std::size_t h, std::size_t w, std::size_t channels, std::size_t capacity)
        : view_(view), h_(h), w_(w), c_(channels), m_(capacity), slots_(h * w) {
        if (h == 0 || w == 0 || channels == 0) throw std::invalid_argument("MemoryBank: zero dimension");
        if (capacity == 0) throw std::invalid_argument("MemoryBank: capacity must be >= 1");
    }

    View view() const { return view_; }
    std::size_t height() const { return h_; }
    std::size_t width() const { return w_; }
    std::size_t locations() const { return h_ * w_; }
    std::size_t channels() const { return c_; }
    std::size_t capacity() const { return m_; }
    std::size_t length() const { return slots_.empty() ? 0 : slots_.front().size(); }
    bool empty() const { return length() == 0; }

    const std::vector<MemoryEntry>& slot(std::size_t p) const { return slots_.at(p); }
    std::vector<MemoryEntry>& slot(std::size_t p) { return slots_.at(p); }
    std::optional<std::uint32_t> initial_t() const { return initial_t_; }
    std::uint32_t latest_t() const { return latest_t_; }

    /// Pushes one frame without any reduction. Allowed up to capacity + 1 entries.
    void push_frame(std::span<const double> frame, std::span<const double> labels, std::uint32_t t) {
        if (frame.size() != locations() * c_) {
            throw std::invalid_argument("MemoryBank: frame has " + std::to_string(frame.size()) + " values, expected " +
                                        std::to_string(locations() * c_));
        }
        if (labels.size() != locations()) throw std::invalid_argument("MemoryBank: label count != P");
        if (!empty() && t <= latest_t_) {
            throw std::invalid_argument("MemoryBank: frame index " + std::to_string(t) +
                                        " is not after the latest stored index " + std::to_string(latest_t_));
        }
        if (length() > m_) throw std::logic_error("MemoryBank: already over capacity");
        for (double l : labels) {
            if (!(l >= 0.0 && l <= 1.0)) throw std::invalid_argument("MemoryBank: label outside [0,1]");
        }
        for (double v : frame) {
            if (!std::isfinite(v)) throw std::invalid_argument("MemoryBank: non-finite feature");
        }
        for (std::size_t p = 0; p < locations(); ++p) {
            MemoryEntry e;
            e.feature.assign(frame.begin() + static_cast<std::ptrdiff_t>(p * c_),
                             frame.begin() + static_cast<std::ptrdiff_t>((p + 1) * c_));
            e.label = labels[p];
            e.first_t = e.last_t = t;
            slots_[p].push_back(std::move(e));
        }
        if (!initial_t_) initial_t_ = t;
        latest_t_ = t;
    }

    /// Admits a frame under `policy`, reducing back to capacity when needed.
    /// Returns false when the frame was rejected by the admission gate.
    bool append(std::span<const double> frame, std::span<const double> labels, std::uint32_t t,
                const CompressionPolicy& policy, std::optional<double> score = std::nullopt);

    TokenSet tokens() const {
        TokenSet out;
        out.channels = c_;
        out.features.reserve(locations() * length() * c_);
        out.labels.reserve(locations() * length());
        for (const auto& seq : slots_) {
            for (const auto& e : seq) out.push(e.feature, e.label);
        }
        return out;
    }

    /// Checks the structural invariants; throws std::logic_error on violation.
    void check_invariants() const {
        const std::size_t len = length();
        if (len > m_ + 1) throw std::logic_error("bank length exceeds capacity");
        for (const auto& seq : slots_) {
            if (seq.size() != len) throw std::logic_error("locations disagree on length");
            for (std::size_t n = 0; n < seq.size(); ++n) {
                const auto& e = seq[n];
                if (e.first_t > e.last_t) throw std::logic_error("entry span reversed");
                if (!(e.label >= 0.0 && e.label <= 1.0)) throw std::logic_error("entry label outside [0,1]");
                if (n > 0 && !(seq[n - 1].first_t < e.first_t)) throw std::logic_error("entries not time-ordered");
            }
        }
    }

    // Used by the snapshot reader.
    void restore(std::vector<std::vector<MemoryEntry>> slots, std::optional<std::uint32_t> initial,
                 std::uint32_t latest) {
        if (slots.size() != locations()) throw std::invalid_argument("MemoryBank::restore: wrong location count");
        slots_ = std::move(slots);
        initial_t_ = initial;
        latest_t_ = latest;
        check_invariants();
    }

    friend bool operator==(const MemoryBank&, const MemoryBank&) = default;

private:
    View view_ = View::exo;
    std::size_t h_ = 0, w_ = 0, c_ = 0, m_ = 0;
    std::vector<std::vector<MemoryEntry>> slots_;
    std::optional<std::uint32_t> initial_t_;
    std::uint32_t latest_t_ = 0;
};

struct DualMemory {
    MemoryBank ego;
    MemoryBank exo;

    DualMemory(std::size_t h, std::size_t w, std::size_t channels, std::size_t capacity)
        : ego(View::ego, h, w, channels, capacity), exo(View::exo, h, w, channels, capacity) {}

    TokenSet tokens() const {
        TokenSet t = ego.tokens();
        t.append(exo.tokens());
        return t;
    }
};

// ---------------------------------------------------------------------------
// Reduction steps. Each requires exactly capacity + 1 entries per location.

namespace detail {

inline void require_overfull(const MemoryBank& bank, const char* op) {
    if (bank.length() != bank.capacity() + 1) {
        throw std::invalid_argument(std::string(op) + ": bank holds " + std::to_string(bank.length()) +
                                    " entries per location, expected capacity+1 = " +
                                    std::to_string(bank.capacity() + 1));
    }
}

inline MemoryEntry merge(const MemoryEntry& a, const MemoryEntry& b) {
    MemoryEntry m;
    m.feature.resize(a.feature.size());
    for (std::size_t k = 0; k < a.feature.size(); ++k) m.feature[k] = (a.feature[k] + b.feature[k]) / 2.0;
    m.label = (a.label + b.label) / 2.0;
    m.first_t = a.first_t;
    m.last_t = b.last_t;
    return m;
}

inline void erase_frame(MemoryBank& bank, std::size_t index) {
    for (std::size_t p = 0; p < bank.locations(); ++p) {
        auto& seq = bank.slot(p);
        seq.erase(seq.begin() + static_cast<std::ptrdiff_t>(index));
    }
}

}  // namespace detail

/// Index k (0-based) of the adjacent pair (k, k+1) with the smallest distance; ties go to the smallest k.
inline std::size_t redundant_pair(const std::vector<MemoryEntry>& seq) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
        const double d = squared_distance(seq[t].feature, seq[t + 1].feature);
        if (d < best_d) {
            best_d = d;
            best = t;
        }
    }
    return best;
}

/// Merges, independently at each location, the most similar temporally adjacent pair.
inline void compress_once(MemoryBank& bank) {
    detail::require_overfull(bank, "compress_once");
    if (bank.length() < 2) throw std::invalid_argument("compress_once: need at least two entries");
    for (std::size_t p = 0; p < bank.locations(); ++p) {
        auto& seq = bank.slot(p);
        const std::size_t k = redundant_pair(seq);
        seq[k] = detail::merge(seq[k], seq[k + 1]);
        seq.erase(seq.begin() + static_cast<std::ptrdiff_t>(k + 1));
    }
}

/// Frame-level variant: one merge index for all locations, chosen by the summed per-location distance.
inline void compress_once_frame_level(MemoryBank& bank) {
    detail::require_overfull(bank, "compress_once_frame_level");
    if (bank.length() < 2) throw std::invalid_argument("compress_once_frame_level: need at least two entries");
    const std::size_t n = bank.length();
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t + 1 < n; ++t) {
        double d = 0.0;
        for (std::size_t p = 0; p < bank.locations(); ++p) {
            d += std::sqrt(squared_distance(bank.slot(p)[t].feature, bank.slot(p)[t + 1].feature));
        }
        if (d < best_d) {
            best_d = d;
            best = t;
        }
    }
    for (std::size_t p = 0; p < bank.locations(); ++p) {
        auto& seq = bank.slot(p);
        seq[best] = detail::merge(seq[best], seq[best + 1]);
        seq.erase(seq.begin() + static_cast<std::ptrdiff_t>(best + 1));
    }
}

/// Drops the oldest frame, or the oldest after the initial frame when pinned.
inline void fifo_evict(MemoryBank& bank, bool pin_initial) {
    detail::require_overfull(bank, "fifo_evict");
    std::size_t victim = 0;
    if (pin_initial && bank.initial_t() && bank.slot(0).front().first_t == *bank.initial_t()) victim = 1;
    detail::erase_frame(bank, victim);
}

/// Average-pooled descriptor of every stored frame, length x C.
inline std::vector<std::vector<double>> pooled_frames(const MemoryBank& bank) {
    const std::size_t n = bank.length(), c = bank.channels();
    std::vector<std::vector<double>> out(n, std::vector<double>(c, 0.0));
    for (std::size_t p = 0; p < bank.locations(); ++p) {
        for (std::size_t t = 0; t < n; ++t) {
            const auto& f = bank.slot(p)[t].feature;
            for (std::size_t k = 0; k < c; ++k) out[t][k] += f[k];
        }
    }
    const double inv = 1.0 / static_cast<double>(bank.locations());
    for (auto& v : out) {
        for (double& x : v) x *= inv;
    }
    return out;
}

/// k-means++ seeded Lloyd iterations; returns the centroids.
inline std::vector<std::vector<double>> kmeans(const std::vector<std::vector<double>>& points, std::size_t k,
                                               std::uint64_t seed, int iterations = 20) {
    const std::size_t n = points.size();
    if (k == 0 || k > n) throw std::invalid_argument("kmeans: need 1 <= k <= number of points");
    std::mt19937_64 rng(seed);
    std::vector<std::vector<double>> centroids;
    std::vector<bool> chosen(n, false);
    std::uniform_int_distribution<std::size_t> first(0, n - 1);
    std::size_t idx = first(rng);
    centroids.push_back(points[idx]);
    chosen[idx] = true;
    std::vector<double> d2(n);
    while (centroids.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& cen : centroids) best = std::min(best, squared_distance(points[i], cen));
            d2[i] = best;
            total += best;
        }
        std::size_t pick = n;
        if (total > 0.0) {
            std::uniform_real_distribution<double> u(0.0, total);
            const double target = u(rng);
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (d2[i] <= 0.0) continue;
                acc += d2[i];
                pick = i;
                if (acc >= target) break;
            }
        }
        if (pick == n) {
            // Every point coincides with a centroid; take the first unchosen one.
            for (std::size_t i = 0; i < n; ++i) {
                if (!chosen[i]) {
                    pick = i;
                    break;
                }
            }
        }
        centroids.push_back(points[pick]);
        chosen[pick] = true;
    }

    const std::size_t dim = points.front().size();
    std::vector<std::size_t> assign(n, 0);
    for (int it = 0; it < iterations; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < k; ++j) {
                const double d = squared_distance(points[i], centroids[j]);
                if (d < best) {
                    best = d;
                    assign[i] = j;
                }
            }
        }
        std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[assign[i]];
            for (std::size_t d = 0; d < dim; ++d) sums[assign[i]][d] += points[i][d];
        }
        for (std::size_t j = 0; j < k; ++j) {
            if (counts[j] == 0) continue;  // empty cluster keeps its centroid
            for (std::size_t d = 0; d < dim; ++d) centroids[j][d] = sums[j][d] / static_cast<double>(counts[j]);
        }
    }
    return centroids;
}

/// Index of the frame dropped by cluster selection over the given pooled frames.
/// Each centroid, in order, claims its nearest frame not yet claimed (ties: earliest);
/// the single unclaimed frame is dropped.
inline std::size_t cluster_victim(const std::vector<std::vector<double>>& pooled, std::uint64_t seed) {
    const std::size_t n = pooled.size();
    const auto centroids = kmeans(pooled, n - 1, seed);
    std::vector<bool> kept(n, false);
    for (const auto& cen : centroids) {
        std::size_t best = n;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < n; ++t) {
            if (kept[t]) continue;
            const double d = squared_distance(pooled[t], cen);
            if (d < best_d) {
                best_d = d;
                best = t;
            }
        }
        kept[best] = true;
    }
    for (std::size_t t = 0; t < n; ++t) {
        if (!kept[t]) return t;
    }
    return n - 1;  // unreachable: n-1 centroids claim n-1 distinct frames
}

inline void cluster_reduce(MemoryBank& bank, std::uint64_t seed) {
    detail::require_overfull(bank, "cluster_reduce");
    if (bank.length() < 2) throw std::invalid_argument("cluster_reduce: need at least two frames");
    detail::erase_frame(bank, cluster_victim(pooled_frames(bank), seed));
}

inline bool MemoryBank::append(std::span<const double> frame, std::span<const double> labels, std::uint32_t t,
                               const CompressionPolicy& policy, std::optional<double> score) {
    policy.validate();
    if (policy.kind == PolicyKind::iou_select && length() >= m_ && !empty()) {
        // Validate shape and ordering even for rejected frames.
        if (frame.size() != locations() * c_ || labels.size() != locations()) {
            throw std::invalid_argument("MemoryBank: frame dimensions do not match bank");
        }
        if (t <= latest_t_) throw std::invalid_argument("MemoryBank: non-monotone frame index");
        if (!score || *score < policy.threshold) return false;
    }
    push_frame(frame, labels, t);
    if (length() <= m_) return true;
    switch (policy.kind) {
        case PolicyKind::ours:
            if (policy.frame_level) {
                compress_once_frame_level(*this);
            } else {
                compress_once(*this);
            }
            break;
        case PolicyKind::fifo:
        case PolicyKind::iou_select:
            fifo_evict(*this, policy.pin_initial);
            break;
        case PolicyKind::cluster:
            cluster_reduce(*this, policy.seed);
            break;
    }
    return true;
}

}  // namespace lmeec::memory
