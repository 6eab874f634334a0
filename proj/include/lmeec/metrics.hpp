// Copyright (C) 2026 The lmeec Authors
// SPDX-License-Identifier: Apache-2.0

// Correspondence metrics: IoU, location error, contour accuracy, balanced
// visibility accuracy, association accuracy.
//
// Frames whose ground truth is empty have no IoU / LE / CA; they only count
// towards balanced accuracy.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lmeec/mask.hpp"

namespace lmeec::metrics {

namespace detail {
inline void require_same(const Mask& a, const Mask& b, const char* op) {
    if (!a.same_dims(b)) {
        throw std::invalid_argument(std::string(op) + ": mask dimensions differ (" + std::to_string(a.height()) + "x" +
                                    std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                                    std::to_string(b.width()) + ")");
    }
}
}  // namespace detail

inline std::optional<double> iou(const Mask& pred, const Mask& gt) {
    detail::require_same(pred, gt, "iou");
    std::size_t inter = 0, uni = 0, g = 0;
    for (std::size_t n = 0; n < gt.size(); ++n) {
        const bool a = pred.at(n), b = gt.at(n);
        inter += (a && b);
        uni += (a || b);
        g += b;
    }
    if (g == 0) return std::nullopt;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

/// (row, col) mean of the foreground pixels.
inline std::optional<std::pair<double, double>> centroid(const Mask& m) {
    double si = 0.0, sj = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < m.height(); ++i) {
        for (std::size_t j = 0; j < m.width(); ++j) {
            if (m(i, j)) {
                si += static_cast<double>(i);
                sj += static_cast<double>(j);
                ++n;
            }
        }
    }
    if (n == 0) return std::nullopt;
    return std::pair{si / static_cast<double>(n), sj / static_cast<double>(n)};
}

inline double diagonal(std::size_t h, std::size_t w) {
    return std::sqrt(static_cast<double>(h * h + w * w));
}

/// Centroid distance normalised by the image diagonal.
inline std::optional<double> location_error(const Mask& pred, const Mask& gt) {
    detail::require_same(pred, gt, "location_error");
    const auto a = centroid(pred);
    const auto b = centroid(gt);
    if (!a || !b) return std::nullopt;
    const double di = a->first - b->first, dj = a->second - b->second;
    return std::sqrt(di * di + dj * dj) / diagonal(gt.height(), gt.width());
}

/// Foreground pixels with at least one background 4-neighbour; outside the image counts as background.
inline Mask boundary(const Mask& m) {
    Mask out(m.height(), m.width());
    const std::size_t h = m.height(), w = m.width();
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            if (!m(i, j)) continue;
            const bool edge = i == 0 || j == 0 || i + 1 == h || j + 1 == w || !m(i - 1, j) || !m(i + 1, j) ||
                              !m(i, j - 1) || !m(i, j + 1);
            if (edge) out.set(i, j);
        }
    }
    return out;
}

/// Chebyshev matching radius: max(1, round(0.008 * diagonal)).
inline std::size_t contour_tolerance(std::size_t h, std::size_t w) {
    const double r = std::round(0.008 * diagonal(h, w));
    return r < 1.0 ? 1 : static_cast<std::size_t>(r);
}

/// Square dilation with half-width `radius`, via separable row/column passes.
inline Mask dilate(const Mask& m, std::size_t radius) {
    const std::size_t h = m.height(), w = m.width();
    Mask rows(h, w), out(h, w);
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            const std::size_t lo = j >= radius ? j - radius : 0, hi = std::min(w - 1, j + radius);
            bool any = false;
            for (std::size_t jj = lo; jj <= hi && !any; ++jj) any = m(i, jj);
            rows.set(i, j, any);
        }
    }
    for (std::size_t i = 0; i < h; ++i) {
        const std::size_t lo = i >= radius ? i - radius : 0, hi = std::min(h - 1, i + radius);
        for (std::size_t j = 0; j < w; ++j) {
            bool any = false;
            for (std::size_t ii = lo; ii <= hi && !any; ++ii) any = rows(ii, j);
            out.set(i, j, any);
        }
    }
    return out;
}

/// Boundary F-measure at the given radius (defaults to contour_tolerance).
inline std::optional<double> contour_accuracy(const Mask& pred, const Mask& gt,
                                              std::optional<std::size_t> radius = std::nullopt) {
    detail::require_same(pred, gt, "contour_accuracy");
    if (!gt.any()) return std::nullopt;
    const std::size_t rho = radius.value_or(contour_tolerance(gt.height(), gt.width()));
    const Mask bp = boundary(pred), bg = boundary(gt);
    const Mask near_g = dilate(bg, rho), near_p = dilate(bp, rho);
    std::size_t np = 0, ng = 0, hit_p = 0, hit_g = 0;
    for (std::size_t n = 0; n < bp.size(); ++n) {
        if (bp.at(n)) {
            ++np;
            hit_p += near_g.at(n);
        }
        if (bg.at(n)) {
            ++ng;
            hit_g += near_p.at(n);
        }
    }
    const double precision = np ? static_cast<double>(hit_p) / static_cast<double>(np) : 0.0;
    const double recall = ng ? static_cast<double>(hit_g) / static_cast<double>(ng) : 0.0;
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

struct Visibility {
    bool pred_visible = false;
    bool gt_visible = false;
};

/// (TPR + TNR) / 2 over visibility decisions; undefined unless both classes occur in the ground truth.
inline std::optional<double> balanced_accuracy(const std::vector<Visibility>& seq) {
    std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
    for (const auto& v : seq) {
        if (v.gt_visible) {
            (v.pred_visible ? tp : fn) += 1;
        } else {
            (v.pred_visible ? fp : tn) += 1;
        }
    }
    if (tp + fn == 0 || tn + fp == 0) return std::nullopt;
    const double tpr = static_cast<double>(tp) / static_cast<double>(tp + fn);
    const double tnr = static_cast<double>(tn) / static_cast<double>(tn + fp);
    return (tpr + tnr) / 2.0;
}

/// Fraction of IoUs strictly above 0.5.
inline std::optional<double> association_accuracy(const std::vector<double>& ious) {
    if (ious.empty()) return std::nullopt;
    std::size_t n = 0;
    for (double v : ious) n += v > 0.5;
    return static_cast<double>(n) / static_cast<double>(ious.size());
}

struct FramePairResult {
    std::optional<double> iou, le, ca;
    bool pred_visible = false;
    bool gt_visible = false;
};

inline FramePairResult evaluate_frame(const Mask& pred, const Mask& gt) {
    FramePairResult r;
    r.iou = iou(pred, gt);
    r.le = location_error(pred, gt);
    r.ca = contour_accuracy(pred, gt);
    r.pred_visible = pred.any();
    r.gt_visible = gt.any();
    return r;
}

struct Summary {
    std::optional<double> mean_iou, mean_le, mean_ca, ba, association;
    std::size_t frames = 0;
    std::size_t undefined_iou = 0, undefined_le = 0, undefined_ca = 0;
};

inline Summary aggregate(const std::vector<FramePairResult>& results) {
    Summary s;
    s.frames = results.size();
    double si = 0.0, sl = 0.0, sc = 0.0;
    std::size_t ni = 0, nl = 0, nc = 0;
    std::vector<Visibility> vis;
    std::vector<double> visible_ious;
    vis.reserve(results.size());
    for (const auto& r : results) {
        if (r.iou) {
            si += *r.iou;
            ++ni;
        } else {
            ++s.undefined_iou;
        }
        if (r.le) {
            sl += *r.le;
            ++nl;
        } else {
            ++s.undefined_le;
        }
        if (r.ca) {
            sc += *r.ca;
            ++nc;
        } else {
            ++s.undefined_ca;
        }
        vis.push_back({r.pred_visible, r.gt_visible});
        if (r.gt_visible && r.iou) visible_ious.push_back(*r.iou);
    }
    if (ni) s.mean_iou = si / static_cast<double>(ni);
    if (nl) s.mean_le = sl / static_cast<double>(nl);
    if (nc) s.mean_ca = sc / static_cast<double>(nc);
    s.ba = balanced_accuracy(vis);
    s.association = association_accuracy(visible_ious);
    return s;
}

}  // namespace lmeec::metrics
