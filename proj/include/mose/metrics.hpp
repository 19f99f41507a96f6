#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mose/error.hpp"
#include "mose/losses.hpp"
#include "mose/mose_layer.hpp"
#include "mose/tensor.hpp"

namespace mose {

/// 2|P & G| / (|P| + |G|) over nonzero pixels; two empty masks score 1.
inline double dice_coeff(const Tensor& pred, const Tensor& gt) {
    pred.require_same_shape(gt, "dice_coeff");
    double inter = 0.0, sp = 0.0, sg = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0.0, g = gt[i] != 0.0;
        inter += (p && g) ? 1.0 : 0.0;
        sp += p ? 1.0 : 0.0;
        sg += g ? 1.0 : 0.0;
    }
    if (sp + sg == 0.0) return 1.0;
    return 2.0 * inter / (sp + sg);
}

namespace detail {
// Exact squared Euclidean distance transform (Felzenszwalb & Huttenlocher),
// separable 1-D lower envelopes of parabolas. Values are integers held in doubles.
inline void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::size_t n) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> v(n);
    std::vector<double> z(n + 1);
    std::size_t k = 0;
    std::size_t first = n;
    for (std::size_t q = 0; q < n; ++q)
        if (f[q] < inf) {
            first = q;
            break;
        }
    if (first == n) {
        std::fill(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(n), inf);
        return;
    }
    v[0] = first;
    z[0] = -inf;
    z[1] = inf;
    for (std::size_t q = first + 1; q < n; ++q) {
        if (f[q] == inf) continue;
        const double qd = static_cast<double>(q);
        for (;;) {
            const double vk = static_cast<double>(v[k]);
            const double s = ((f[q] + qd * qd) - (f[v[k]] + vk * vk)) / (2.0 * qd - 2.0 * vk);
            if (s <= z[k]) {
                if (k == 0) {
                    v[0] = q;
                    z[1] = inf;
                    break;
                }
                --k;
                continue;
            }
            ++k;
            v[k] = q;
            z[k] = s;
            z[k + 1] = inf;
            break;
        }
    }
    k = 0;
    for (std::size_t q = 0; q < n; ++q) {
        const double qd = static_cast<double>(q);
        while (z[k + 1] < qd) ++k;
        const double diff = qd - static_cast<double>(v[k]);
        d[q] = diff * diff + f[v[k]];
    }
}
}  // namespace detail

/// Squared distance from every pixel to the nearest nonzero pixel of `mask`
/// (+inf everywhere when the mask is empty).
inline Tensor squared_distance_transform(const Tensor& mask) {
    require_rank(mask, 2, "distance transform");
    constexpr double inf = std::numeric_limits<double>::infinity();
    const std::size_t h = mask.dim(0), w = mask.dim(1);
    std::vector<double> grid(h * w);
    for (std::size_t i = 0; i < h * w; ++i) grid[i] = mask[i] != 0.0 ? 0.0 : inf;
    const std::size_t longest = std::max(h, w);
    std::vector<double> f(longest), d(longest);
    for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t y = 0; y < h; ++y) f[y] = grid[y * w + x];
        detail::edt_1d(f, d, h);
        for (std::size_t y = 0; y < h; ++y) grid[y * w + x] = d[y];
    }
    Tensor out({h, w});
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) f[x] = grid[y * w + x];
        detail::edt_1d(f, d, w);
        for (std::size_t x = 0; x < w; ++x) out.at(y, x) = d[x];
    }
    return out;
}

/// Symmetric Hausdorff distance in pixels between nonzero sets. One empty side
/// gives the image diagonal sqrt(H^2 + W^2); both empty give 0.
inline double hausdorff(const Tensor& pred, const Tensor& gt) {
    pred.require_same_shape(gt, "hausdorff");
    require_rank(pred, 2, "hausdorff");
    bool any_p = false, any_g = false;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        any_p = any_p || pred[i] != 0.0;
        any_g = any_g || gt[i] != 0.0;
    }
    if (!any_p && !any_g) return 0.0;
    if (!any_p || !any_g) {
        const double h = static_cast<double>(pred.dim(0)), w = static_cast<double>(pred.dim(1));
        return std::sqrt(h * h + w * w);
    }
    const Tensor to_g = squared_distance_transform(gt);
    const Tensor to_p = squared_distance_transform(pred);
    double worst = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] != 0.0) worst = std::max(worst, to_g[i]);
        if (gt[i] != 0.0) worst = std::max(worst, to_p[i]);
    }
    return std::sqrt(worst);
}

struct UtilizationReport {
    std::vector<double> usage;             // sum of |weight| per expert
    std::vector<std::size_t> retained;     // pixels where the expert was kept with nonzero weight
    double usage_cv = 0.0;
    std::size_t dead_experts = 0;
};

/// An expert is dead when it never carries a nonzero retained weight.
inline UtilizationReport utilization_report(std::span<const SparseCoding> codings) {
    if (codings.empty()) throw ValidationError("utilization_report: empty collection");
    const std::size_t n = codings.front().experts();
    UtilizationAccumulator acc(n);
    UtilizationReport r;
    r.retained.assign(n, 0);
    for (const SparseCoding& sc : codings) {
        acc.add(sc.dense);
        for (std::size_t p = 0; p < sc.pixels(); ++p)
            for (std::uint32_t j : sc.retained_at(p))
                if (sc.dense[p * n + j] != 0.0) ++r.retained[j];
    }
    r.usage.assign(acc.sums.data().begin(), acc.sums.data().end());
    r.usage_cv = cv_penalty(acc.sums);
    r.dead_experts = static_cast<std::size_t>(std::count(r.retained.begin(), r.retained.end(), std::size_t{0}));
    return r;
}

struct DomainScores {
    std::string domain;
    std::size_t samples = 0;
    double dice_mean = 0.0, dice_std = 0.0;
    double hd_mean = 0.0, hd_std = 0.0;
};

/// Mean and population standard deviation.
inline std::pair<double, double> mean_std(std::span<const double> xs) {
    if (xs.empty()) return {0.0, 0.0};
    double m = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    double v = 0.0;
    for (double x : xs) v += (x - m) * (x - m);
    return {m, std::sqrt(v / static_cast<double>(xs.size()))};
}

struct EvalReport {
    std::vector<DomainScores> domains;  // source_val first, then targets
    UtilizationReport utilization;

    double avg_target_dice() const {
        double s = 0.0;
        std::size_t c = 0;
        for (const auto& d : domains)
            if (d.domain != "source_val") s += d.dice_mean, ++c;
        return c ? s / static_cast<double>(c) : 0.0;
    }

    double avg_target_hd() const {
        double s = 0.0;
        std::size_t c = 0;
        for (const auto& d : domains)
            if (d.domain != "source_val") s += d.hd_mean, ++c;
        return c ? s / static_cast<double>(c) : 0.0;
    }

    const DomainScores* find(const std::string& name) const {
        for (const auto& d : domains)
            if (d.domain == name) return &d;
        return nullptr;
    }
};

inline void write_domain_csv(std::ostream& out, const EvalReport& r) {
    out.precision(17);
    out << "domain,n_samples,dice_mean,dice_std,hd_mean,hd_std\n";
    for (const auto& d : r.domains) {
        out << d.domain << "," << d.samples << "," << d.dice_mean << "," << d.dice_std << "," << d.hd_mean << ","
            << d.hd_std << "\n";
    }
}

inline void write_utilization_csv(std::ostream& out, const UtilizationReport& u) {
    out.precision(17);
    out << "expert,usage,retained_pixels,dead\n";
    for (std::size_t j = 0; j < u.usage.size(); ++j) {
        out << j << "," << u.usage[j] << "," << u.retained[j] << "," << (u.retained[j] == 0 ? "true" : "false")
            << "\n";
    }
}

}  // namespace mose
