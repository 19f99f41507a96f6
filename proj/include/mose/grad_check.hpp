#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mose/error.hpp"
#include "mose/rng.hpp"
#include "mose/tensor.hpp"

namespace mose {

/// Scalar objective over a list of parameter tensors. When `grads` is non-null
/// the objective also writes its analytic gradient, one tensor per parameter.
using Objective = std::function<double(std::span<const Tensor> params, std::vector<Tensor>* grads)>;

struct GradCheckOptions {
    double eps = 1e-5;
    /// 0 checks every entry; otherwise a seeded random subset of this size per tensor.
    std::size_t max_entries_per_param = 0;
    std::uint64_t seed = 0;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::vector<double> per_param;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    std::size_t evaluations = 0;
};

inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

/// Compares the objective's analytic gradient with central differences.
inline GradCheckReport grad_check(const Objective& objective, std::span<const Tensor> params,
                                  const GradCheckOptions& opts = {}) {
    if (!(opts.eps >= 1e-7 && opts.eps <= 1e-3)) throw ConfigError("grad_check: eps must lie in [1e-7, 1e-3]");
    std::vector<Tensor> point(params.begin(), params.end());
    std::vector<Tensor> analytic;
    const double base = objective(point, &analytic);
    if (!std::isfinite(base)) throw NumericError("grad_check: non-finite loss at evaluation point");
    if (analytic.size() != point.size()) throw DimensionError("grad_check: objective returned wrong gradient count");

    GradCheckReport report;
    report.per_param.assign(point.size(), 0.0);
    Rng rng(opts.seed);
    for (std::size_t p = 0; p < point.size(); ++p) {
        point[p].require_same_shape(analytic[p], "grad_check analytic gradient");
        std::vector<std::size_t> entries(point[p].size());
        std::iota(entries.begin(), entries.end(), std::size_t{0});
        if (opts.max_entries_per_param != 0 && entries.size() > opts.max_entries_per_param) {
            rng.split(p).shuffle(std::span<std::size_t>(entries));
            entries.resize(opts.max_entries_per_param);
            std::sort(entries.begin(), entries.end());
        }
        for (std::size_t idx : entries) {
            const double orig = point[p][idx];
            point[p][idx] = orig + opts.eps;
            const double plus = objective(point, nullptr);
            point[p][idx] = orig - opts.eps;
            const double minus = objective(point, nullptr);
            point[p][idx] = orig;
            report.evaluations += 2;
            if (!std::isfinite(plus) || !std::isfinite(minus)) {
                throw NumericError("grad_check: non-finite loss while perturbing parameter " + std::to_string(p) +
                                   " entry " + std::to_string(idx));
            }
            const double numeric = (plus - minus) / (2.0 * opts.eps);
            const double err = relative_error(analytic[p][idx], numeric);
            report.per_param[p] = std::max(report.per_param[p], err);
            if (err > report.max_rel_error) {
                report.max_rel_error = err;
                report.worst_param = p;
                report.worst_index = idx;
            }
        }
    }
    return report;
}

}  // namespace mose
