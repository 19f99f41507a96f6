#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mose/error.hpp"
#include "mose/graph.hpp"
#include "mose/kernels.hpp"
#include "mose/tensor.hpp"

namespace mose {

struct LossConfig {
    double lambda = 0.8;  // Dice weight; CE gets 1 - lambda
    double beta = 1e-2;   // regularizer weight
    std::uint64_t t_warmup = 500;
    double dice_smooth = 1e-5;

    void validate() const {
        if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
        if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
        if (!(dice_smooth >= 0.0)) throw ConfigError("dice_smooth must be non-negative");
    }
};

enum class Phase { Warmup, Sparse };

inline const char* phase_name(Phase p) { return p == Phase::Warmup ? "warmup" : "sparse"; }

/// Dense gating with the l1 penalty up to and including t_warmup; Top-K with CV after.
inline Phase phase_for(std::uint64_t iteration, std::uint64_t t_warmup) {
    return iteration <= t_warmup ? Phase::Warmup : Phase::Sparse;
}

struct ValueGrad {
    double value = 0.0;
    Tensor grad;
};

inline void validate_one_hot(const Tensor& y) {
    require_rank(y, 3, "one-hot labels");
    const std::size_t c = y.dim(0), hw = y.dim(1) * y.dim(2);
    for (std::size_t p = 0; p < hw; ++p) {
        double total = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double v = y[ch * hw + p];
            if (v != 0.0 && v != 1.0) throw ValidationError("labels are not one-hot at pixel " + std::to_string(p));
            total += v;
        }
        if (total != 1.0) throw ValidationError("labels are not one-hot at pixel " + std::to_string(p));
    }
}

/// Mean over pixels of -log softmax(logits)[true class].
inline ValueGrad ce_loss_with_grad(const Tensor& logits, const Tensor& y) {
    require_rank(logits, 3, "ce_loss logits");
    logits.require_same_shape(y, "ce_loss labels");
    validate_one_hot(y);
    const std::size_t c = logits.dim(0), hw = logits.dim(1) * logits.dim(2);
    const double inv = 1.0 / static_cast<double>(hw);
    ValueGrad out{0.0, Tensor::zeros_like(logits)};
    for (std::size_t p = 0; p < hw; ++p) {
        double mx = logits[p];
        for (std::size_t ch = 1; ch < c; ++ch) mx = std::max(mx, logits[ch * hw + p]);
        double z = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) z += std::exp(logits[ch * hw + p] - mx);
        const double log_z = mx + std::log(z);
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double logit = logits[ch * hw + p];
            const double prob = std::exp(logit - log_z);
            const double target = y[ch * hw + p];
            if (target == 1.0) out.value += log_z - logit;
            out.grad[ch * hw + p] = (prob - target) * inv;
        }
    }
    out.value *= inv;
    return out;
}

inline double ce_loss(const Tensor& logits, const Tensor& y) { return ce_loss_with_grad(logits, y).value; }

/// Mean binary cross-entropy of sigmoid(map) against soft targets in [0, 1].
inline ValueGrad binary_ce_with_logits_with_grad(const Tensor& map, const Tensor& target) {
    map.require_same_shape(target, "binary_ce target");
    const double inv = 1.0 / static_cast<double>(map.size());
    ValueGrad out{0.0, Tensor::zeros_like(map)};
    for (std::size_t i = 0; i < map.size(); ++i) {
        const double x = map[i], y = target[i];
        if (!(y >= 0.0 && y <= 1.0)) throw ValidationError("binary_ce: target outside [0, 1]");
        const double softplus = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
        out.value += softplus - y * x;
        out.grad[i] = (kernels::sigmoid(x) - y) * inv;
    }
    out.value *= inv;
    return out;
}

/// 1 - (2 sum p y + s) / (sum p + sum y + s), averaged over foreground channels.
/// Rank-2 inputs are one foreground map; rank-3 [C,H,W] uses channels 1..C-1
/// (channel 0 when C == 1).
inline ValueGrad dice_loss_with_grad(const Tensor& probs, const Tensor& y, double smooth) {
    probs.require_same_shape(y, "dice_loss labels");
    for (double p : probs.data())
        if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("dice_loss: probabilities outside [0, 1]");
    std::size_t channels = 1, first = 0, plane = probs.size();
    if (probs.rank() == 3) {
        channels = probs.dim(0);
        plane = probs.dim(1) * probs.dim(2);
        first = channels > 1 ? 1 : 0;
    } else if (probs.rank() != 2) {
        throw DimensionError("dice_loss: expected rank 2 or 3, got " + shape_str(probs.shape()));
    }
    const double count = static_cast<double>(channels - first);
    ValueGrad out{0.0, Tensor::zeros_like(probs)};
    for (std::size_t ch = first; ch < channels; ++ch) {
        const std::size_t off = ch * plane;
        double inter = 0.0, sp = 0.0, sy = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
            inter += probs[off + i] * y[off + i];
            sp += probs[off + i];
            sy += y[off + i];
        }
        const double num = 2.0 * inter + smooth, den = sp + sy + smooth;
        out.value += (1.0 - num / den) / count;
        for (std::size_t i = 0; i < plane; ++i) {
            out.grad[off + i] = -(2.0 * y[off + i] * den - num) / (den * den) / count;
        }
    }
    return out;
}

inline double dice_loss(const Tensor& probs, const Tensor& y, double smooth) {
    return dice_loss_with_grad(probs, y, smooth).value;
}

/// (1 - lambda) * CE + lambda * Dice.
inline double seg_loss(double ce, double dice, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("seg_loss: lambda must lie in [0, 1]");
    return (1.0 - lambda) * ce + lambda * dice;
}

/// Per-expert sums of absolute gating weight, accumulated over samples.
struct UtilizationAccumulator {
    Tensor sums;
    std::size_t count = 0;

    explicit UtilizationAccumulator(std::size_t n) : sums({n}) {}

    void add(const Tensor& coding) {
        require_rank(coding, 3, "utilization coding");
        require_axis(coding, 2, sums.size(), "utilization coding (expert count)");
        const std::size_t n = sums.size(), pixels = coding.dim(0) * coding.dim(1);
        for (std::size_t p = 0; p < pixels; ++p)
            for (std::size_t j = 0; j < n; ++j) sums[j] += std::abs(coding[p * n + j]);
        ++count;
    }
};

/// Population variance over squared mean. All-zero input is defined as 0 with zero gradient.
inline ValueGrad cv_penalty_with_grad(const Tensor& alpha) {
    require_rank(alpha, 1, "cv_penalty utilization");
    const std::size_t n = alpha.size();
    const double nd = static_cast<double>(n);
    ValueGrad out{0.0, Tensor::zeros_like(alpha)};
    double total = 0.0;
    for (double a : alpha.data()) total += a;
    const double mean = total / nd;
    if (mean == 0.0) return out;
    double var = 0.0;
    for (double a : alpha.data()) var += (a - mean) * (a - mean);
    var /= nd;
    const double m2 = mean * mean;
    out.value = var / m2;
    for (std::size_t j = 0; j < n; ++j) {
        out.grad[j] = 2.0 * (alpha[j] - mean) / (nd * m2) - 2.0 * var / (nd * m2 * mean);
    }
    return out;
}

inline double cv_penalty(const Tensor& alpha) { return cv_penalty_with_grad(alpha).value; }

inline double cv_penalty(const UtilizationAccumulator& acc) { return cv_penalty(acc.sums); }

/// Sum of absolute values over all gating fields.
inline double l1_penalty(std::span<const Tensor> fields) {
    double total = 0.0;
    for (const Tensor& f : fields)
        for (double v : f.data()) total += std::abs(v);
    return total;
}

inline double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

namespace ops {

namespace detail {
inline NodeId scalar_loss(Graph& g, const char* name, NodeId input, ValueGrad vg) {
    return g.apply(name, Tensor::scalar(vg.value), {input},
                   [input, grad = std::move(vg.grad)](Graph& gr, NodeId, const Tensor& gout) {
                       Tensor gin = grad;
                       gin *= gout[0];
                       gr.accumulate(input, gin);
                   });
}
}  // namespace detail

inline NodeId ce_loss(Graph& g, NodeId logits, const Tensor& y) {
    return detail::scalar_loss(g, "ce_loss", logits, ce_loss_with_grad(g.value(logits), y));
}

inline NodeId binary_ce_with_logits(Graph& g, NodeId map, const Tensor& target) {
    return detail::scalar_loss(g, "binary_ce", map, binary_ce_with_logits_with_grad(g.value(map), target));
}

inline NodeId dice_loss(Graph& g, NodeId probs, const Tensor& y, double smooth) {
    return detail::scalar_loss(g, "dice_loss", probs, dice_loss_with_grad(g.value(probs), y, smooth));
}

inline NodeId seg_loss(Graph& g, NodeId ce, NodeId dice, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("seg_loss: lambda must lie in [0, 1]");
    return add(g, scale(g, ce, 1.0 - lambda), scale(g, dice, lambda));
}

/// alpha_j = sum over pixels of |coding[p, j]|; shape [n].
inline NodeId utilization(Graph& g, NodeId coding) {
    const Tensor& c = g.value(coding);
    UtilizationAccumulator acc(c.dim(2));
    acc.add(c);
    return g.apply("utilization", std::move(acc.sums), {coding}, [coding](Graph& gr, NodeId, const Tensor& gout) {
        const Tensor& cv = gr.value(coding);
        const std::size_t n = cv.dim(2);
        Tensor gin = Tensor::zeros_like(cv);
        for (std::size_t i = 0; i < cv.size(); ++i) gin[i] = gout[i % n] * sign(cv[i]);
        gr.accumulate(coding, gin);
    });
}

inline NodeId cv_penalty(Graph& g, NodeId alpha) {
    return detail::scalar_loss(g, "cv_penalty", alpha, cv_penalty_with_grad(g.value(alpha)));
}

inline NodeId l1_penalty(Graph& g, NodeId coding) {
    const Tensor& c = g.value(coding);
    ValueGrad vg{l1_penalty(std::span<const Tensor>(&c, 1)), Tensor::zeros_like(c)};
    for (std::size_t i = 0; i < c.size(); ++i) vg.grad[i] = sign(c[i]);
    return detail::scalar_loss(g, "l1_penalty", coding, std::move(vg));
}

}  // namespace ops

/// Per-sample graph outputs that enter the training objective.
struct SampleHeads {
    NodeId logits;     // [C, H, W]
    NodeId shape_map;  // [h, w], pre-activation
    NodeId coding;     // [h, w, n], dense in warm-up, sparsified afterwards
};

struct SampleTargets {
    Tensor one_hot;       // [C, H, W]
    Tensor shape_target;  // [h, w], foreground mask average-pooled to expert resolution
};

struct TotalLoss {
    NodeId total;
    NodeId seg_sam;
    NodeId seg_shape;  // only meaningful when the shape branch is on
    NodeId penalty;    // unweighted active regularizer
    double usage_cv = 0.0;
    Phase phase = Phase::Warmup;
    bool shape_branch = true;
};

/// sum_i [seg(logits_i) + seg(shape_i)] + beta * (l1 if iteration <= t_warmup else CV).
/// With shape_branch off only the first segmentation term remains (zero-prompt baseline).
inline TotalLoss total_loss(Graph& g, std::span<const SampleHeads> heads, std::span<const SampleTargets> targets,
                            const LossConfig& cfg, std::uint64_t iteration, bool shape_branch = true) {
    cfg.validate();
    if (heads.empty() || heads.size() != targets.size()) throw DimensionError("total_loss: inconsistent batch");
    TotalLoss out;
    out.phase = phase_for(iteration, cfg.t_warmup);
    out.shape_branch = shape_branch;
    std::vector<NodeId> sam_terms, shape_terms, l1_terms, util_terms;
    for (std::size_t i = 0; i < heads.size(); ++i) {
        const NodeId probs = ops::softmax_channels(g, heads[i].logits);
        sam_terms.push_back(ops::seg_loss(g, ops::ce_loss(g, heads[i].logits, targets[i].one_hot),
                                          ops::dice_loss(g, probs, targets[i].one_hot, cfg.dice_smooth), cfg.lambda));
        if (!shape_branch) continue;
        const NodeId prompt = ops::sigmoid(g, heads[i].shape_map);
        shape_terms.push_back(ops::seg_loss(g, ops::binary_ce_with_logits(g, heads[i].shape_map, targets[i].shape_target),
                                            ops::dice_loss(g, prompt, targets[i].shape_target, cfg.dice_smooth),
                                            cfg.lambda));
        util_terms.push_back(ops::utilization(g, heads[i].coding));
        if (out.phase == Phase::Warmup) l1_terms.push_back(ops::l1_penalty(g, heads[i].coding));
    }
    out.seg_sam = ops::sum(g, sam_terms);
    if (!shape_branch) {
        out.seg_shape = g.constant(Tensor::scalar(0.0));
        out.penalty = g.constant(Tensor::scalar(0.0));
        out.total = out.seg_sam;
        return out;
    }
    out.seg_shape = ops::sum(g, shape_terms);
    const NodeId alpha = ops::sum(g, util_terms);
    out.usage_cv = cv_penalty(g.value(alpha));
    out.penalty = out.phase == Phase::Warmup ? ops::sum(g, l1_terms) : ops::cv_penalty(g, alpha);
    const std::vector<NodeId> parts{out.seg_sam, out.seg_shape, ops::scale(g, out.penalty, cfg.beta)};
    out.total = ops::sum(g, parts);
    return out;
}

}  // namespace mose
