#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mose/config.hpp"
#include "mose/grad_check.hpp"
#include "mose/graph.hpp"
#include "mose/losses.hpp"
#include "mose/model.hpp"
#include "mose/optim.hpp"
#include "mose/rng.hpp"
#include "mose/synthdata.hpp"

namespace mose {

namespace streams {
inline constexpr std::uint64_t kInit = 0x494e4954;
inline constexpr std::uint64_t kShuffle = 0x53485546;
}  // namespace streams

struct TrainState {
    ModelParams params;
    ModelParams adam_m;
    ModelParams adam_v;
    std::uint64_t iteration = 0;  // optimizer steps taken so far
    Rng::State rng;

    Phase phase(const LossConfig& loss) const { return phase_for(iteration, loss.t_warmup); }
};

inline TrainState init_train_state(const TrainConfig& cfg) {
    cfg.validate();
    TrainState s;
    const Rng rng(cfg.seed);
    s.params = init_params(cfg.model, rng.split(streams::kInit));
    s.adam_m = zeros_like(s.params);
    s.adam_v = zeros_like(s.params);
    s.rng = rng.state();
    return s;
}

inline std::vector<Tensor> flatten(const ModelParams& p) {
    std::vector<Tensor> out;
    out.reserve(kParamCount);
    visit_params([&out](const char*, const Tensor& t) { out.push_back(t); }, p);
    return out;
}

inline ModelParams unflatten(std::span<const Tensor> flat, const ModelParams& like) {
    if (flat.size() != kParamCount) throw DimensionError("unflatten: wrong parameter count");
    ModelParams p = like;
    std::size_t i = 0;
    visit_params(
        [&](const char* name, Tensor& t) {
            t.require_same_shape(flat[i], name);
            t = flat[i++];
        },
        p);
    return p;
}

inline std::vector<std::string> param_names() {
    std::vector<std::string> names;
    ModelParams dummy;
    visit_params([&names](const char* name, const Tensor&) { names.emplace_back(name); }, dummy);
    return names;
}

/// One-hot [C, H, W] labels and the 4x average-pooled foreground target [h, w].
inline SampleTargets make_targets(const Tensor& mask, std::size_t classes) {
    require_rank(mask, 2, "mask");
    const std::size_t h = mask.dim(0), w = mask.dim(1), hw = h * w;
    SampleTargets t{Tensor({classes, h, w}), Tensor()};
    for (std::size_t p = 0; p < hw; ++p) {
        const auto cls = static_cast<std::size_t>(mask[p]);
        if (cls >= classes || static_cast<double>(cls) != mask[p]) throw ValidationError("mask holds an invalid class id");
        t.one_hot[cls * hw + p] = 1.0;
    }
    Tensor fg({1, h, w});
    for (std::size_t p = 0; p < hw; ++p) fg[p] = mask[p] != 0.0 ? 1.0 : 0.0;
    const Tensor pooled = kernels::avg_pool2d(fg, kExpertDownsample);
    t.shape_target = pooled.reshaped({pooled.dim(1), pooled.dim(2)});
    return t;
}

struct BatchLoss {
    double total = 0.0;
    double seg_sam = 0.0;
    double seg_shape = 0.0;
    double penalty = 0.0;
    double usage_cv = 0.0;
    Phase phase = Phase::Warmup;
    ModelParams grads;
    std::vector<SparseCoding> codings;
};

/// Builds one graph over the whole batch (the CV term couples samples) and
/// returns the loss terms plus, when requested, parameter gradients.
inline BatchLoss batch_loss(const ModelParams& params, const ModelConfig& model, const LossConfig& loss,
                            std::span<const Tensor> images, std::span<const SampleTargets> targets,
                            std::uint64_t iteration, bool want_grads = true) {
    if (images.size() != targets.size() || images.empty()) throw DimensionError("batch_loss: inconsistent batch");
    Graph g;
    const ParamNodes nodes = bind_params(g, params);
    const Phase phase = phase_for(iteration, loss.t_warmup);
    std::vector<SampleHeads> heads;
    BatchLoss out;
    for (const Tensor& x : images) {
        ForwardNodes f = forward(g, nodes, g.constant(x), model, phase);
        heads.push_back({f.logits, f.shape_map, f.coding});
        if (model.prompt_mode == PromptMode::Shape) out.codings.push_back(std::move(f.coding_value));
    }
    const TotalLoss tl = total_loss(g, heads, targets, loss, iteration, model.prompt_mode == PromptMode::Shape);
    out.total = g.value(tl.total).item();
    out.seg_sam = g.value(tl.seg_sam).item();
    out.seg_shape = g.value(tl.seg_shape).item();
    out.penalty = g.value(tl.penalty).item();
    out.usage_cv = tl.usage_cv;
    out.phase = tl.phase;
    if (want_grads) {
        g.backward(tl.total);
        out.grads = collect_grads(g, nodes, params);
    }
    return out;
}

/// Objective over the flattened parameter list, for grad_check.
inline Objective batch_objective(const ModelParams& like, const ModelConfig& model, const LossConfig& loss,
                                 std::vector<Tensor> images, std::vector<SampleTargets> targets,
                                 std::uint64_t iteration, double grad_scale = 1.0) {
    return [=](std::span<const Tensor> flat, std::vector<Tensor>* grads) {
        const ModelParams p = unflatten(flat, like);
        BatchLoss bl = batch_loss(p, model, loss, images, targets, iteration, grads != nullptr);
        if (grads) {
            *grads = flatten(bl.grads);
            for (Tensor& t : *grads) t *= grad_scale;
        }
        return bl.total;
    };
}

inline std::size_t batches_per_epoch(std::size_t n_train, std::size_t batch_size) {
    return std::max<std::size_t>(1, n_train / batch_size);
}

/// Sample indices of the batch consumed at `iteration` (1-based). Each epoch is
/// a fresh permutation drawn from the shuffle stream keyed by epoch number.
inline std::vector<std::size_t> batch_indices(const TrainConfig& cfg, const Rng::State& rng_state, std::size_t n_train,
                                              std::uint64_t iteration) {
    const std::size_t per_epoch = batches_per_epoch(n_train, cfg.batch_size);
    const std::uint64_t epoch = (iteration - 1) / per_epoch;
    const std::size_t slot = (iteration - 1) % per_epoch;
    std::vector<std::size_t> perm(n_train);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng::from_state(rng_state).split(streams::kShuffle).split(epoch).shuffle(std::span<std::size_t>(perm));
    const std::size_t take = std::min(cfg.batch_size, n_train);
    return {perm.begin() + static_cast<std::ptrdiff_t>(slot * take),
            perm.begin() + static_cast<std::ptrdiff_t>(slot * take + take)};
}

inline std::uint64_t total_iterations(const TrainConfig& cfg, std::size_t n_train) {
    const std::uint64_t by_epochs = cfg.max_epochs ? cfg.max_epochs * batches_per_epoch(n_train, cfg.batch_size) : 0;
    if (!cfg.max_iterations) return by_epochs;
    if (!by_epochs) return cfg.max_iterations;
    return std::min<std::uint64_t>(cfg.max_iterations, by_epochs);
}

struct LogRow {
    std::uint64_t iteration = 0;
    Phase phase = Phase::Warmup;
    double loss_total = 0.0;
    double loss_seg_sam = 0.0;
    double loss_seg_shape = 0.0;
    double penalty = 0.0;
    double usage_cv = 0.0;
    double wall_ms = 0.0;
};

inline const char* kLogHeader = "iteration,phase,loss_total,loss_seg_sam,loss_seg_shape,penalty,usage_cv,wall_ms";

inline void write_log_row(std::ostream& out, const LogRow& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%llu,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f\n",
                  static_cast<unsigned long long>(r.iteration), phase_name(r.phase), r.loss_total, r.loss_seg_sam,
                  r.loss_seg_shape, r.penalty, r.usage_cv, r.wall_ms);
    out << buf;
}

/// Source samples with precomputed targets.
struct TrainingSet {
    std::vector<Tensor> images;
    std::vector<SampleTargets> targets;

    static TrainingSet from_samples(std::span<const Sample> samples, std::size_t classes) {
        TrainingSet ts;
        for (const Sample& s : samples) {
            ts.images.push_back(s.image);
            ts.targets.push_back(make_targets(s.mask, classes));
        }
        return ts;
    }
};

inline double global_norm(const ModelParams& grads) {
    double sq = 0.0;
    visit_params(
        [&sq](const char*, const Tensor& t) {
            for (double v : t.data()) sq += v * v;
        },
        grads);
    return std::sqrt(sq);
}

/// Advances the state by one optimizer step. Only adamw_step writes parameters.
inline LogRow train_step(TrainState& state, const TrainConfig& cfg, const TrainingSet& data) {
    const auto start = std::chrono::steady_clock::now();
    const std::uint64_t it = state.iteration + 1;
    const auto idx = batch_indices(cfg, state.rng, data.images.size(), it);
    std::vector<Tensor> images;
    std::vector<SampleTargets> targets;
    for (std::size_t i : idx) {
        images.push_back(data.images[i]);
        targets.push_back(data.targets[i]);
    }
    BatchLoss bl = batch_loss(state.params, cfg.model, cfg.loss, images, targets, it);
    if (!std::isfinite(bl.total)) throw NumericError("non-finite loss at iteration " + std::to_string(it));
    if (cfg.grad_clip > 0.0) {
        const double norm = global_norm(bl.grads);
        if (norm > cfg.grad_clip) {
            const double s = cfg.grad_clip / norm;
            visit_params([s](const char*, Tensor& t) { t *= s; }, bl.grads);
        }
    }
    visit_params(
        [&](const char* name, Tensor& p, const Tensor& g, Tensor& m, Tensor& v) {
            adamw_step(p, g, m, v, cfg.optim, it, name);
        },
        state.params, bl.grads, state.adam_m, state.adam_v);
    state.iteration = it;
    const auto stop = std::chrono::steady_clock::now();
    return LogRow{it,         bl.phase,   bl.total, bl.seg_sam, bl.seg_shape, bl.penalty, bl.usage_cv,
                  std::chrono::duration<double, std::milli>(stop - start).count()};
}

struct TrainHooks {
    std::function<void(const LogRow&)> on_row;
    std::function<void(const TrainState&)> on_checkpoint;  // at checkpoint_every cadence
};

/// Runs until `until` steps have been taken in total (default: the configured budget).
inline std::vector<LogRow> train(TrainState& state, const TrainConfig& cfg, const TrainingSet& data,
                                 const TrainHooks& hooks = {}, std::uint64_t until = 0) {
    cfg.validate();
    if (data.images.empty()) throw ConfigError("train: empty training set");
    const std::uint64_t last = until ? until : total_iterations(cfg, data.images.size());
    std::vector<LogRow> log;
    while (state.iteration < last) {
        LogRow row = train_step(state, cfg, data);
        if (hooks.on_row) hooks.on_row(row);
        log.push_back(row);
        if (cfg.checkpoint_every && state.iteration % cfg.checkpoint_every == 0 && hooks.on_checkpoint) {
            hooks.on_checkpoint(state);
        }
    }
    return log;
}

}  // namespace mose
