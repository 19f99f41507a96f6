#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mose/config.hpp"
#include "mose/grad_check.hpp"
#include "mose/metrics.hpp"
#include "mose/model.hpp"
#include "mose/synthdata.hpp"
#include "mose/trainer.hpp"

namespace mose {

inline Tensor foreground(const Tensor& mask) {
    Tensor fg = Tensor::zeros_like(mask);
    for (std::size_t i = 0; i < mask.size(); ++i) fg[i] = mask[i] != 0.0 ? 1.0 : 0.0;
    return fg;
}

using SampleHook = std::function<void(const Sample&, const Inference&)>;

/// Scores one split; the codings of every sample are appended to `codings`.
inline DomainScores score_split(const std::string& name, const std::vector<Sample>& samples, const ModelParams& params,
                                const ModelConfig& cfg, std::vector<SparseCoding>& codings,
                                const SampleHook& hook = {}) {
    std::vector<double> dice, hd;
    for (const Sample& s : samples) {
        Inference inf = infer(s.image, params, cfg);
        const Tensor gt = foreground(s.mask);
        const Tensor pred = foreground(inf.mask);
        dice.push_back(dice_coeff(pred, gt));
        hd.push_back(hausdorff(pred, gt));
        if (hook) hook(s, inf);
        if (cfg.prompt_mode == PromptMode::Shape) codings.push_back(std::move(inf.output.coding));
    }
    DomainScores d;
    d.domain = name;
    d.samples = samples.size();
    std::tie(d.dice_mean, d.dice_std) = mean_std(dice);
    std::tie(d.hd_mean, d.hd_std) = mean_std(hd);
    return d;
}

/// Source validation plus each target's test split. Utilization covers every
/// evaluated sample; it stays empty for the zero-prompt baseline.
inline EvalReport evaluate(const ModelParams& params, const ModelConfig& cfg, const Benchmark& bench,
                           const SampleHook& hook = {}) {
    if (bench.config.image_size != cfg.image_size) {
        throw ConfigError("checkpoint expects " + std::to_string(cfg.image_size) + "px images, dataset has " +
                          std::to_string(bench.config.image_size) + "px");
    }
    EvalReport r;
    std::vector<SparseCoding> codings;
    r.domains.push_back(score_split("source_val", bench.source_val, params, cfg, codings, hook));
    for (const TargetDomain& t : bench.targets) r.domains.push_back(score_split(t.spec.name, t.test, params, cfg, codings, hook));
    if (!codings.empty()) r.utilization = utilization_report(codings);
    return r;
}

struct RunResult {
    TrainState state;
    std::vector<LogRow> log;
    EvalReport report;
};

/// Train from scratch on the benchmark's source split, then evaluate.
inline RunResult run_experiment(const TrainConfig& cfg, const Benchmark& bench, const TrainHooks& hooks = {}) {
    RunResult r;
    r.state = init_train_state(cfg);
    const TrainingSet data = TrainingSet::from_samples(bench.source_train, cfg.model.classes);
    r.log = train(r.state, cfg, data, hooks);
    r.report = evaluate(r.state.params, cfg.model, bench);
    return r;
}

// ---------------------------------------------------------------------------
// Full-model gradient check

enum class GradcheckStatus { Pass, Fail, Inconclusive };

struct GroupError {
    std::string name;
    double max_rel_error = 0.0;
};

struct PhaseCheck {
    Phase phase = Phase::Warmup;
    GradcheckStatus status = GradcheckStatus::Inconclusive;
    std::size_t attempts = 0;
    std::vector<GroupError> groups;
    double max_rel_error = 0.0;
};

inline ModelConfig gradcheck_model(const GradcheckConfig& gc) {
    ModelConfig m;
    m.image_size = gc.image_size;
    m.n = gc.n;
    m.k = gc.k;
    m.enc_channels = gc.width;
    m.embed_channels = 2 * gc.width;
    m.gate_hidden = 2 * gc.width;
    m.dec_channels1 = 2 * gc.width;
    m.dec_channels2 = gc.width;
    m.validate();
    return m;
}

inline constexpr double kTieMargin = 1e-4;

/// True when some gating entry sits within the tie margin of a kink: the Top-K
/// boundary or zero for retained entries (sparse), zero for any entry (warm-up).
inline bool near_kink(const Tensor& gating, std::size_t k, Phase phase) {
    const std::size_t n = gating.dim(2), pixels = gating.dim(0) * gating.dim(1);
    std::vector<double> mag(n);
    for (std::size_t p = 0; p < pixels; ++p) {
        for (std::size_t j = 0; j < n; ++j) mag[j] = std::abs(gating[p * n + j]);
        std::sort(mag.begin(), mag.end(), std::greater<>());
        const std::size_t live = phase == Phase::Warmup ? n : k;
        if (mag[live - 1] < kTieMargin) return true;
        if (phase == Phase::Sparse && k < n && mag[k - 1] - mag[k] < kTieMargin) return true;
    }
    return false;
}

inline PhaseCheck gradcheck_phase(const GradcheckConfig& gc, Phase phase, std::uint64_t seed) {
    const ModelConfig model = gradcheck_model(gc);
    LossConfig loss;
    loss.beta = gc.beta;
    loss.t_warmup = 1;
    const std::uint64_t iteration = phase == Phase::Warmup ? 1 : 2;

    PhaseCheck out;
    out.phase = phase;
    const Rng root = Rng(seed).split(phase == Phase::Warmup ? 0x574d : 0x5350);
    for (std::size_t attempt = 0; attempt < gc.retries; ++attempt) {
        out.attempts = attempt + 1;
        Rng rng = root.split(attempt);
        const ModelParams params = init_params(model, rng.split(streams::kInit));
        std::vector<Tensor> images;
        std::vector<SampleTargets> targets;
        bool tie = false;
        for (std::size_t b = 0; b < gc.batch; ++b) {
            Tensor x({1, gc.image_size, gc.image_size});
            Tensor mask({gc.image_size, gc.image_size});
            const double threshold = rng.uniform(0.3, 0.7);
            for (std::size_t i = 0; i < x.size(); ++i) {
                x[i] = rng.uniform();
                mask[i] = rng.uniform() < threshold ? 1.0 : 0.0;
            }
            const Tensor field = gate(encode(x, params.encoder), params.gating);
            tie = tie || near_kink(field, model.k, phase);
            images.push_back(std::move(x));
            targets.push_back(make_targets(mask, model.classes));
        }
        if (tie) continue;

        const Objective obj =
            batch_objective(params, model, loss, images, targets, iteration, gc.corrupt_grad ? 2.0 : 1.0);
        GradCheckOptions opts;
        opts.eps = gc.eps;
        opts.max_entries_per_param = gc.max_entries;
        opts.seed = seed;
        const GradCheckReport rep = grad_check(obj, flatten(params), opts);
        const auto names = param_names();
        for (std::size_t i = 0; i < names.size(); ++i) out.groups.push_back({names[i], rep.per_param[i]});
        out.max_rel_error = rep.max_rel_error;
        out.status = rep.max_rel_error < gc.tol ? GradcheckStatus::Pass : GradcheckStatus::Fail;
        return out;
    }
    return out;
}

inline std::vector<PhaseCheck> run_gradcheck(const GradcheckConfig& gc, std::uint64_t seed) {
    if (gc.phase != "warmup" && gc.phase != "sparse" && gc.phase != "both") {
        throw ConfigError("phase must be warmup, sparse or both, got '" + gc.phase + "'");
    }
    if (gc.image_size > 32 || gc.n > 8) throw ConfigError("gradcheck expects a tiny config (image_size <= 32, n <= 8)");
    if (gc.retries == 0) throw ConfigError("gc_retries must be positive");
    std::vector<PhaseCheck> out;
    if (gc.phase != "sparse") out.push_back(gradcheck_phase(gc, Phase::Warmup, seed));
    if (gc.phase != "warmup") out.push_back(gradcheck_phase(gc, Phase::Sparse, seed));
    return out;
}

// ---------------------------------------------------------------------------
// Ablation sweeps

struct SweepPoint {
    std::size_t n = 0, k = 0;
    double beta = 0.0;
    std::uint64_t t_warmup = 0;
    bool no_moe() const { return n == k; }
};

struct SweepRow {
    SweepPoint point;
    double avg_target_dice = 0.0;
    double avg_target_hd = 0.0;
    double source_val_dice = 0.0;
    double final_usage_cv = 0.0;
    std::size_t dead_experts = 0;
};

inline const char* kSweepHeader =
    "n,k,beta,t_warmup,no_moe,avg_target_dice,avg_target_hd,source_val_dice,final_usage_cv,dead_experts";

/// Cartesian grid in n, k, beta, t_warmup order; points with k > n are dropped.
/// An empty k list means k = n/2 for every n.
inline std::vector<SweepPoint> sweep_grid(const SweepConfig& s) {
    std::vector<SweepPoint> pts;
    for (std::size_t n : s.n) {
        const std::vector<std::size_t> ks = s.k.empty() ? std::vector<std::size_t>{std::max<std::size_t>(1, n / 2)} : s.k;
        for (std::size_t k : ks)
            for (double beta : s.beta)
                for (std::uint64_t tw : s.t_warmup)
                    if (k >= 1 && k <= n) pts.push_back({n, k, beta, tw});
    }
    if (pts.empty()) throw ConfigError("sweep grid is empty");
    return pts;
}

inline void write_sweep_row(std::ostream& out, const SweepRow& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%llu,%s,%.17g,%.17g,%.17g,%.17g,%zu\n", r.point.n, r.point.k,
                  r.point.beta, static_cast<unsigned long long>(r.point.t_warmup), r.point.no_moe() ? "true" : "false",
                  r.avg_target_dice, r.avg_target_hd, r.source_val_dice, r.final_usage_cv, r.dead_experts);
    out << buf;
}

inline SweepRow sweep_point(const TrainConfig& base, const SweepPoint& pt, const Benchmark& bench) {
    TrainConfig cfg = base;
    cfg.model.n = pt.n;
    cfg.model.k = pt.k;
    cfg.loss.beta = pt.beta;
    cfg.loss.t_warmup = pt.t_warmup;
    const RunResult r = run_experiment(cfg, bench);
    SweepRow row;
    row.point = pt;
    row.avg_target_dice = r.report.avg_target_dice();
    row.avg_target_hd = r.report.avg_target_hd();
    row.source_val_dice = r.report.domains.front().dice_mean;
    row.final_usage_cv = r.log.empty() ? 0.0 : r.log.back().usage_cv;
    row.dead_experts = r.report.utilization.dead_experts;
    return row;
}

}  // namespace mose
