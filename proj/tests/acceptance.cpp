// Acceptance runner: one PASS/FAIL line per criterion.
//   mose_acceptance            criteria 1-9
//   mose_acceptance --slow     also criterion 10 (dictionary-size sweep)
//   mose_acceptance --only N   a single criterion

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mose/mose.hpp"

using namespace mose;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

const std::vector<std::uint64_t> kSeeds{1, 2, 3};

std::string config_path(const char* name) { return std::string(MOSE_SOURCE_DIR) + "/configs/" + name; }

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

void note(const std::string& s) {
    std::cout << "    " << s << "\n";
    std::cout.flush();
}

// ---------------------------------------------------------------------------

Verdict gradient_correctness() {
    const auto t0 = Clock::now();
    const RunConfig rc = load_config_file(config_path("tiny.json"));
    const auto phases = run_gradcheck(rc.gradcheck, rc.train.seed);
    bool ok = phases.size() == 2;
    double worst = 0.0;
    for (const PhaseCheck& pc : phases) {
        for (const GroupError& g : pc.groups) {
            worst = std::max(worst, g.max_rel_error);
            if (!(g.max_rel_error < 1e-4)) {
                ok = false;
                note(fmt("%s %s: %.3e", phase_name(pc.phase), g.name.c_str(), g.max_rel_error));
            }
        }
        ok = ok && pc.status == GradcheckStatus::Pass;
        note(fmt("%s phase: max rel error %.3e over %zu groups, %zu attempt(s)", phase_name(pc.phase), pc.max_rel_error,
                 pc.groups.size(), pc.attempts));
    }
    const double secs = seconds_since(t0);
    ok = ok && secs < 120.0;
    return {ok, fmt("max rel error %.3e (< 1e-4), %.1fs (< 120s)", worst, secs)};
}

Verdict topk_semantics() {
    Rng rng(2024);
    const std::size_t n = 12, k = 5;
    // Quantized values force plenty of exact ties.
    Tensor field({10, 100, n});
    for (double& v : field.data()) v = std::round(rng.uniform(-4.0, 4.0) * 2.0) / 2.0;
    const SparseCoding sc = topk_sparsify(field, k);
    std::size_t mismatches = 0, over = 0;
    for (std::size_t p = 0; p < 1000; ++p) {
        std::vector<std::uint32_t> order(n);
        for (std::uint32_t j = 0; j < n; ++j) order[j] = j;
        std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
            return std::abs(field[p * n + a]) > std::abs(field[p * n + b]);
        });
        std::vector<double> expect(n, 0.0);
        for (std::size_t r = 0; r < k; ++r) expect[order[r]] = field[p * n + order[r]];
        std::size_t nonzero = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (sc.dense[p * n + j] != expect[j]) ++mismatches;
            nonzero += sc.dense[p * n + j] != 0.0;
        }
        if (nonzero > k) ++over;
    }
    Tensor dense({16, 16, n});
    for (double& v : dense.data()) v = rng.uniform(-1.0, 1.0);
    const Tensor experts = make_expert_bank(n, 16, 16, rng.split(1));
    const bool identical = compose_shape_map(topk_sparsify(dense, n), experts) == compose_shape_map(dense, experts);
    return {mismatches == 0 && over == 0 && identical,
            fmt("1000 pixels: %zu oracle mismatches, %zu over-k pixels; k=n bit-identical: %s", mismatches, over,
                identical ? "yes" : "no")};
}

Verdict cv_correctness() {
    const double uniform = cv_penalty(Tensor({5}, 2.5));
    const double pair = cv_penalty(Tensor({2}, std::vector<double>{1.0, 3.0}));
    Rng rng(6);
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
        Tensor a({8});
        for (double& v : a.data()) v = rng.uniform(0.01, 5.0);
        const double c = rng.uniform(1e-3, 1e3);
        Tensor b = a;
        b *= c;
        worst = std::max(worst, std::abs(cv_penalty(a) - cv_penalty(b)));
    }
    return {uniform == 0.0 && pair == 0.25 && worst <= 1e-12,
            fmt("uniform %.3g, [1,3] -> %.17g, scale drift %.3e", uniform, pair, worst)};
}

double brute_dice(const Tensor& p, const Tensor& g) {
    double inter = 0, a = 0, b = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        inter += (p[i] != 0 && g[i] != 0);
        a += p[i] != 0;
        b += g[i] != 0;
    }
    return a + b == 0 ? 1.0 : 2 * inter / (a + b);
}

double brute_hausdorff(const Tensor& p, const Tensor& g) {
    const long h = static_cast<long>(p.dim(0)), w = static_cast<long>(p.dim(1));
    std::vector<std::pair<long, long>> ps, gs;
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) {
            if (p.at(y, x) != 0) ps.emplace_back(y, x);
            if (g.at(y, x) != 0) gs.emplace_back(y, x);
        }
    if (ps.empty() && gs.empty()) return 0.0;
    if (ps.empty() || gs.empty()) return std::sqrt(static_cast<double>(h * h + w * w));
    auto directed = [](const auto& from, const auto& to) {
        long worst = 0;
        for (auto [ay, ax] : from) {
            long best = std::numeric_limits<long>::max();
            for (auto [by, bx] : to) best = std::min(best, (ay - by) * (ay - by) + (ax - bx) * (ax - bx));
            worst = std::max(worst, best);
        }
        return worst;
    };
    return std::sqrt(static_cast<double>(std::max(directed(ps, gs), directed(gs, ps))));
}

Verdict metric_correctness() {
    Rng rng(4);
    std::size_t bad = 0;
    for (int i = 0; i < 500; ++i) {
        Rng r = rng.split(i);
        const std::size_t h = 1 + r.below(16), w = 1 + r.below(16);
        const double density = r.uniform(0.0, 0.6);
        Tensor p({h, w}), g({h, w});
        for (double& v : p.data()) v = r.uniform() < density ? 1.0 : 0.0;
        for (double& v : g.data()) v = r.uniform() < density ? 1.0 : 0.0;
        if (dice_coeff(p, g) != brute_dice(p, g) || hausdorff(p, g) != brute_hausdorff(p, g)) ++bad;
    }
    Tensor a({6, 6}), b({6, 6});
    a.at(0, 0) = 1;
    b.at(3, 4) = 1;
    const double hd = hausdorff(a, b);
    Tensor l({4, 4}), r({4, 4});
    for (std::size_t y = 0; y < 2; ++y) {
        l.at(y, 0) = l.at(y, 1) = 1;
        r.at(y, 1) = r.at(y, 2) = 1;
    }
    const double dice = dice_coeff(l, r);
    return {bad == 0 && hd == 5.0 && dice == 0.5,
            fmt("%zu/500 oracle mismatches; 3-4-5 HD %.17g; half-overlap Dice %.17g", bad, hd, dice)};
}

double moving_average(const std::vector<double>& xs, std::size_t end, std::size_t window) {
    const std::size_t begin = end >= window ? end - window : 0;
    double s = 0.0;
    for (std::size_t i = begin; i < end; ++i) s += xs[i];
    return s / static_cast<double>(end - begin);
}

Verdict smoke_training() {
    const RunConfig rc = load_config_file(config_path("smoke.json"));
    const Benchmark bench = make_benchmark(rc.data);
    const auto t0 = Clock::now();
    const RunResult r = run_experiment(rc.train, bench);
    const double secs = seconds_since(t0);
    std::vector<double> total, seg;
    for (const LogRow& row : r.log) {
        total.push_back(row.loss_total);
        seg.push_back(row.loss_seg_sam + row.loss_seg_shape);
    }
    const std::size_t window = 20;
    const double early = moving_average(total, window, window), late = moving_average(total, total.size(), window);
    const double seg_ratio = moving_average(seg, seg.size(), window) / moving_average(seg, window, window);
    const double dice = r.report.domains.front().dice_mean;
    note(fmt("segmentation-only loss ratio %.3f (information)", seg_ratio));
    note(fmt("final usage CV %.4f, dead experts %zu", r.log.back().usage_cv, r.report.utilization.dead_experts));
    const bool ok = late < 0.5 * early && dice >= 0.85 && secs < 600.0;
    return {ok, fmt("loss MA %.4g -> %.4g (ratio %.3f < 0.5); source-val Dice %.4f (>= 0.85); %.0fs (< 600s)", early,
                    late, late / early, dice, secs)};
}

// Shared by criteria 6 and 7: four variants per seed on the smoke config.
struct VariantResult {
    double target_dice = 0.0;
    double usage_cv = 0.0;
    std::size_t dead = 0;
};

std::map<std::pair<std::uint64_t, std::string>, VariantResult> g_variants;

VariantResult run_variant(const TrainConfig& cfg, const Benchmark& bench, const char* label) {
    const auto t0 = Clock::now();
    const RunResult r = run_experiment(cfg, bench);
    VariantResult v{r.report.avg_target_dice(), r.log.back().usage_cv, r.report.utilization.dead_experts};
    note(fmt("seed %llu %-9s target Dice %.4f  usage CV %.4f  dead %zu  (%.0fs)",
             static_cast<unsigned long long>(cfg.seed), label, v.target_dice, v.usage_cv, v.dead, seconds_since(t0)));
    return v;
}

void ensure_variants() {
    if (!g_variants.empty()) return;
    const RunConfig base = load_config_file(config_path("smoke.json"));
    for (std::uint64_t seed : kSeeds) {
        RunConfig rc = base;
        rc.data.seed = rc.train.seed = seed;
        const Benchmark bench = make_benchmark(rc.data);
        TrainConfig mose = rc.train;
        TrainConfig dense = mose;
        dense.model.k = dense.model.n;
        TrainConfig baseline = mose;
        baseline.model.prompt_mode = PromptMode::Zero;
        TrainConfig unpenalized = mose;
        unpenalized.loss.beta = 0.0;
        g_variants[{seed, "mose"}] = run_variant(mose, bench, "mose");
        g_variants[{seed, "dense"}] = run_variant(dense, bench, "k=n");
        g_variants[{seed, "baseline"}] = run_variant(baseline, bench, "baseline");
        g_variants[{seed, "beta0"}] = run_variant(unpenalized, bench, "beta=0");
    }
}

Verdict sdg_trend() {
    ensure_variants();
    std::size_t holds = 0;
    std::string detail;
    for (std::uint64_t seed : kSeeds) {
        const double m = g_variants[{seed, "mose"}].target_dice, d = g_variants[{seed, "dense"}].target_dice,
                     b = g_variants[{seed, "baseline"}].target_dice;
        const bool ok = m >= d && d >= b;
        holds += ok;
        detail += fmt("%sseed %llu %.3f/%.3f/%.3f%s", detail.empty() ? "" : "; ", static_cast<unsigned long long>(seed),
                      m, d, b, ok ? "" : " x");
    }
    return {holds >= 2, fmt("MoSE >= k=n >= baseline target Dice in %zu/3 seeds (%s)", holds, detail.c_str())};
}

Verdict balancing_trend() {
    ensure_variants();
    std::size_t holds = 0;
    std::string detail;
    for (std::uint64_t seed : kSeeds) {
        const VariantResult& on = g_variants[{seed, "mose"}];
        const VariantResult& off = g_variants[{seed, "beta0"}];
        const bool ok = on.usage_cv < off.usage_cv && on.dead <= off.dead;
        holds += ok;
        detail += fmt("%sseed %llu cv %.3f vs %.3f, dead %zu vs %zu%s", detail.empty() ? "" : "; ",
                      static_cast<unsigned long long>(seed), on.usage_cv, off.usage_cv, on.dead, off.dead, ok ? "" : " x");
    }
    return {holds >= 2, fmt("beta=1e-2 vs 0: lower CV and no more dead experts in %zu/3 seeds (%s)", holds, detail.c_str())};
}

Verdict warmup_trend() {
    const RunConfig base = load_config_file(config_path("smoke.json"));
    std::size_t holds = 0;
    std::string detail;
    for (std::uint64_t seed : kSeeds) {
        RunConfig rc = base;
        rc.data.seed = rc.train.seed = seed;
        rc.train.max_iterations = 800;
        const Benchmark bench = make_benchmark(rc.data);
        TrainConfig warm = rc.train, cold = rc.train;
        warm.loss.t_warmup = 500;
        cold.loss.t_warmup = 0;
        const VariantResult w = run_variant(warm, bench, "T=500");
        const VariantResult c = run_variant(cold, bench, "T=0");
        const bool ok = w.dead <= c.dead;
        holds += ok;
        detail += fmt("%sseed %llu dead %zu vs %zu%s", detail.empty() ? "" : "; ", static_cast<unsigned long long>(seed),
                      w.dead, c.dead, ok ? "" : " x");
    }
    return {holds >= 2, fmt("warm-up never adds dead experts in %zu/3 seeds (%s)", holds, detail.c_str())};
}

bool same_log(const std::vector<LogRow>& a, const std::vector<LogRow>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const LogRow &x = a[i], &y = b[i];
        if (x.iteration != y.iteration || x.phase != y.phase || x.loss_total != y.loss_total ||
            x.loss_seg_sam != y.loss_seg_sam || x.loss_seg_shape != y.loss_seg_shape || x.penalty != y.penalty ||
            x.usage_cv != y.usage_cv)
            return false;
    }
    return true;
}

Verdict determinism() {
    RunConfig rc = load_config_file(config_path("smoke.json"));
    rc.data.image_size = rc.train.model.image_size = 32;
    rc.data.n_train = 16;
    rc.train.model.n = 8;
    rc.train.model.k = 2;
    rc.train.loss.t_warmup = 10;
    rc.train.max_iterations = 30;
    const Benchmark bench = make_benchmark(rc.data);
    const TrainingSet data = TrainingSet::from_samples(bench.source_train, rc.train.model.classes);

    TrainState a = init_train_state(rc.train), b = init_train_state(rc.train);
    const auto la = train(a, rc.train, data), lb = train(b, rc.train, data);
    const bool logs = same_log(la, lb);
    const bool ckpts = serialize_checkpoint(rc.train, a) == serialize_checkpoint(rc.train, b);

    TrainState first = init_train_state(rc.train);
    auto lr = train(first, rc.train, data, {}, 15);
    Checkpoint ck = deserialize_checkpoint(serialize_checkpoint(rc.train, first));
    const auto rest = train(ck.state, ck.config, data);
    lr.insert(lr.end(), rest.begin(), rest.end());
    const bool resume = same_log(lr, la) && serialize_checkpoint(ck.config, ck.state) == serialize_checkpoint(rc.train, a);
    return {logs && ckpts && resume, fmt("identical logs: %s; identical checkpoints: %s; 15+resume+15 == 30: %s",
                                         logs ? "yes" : "no", ckpts ? "yes" : "no", resume ? "yes" : "no")};
}

Verdict scaling_trend() {
    const RunConfig base = load_config_file(config_path("smoke.json"));
    std::size_t holds = 0;
    std::string detail;
    for (std::uint64_t seed : kSeeds) {
        RunConfig rc = base;
        rc.data.seed = rc.train.seed = seed;
        const Benchmark bench = make_benchmark(rc.data);
        SweepConfig s;
        s.n = {8, 16, 32, 64};
        s.k = {};
        s.beta = {rc.train.loss.beta};
        s.t_warmup = {rc.train.loss.t_warmup};
        std::vector<double> dice;
        for (const SweepPoint& pt : sweep_grid(s)) {
            const auto t0 = Clock::now();
            const SweepRow row = sweep_point(rc.train, pt, bench);
            note(fmt("seed %llu n=%zu k=%zu target Dice %.4f (%.0fs)", static_cast<unsigned long long>(seed), pt.n, pt.k,
                     row.avg_target_dice, seconds_since(t0)));
            dice.push_back(row.avg_target_dice);
        }
        const bool ok = std::is_sorted(dice.begin(), dice.end());
        holds += ok;
        detail += fmt("%sseed %llu %s", detail.empty() ? "" : "; ", static_cast<unsigned long long>(seed), ok ? "ok" : "x");
    }
    return {holds >= 2, fmt("target Dice non-decreasing in n in %zu/3 seeds (%s)", holds, detail.c_str())};
}

struct Criterion {
    int id;
    const char* name;
    bool slow;
    std::function<Verdict()> check;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    bool slow = false;
    int only = 0;
    app.add_flag("--slow", slow, "include the slow dictionary-size sweep");
    app.add_option("--only", only, "run a single criterion");
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> criteria{
        {1, "gradient correctness", false, gradient_correctness},
        {2, "top-k semantics", false, topk_semantics},
        {3, "cv regularizer", false, cv_correctness},
        {4, "metrics", false, metric_correctness},
        {5, "smoke training", false, smoke_training},
        {6, "generalization ordering", false, sdg_trend},
        {7, "utilization balancing", false, balancing_trend},
        {8, "warm-up and dead experts", false, warmup_trend},
        {9, "determinism and resume", false, determinism},
        {10, "dictionary size scaling", true, scaling_trend},
    };
    int failed = 0;
    for (const Criterion& c : criteria) {
        if (only ? c.id != only : (c.slow && !slow)) continue;
        std::cout << "criterion " << c.id << ": " << c.name << "\n";
        std::cout.flush();
        Verdict v;
        try {
            v = c.check();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        std::cout << (v.pass ? "PASS " : "FAIL ") << c.id << " " << c.name << ": " << v.detail << "\n";
        std::cout.flush();
        failed += !v.pass;
    }
    return failed ? 1 : 0;
}
