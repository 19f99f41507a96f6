#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mose/checkpoint.hpp"
#include "mose/config.hpp"
#include "mose/evaluate.hpp"
#include "mose/netpbm.hpp"
#include "mose/synthdata.hpp"
#include "mose/trainer.hpp"

namespace mose::cli {

namespace fs = std::filesystem;

enum ExitCode { kOk = 0, kInvalid = 1, kNumeric = 2, kInconclusive = 3 };

struct Context {
    RunConfig cfg;
    bool force = false;
    bool out_given = false;  // --out appeared on the command line or in the config file
    std::ostream& out;
};

inline std::string kebab(std::string key) {
    for (char& c : key)
        if (c == '_') c = '-';
    return key;
}

/// Refuses to write into a non-empty directory unless forced.
inline void prepare_out_dir(const fs::path& dir, bool force) {
    if (fs::exists(dir) && !fs::is_directory(dir)) throw ConfigError(dir.string() + " exists and is not a directory");
    if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
        throw ConfigError("output directory " + dir.string() + " is not empty (use --force to overwrite)");
    }
    fs::create_directories(dir);
}

inline void echo_config(const fs::path& dir, const RunConfig& cfg) {
    std::ofstream out(dir / "config.json");
    out << to_json(cfg).dump(2) << "\n";
}

inline void write_expert_heatmaps(const fs::path& dir, const Tensor& experts) {
    fs::create_directories(dir);
    const std::size_t n = experts.dim(0), h = experts.dim(1), w = experts.dim(2);
    for (std::size_t j = 0; j < n; ++j) {
        Tensor atom({h, w});
        for (std::size_t i = 0; i < h * w; ++i) atom[i] = experts[j * h * w + i];
        char name[32];
        std::snprintf(name, sizeof name, "expert_%03zu.pgm", j);
        pgm::write_heatmap(dir / name, atom);
    }
}

inline SampleHook sample_exporter(const fs::path& dir, std::size_t per_domain = 0) {
    auto counts = std::make_shared<std::map<std::string, std::size_t>>();
    return [dir, per_domain, counts](const Sample& s, const Inference& inf) {
        if (per_domain && (*counts)[s.domain]++ >= per_domain) return;
        const fs::path sub = dir / s.domain;
        fs::create_directories(sub);
        const std::string stem = sample_stem(s);
        pgm::write(sub / (stem + "_image.pgm"), pgm::from_unit_tensor(s.image));
        pgm::write(sub / (stem + "_pred.pgm"), pgm::from_unit_tensor(inf.mask, 1));
        pgm::write_heatmap(sub / (stem + "_shape_map.pgm"), inf.output.shape_map);
        pgm::write(sub / (stem + "_prompt.pgm"), pgm::from_unit_tensor(inf.output.prompt));
    };
}

inline void write_eval(const fs::path& dir, const EvalReport& report) {
    std::ofstream domains(dir / "eval_domains.csv");
    write_domain_csv(domains, report);
    if (!report.utilization.usage.empty()) {
        std::ofstream util(dir / "utilization.csv");
        write_utilization_csv(util, report.utilization);
    }
}

inline int cmd_gen_data(Context& ctx) {
    const RunConfig& cfg = ctx.cfg;
    const fs::path dir = cfg.out;
    prepare_out_dir(dir, ctx.force);
    const Benchmark b = make_benchmark(cfg.data);
    save_benchmark(b, dir);
    echo_config(dir, cfg);
    ctx.out << "wrote " << b.source_train.size() + b.source_val.size() << " source and " << b.targets.size()
        << " target domains to " << dir.string() << "\n";
    return kOk;
}

inline int cmd_train(Context& ctx) {
    RunConfig& cfg = ctx.cfg;
    const Benchmark bench = load_benchmark(cfg.data_dir);
    cfg.train.model.image_size = bench.config.image_size;
    cfg.data.image_size = bench.config.image_size;
    TrainState state;
    if (!cfg.checkpoint.empty()) {
        // Resuming keeps the checkpoint's config; only the budget may change.
        Checkpoint ck = load_checkpoint(cfg.checkpoint);
        ck.config.max_iterations = cfg.train.max_iterations;
        ck.config.max_epochs = cfg.train.max_epochs;
        ck.config.checkpoint_every = cfg.train.checkpoint_every;
        cfg.train = ck.config;
        state = std::move(ck.state);
    } else {
        state = init_train_state(cfg.train);
    }
    const fs::path dir = cfg.out;
    prepare_out_dir(dir, ctx.force);
    echo_config(dir, cfg);
    const TrainingSet data = TrainingSet::from_samples(bench.source_train, cfg.train.model.classes);

    std::ofstream log(dir / "train_log.csv");
    log << kLogHeader << "\n";
    TrainHooks hooks;
    hooks.on_row = [&log](const LogRow& r) {
        write_log_row(log, r);
        log.flush();
    };
    hooks.on_checkpoint = [&](const TrainState& s) {
        char name[48];
        std::snprintf(name, sizeof name, "checkpoint_%06llu.bin", static_cast<unsigned long long>(s.iteration));
        save_checkpoint(dir / name, cfg.train, s);
    };
    const auto rows = train(state, cfg.train, data, hooks);
    save_checkpoint(dir / "checkpoint.bin", cfg.train, state);
    write_expert_heatmaps(dir / "experts", state.params.experts);
    if (!rows.empty()) {
        const LogRow& last = rows.back();
        ctx.out << "iteration " << last.iteration << " loss " << last.loss_total << " usage_cv " << last.usage_cv << "\n";
    }
    return kOk;
}

inline Checkpoint require_checkpoint(const RunConfig& cfg) {
    if (cfg.checkpoint.empty()) throw ConfigError("--checkpoint is required");
    return load_checkpoint(cfg.checkpoint);
}

inline int cmd_eval(Context& ctx) {
    const RunConfig& cfg = ctx.cfg;
    const Checkpoint ck = require_checkpoint(cfg);
    const Benchmark bench = load_benchmark(cfg.data_dir);
    const fs::path dir = cfg.out;
    prepare_out_dir(dir, ctx.force);
    echo_config(dir, cfg);
    const SampleHook hook = cfg.export_samples ? sample_exporter(dir / "samples") : SampleHook{};
    const EvalReport report = evaluate(ck.state.params, ck.config.model, bench, hook);
    write_eval(dir, report);
    write_domain_csv(ctx.out, report);
    return kOk;
}

inline int cmd_visualize(Context& ctx) {
    const RunConfig& cfg = ctx.cfg;
    const Checkpoint ck = require_checkpoint(cfg);
    const fs::path dir = cfg.out;
    prepare_out_dir(dir, ctx.force);
    echo_config(dir, cfg);
    write_expert_heatmaps(dir / "experts", ck.state.params.experts);
    if (fs::exists(fs::path(cfg.data_dir) / "manifest.json")) {
        const Benchmark bench = load_benchmark(cfg.data_dir);
        evaluate(ck.state.params, ck.config.model, bench, sample_exporter(dir / "samples", 4));
    }
    ctx.out << "wrote visualizations to " << dir.string() << "\n";
    return kOk;
}

inline int cmd_ablate(Context& ctx) {
    const RunConfig& cfg = ctx.cfg;
    const Benchmark bench = load_benchmark(cfg.data_dir);
    TrainConfig base = cfg.train;
    base.model.image_size = bench.config.image_size;
    const auto grid = sweep_grid(cfg.sweep);
    const fs::path dir = cfg.out;
    prepare_out_dir(dir, ctx.force);
    echo_config(dir, cfg);
    std::ofstream csv(dir / "sweep.csv");
    csv << kSweepHeader << "\n";
    csv.flush();
    ctx.out << kSweepHeader << "\n";
    for (const SweepPoint& pt : grid) {
        const SweepRow row = sweep_point(base, pt, bench);
        write_sweep_row(csv, row);
        csv.flush();
        write_sweep_row(ctx.out, row);
        ctx.out.flush();
    }
    return kOk;
}

inline int cmd_gradcheck(Context& ctx) {
    const RunConfig& cfg = ctx.cfg;
    const auto phases = run_gradcheck(cfg.gradcheck, cfg.train.seed);
    std::ostringstream table;
    table << "phase,group,max_rel_error\n";
    int code = kOk;
    for (const PhaseCheck& pc : phases) {
        char buf[160];
        for (const GroupError& g : pc.groups) {
            std::snprintf(buf, sizeof buf, "%s,%s,%.3e\n", phase_name(pc.phase), g.name.c_str(), g.max_rel_error);
            table << buf;
        }
        const char* status = pc.status == GradcheckStatus::Pass ? "pass"
                             : pc.status == GradcheckStatus::Fail ? "FAIL"
                                                                  : "INCONCLUSIVE";
        std::snprintf(buf, sizeof buf, "# %s: %s (max %.3e, tol %.1e, attempts %zu)\n", phase_name(pc.phase), status,
                      pc.max_rel_error, cfg.gradcheck.tol, pc.attempts);
        table << buf;
        if (pc.status == GradcheckStatus::Fail) code = kNumeric;
        if (pc.status == GradcheckStatus::Inconclusive && code == kOk) code = kInconclusive;
    }
    ctx.out << table.str();
    if (ctx.out_given) {
        prepare_out_dir(cfg.out, ctx.force);
        echo_config(cfg.out, cfg);
        std::ofstream(fs::path(cfg.out) / "gradcheck.csv") << table.str();
    }
    return code;
}

/// Entry point shared by the binary and the tests.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Mixture of shape experts: data, training, evaluation and diagnostics", "mose"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    bool force = false;
    app.add_option("--config", config_path, "JSON config file (applied before command-line overrides)");
    app.add_flag("--force", force, "write into a non-empty output directory");

    // Every config key doubles as a --kebab-case option. Values are kept as text
    // and applied after the config file, in registry order.
    std::map<std::string, std::string> overrides;
    const RunConfig defaults;
    for (const ConfigField& f : config_fields()) {
        app.add_option("--" + kebab(f.key), overrides[f.key], f.doc + " [default " + f.get(defaults).dump() + "]");
    }

    struct Command {
        const char* name;
        const char* help;
        int (*fn)(Context&);
    };
    static const Command commands[] = {
        {"gen-data", "generate the synthetic benchmark into --out", cmd_gen_data},
        {"train", "train on --data, write checkpoint, log and expert heatmaps to --out", cmd_train},
        {"eval", "score --checkpoint on --data, write per-domain and utilization CSVs", cmd_eval},
        {"ablate", "train and evaluate every point of the sweep grid", cmd_ablate},
        {"gradcheck", "finite-difference check of the full model on a tiny config", cmd_gradcheck},
        {"visualize", "export expert heatmaps and per-sample maps from --checkpoint", cmd_visualize},
    };
    std::vector<std::pair<CLI::App*, const Command*>> subs;
    for (const Command& c : commands) subs.emplace_back(app.add_subcommand(c.name, c.help), &c);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kInvalid;
    }

    try {
        Context ctx{config_path.empty() ? RunConfig{} : load_config_file(config_path), force, false, out};
        for (const ConfigField& f : config_fields()) {
            if (app.count("--" + kebab(f.key))) apply_override(ctx.cfg, f.key, overrides[f.key]);
        }
        ctx.out_given = app.count("--out") > 0 || ctx.cfg.out != RunConfig{}.out;
        for (const auto& [sub, cmd] : subs)
            if (sub->parsed()) return cmd->fn(ctx);
        return kInvalid;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return kNumeric;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kInvalid;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kInvalid;
    }
}

}  // namespace mose::cli
