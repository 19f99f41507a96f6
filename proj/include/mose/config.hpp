#pragma once

// Run configuration: every tunable of data generation, model, losses, training,
// gradient checking and sweeps, as flat JSON keys with documented defaults.

#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mose/error.hpp"
#include "mose/losses.hpp"
#include "mose/model.hpp"
#include "mose/optim.hpp"
#include "mose/synthdata.hpp"

namespace mose {

struct TrainConfig {
    ModelConfig model;
    LossConfig loss;
    AdamWConfig optim;
    std::size_t batch_size = 8;
    std::size_t max_epochs = 150;
    std::size_t max_iterations = 300;
    std::uint64_t seed = 1;
    double grad_clip = 0.0;  // global-norm clip; 0 disables
    std::size_t checkpoint_every = 0;

    void validate() const {
        model.validate();
        loss.validate();
        if (!(optim.lr > 0.0)) throw ConfigError("lr must be positive");
        if (!(optim.weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
        if (batch_size == 0) throw ConfigError("batch_size must be positive");
        if (max_epochs == 0 && max_iterations == 0) throw ConfigError("max_epochs and max_iterations cannot both be 0");
        if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be non-negative");
    }
};

struct GradcheckConfig {
    std::string phase = "both";  // warmup | sparse | both
    double eps = 1e-5;
    double tol = 1e-4;
    double beta = 1.0;
    std::size_t image_size = 16;
    std::size_t n = 4;
    std::size_t k = 2;
    std::size_t batch = 2;
    std::size_t width = 4;  // channel base width of the checked model
    std::size_t retries = 8;
    std::size_t max_entries = 0;
    bool corrupt_grad = false;
};

struct SweepConfig {
    std::vector<std::size_t> n{8, 16};
    std::vector<std::size_t> k{4, 8};
    std::vector<double> beta{1e-2};
    std::vector<std::uint64_t> t_warmup{100};
};

struct RunConfig {
    BenchmarkConfig data;
    TrainConfig train;
    GradcheckConfig gradcheck;
    SweepConfig sweep;
    std::string data_dir = "data";
    std::string out = "out";
    std::string checkpoint;
    bool export_samples = false;
};

inline const char* prompt_mode_name(PromptMode m) { return m == PromptMode::Shape ? "shape" : "zero"; }

inline PromptMode parse_prompt_mode(const std::string& s) {
    if (s == "shape") return PromptMode::Shape;
    if (s == "zero") return PromptMode::Zero;
    throw ConfigError("prompt_mode must be 'shape' or 'zero', got '" + s + "'");
}

struct ConfigField {
    std::string key;
    std::string doc;
    std::function<void(RunConfig&, const nlohmann::json&)> set;
    std::function<nlohmann::json(const RunConfig&)> get;
};

namespace detail {
template <class T, class Ref>
ConfigField field(std::string key, std::string doc, Ref ref) {
    return ConfigField{std::move(key), std::move(doc),
                       [ref](RunConfig& c, const nlohmann::json& j) { ref(c) = j.get<T>(); },
                       [ref](const RunConfig& c) { return nlohmann::json(ref(c)); }};
}
}  // namespace detail

#define MOSE_FIELD(T, key, doc, expr) detail::field<T>(key, doc, [](auto& c) -> auto& { return expr; })

/// Every configurable key, in documentation order.
inline const std::vector<ConfigField>& config_fields() {
    static const std::vector<ConfigField> fields = [] {
        std::vector<ConfigField> f;
        f.push_back(ConfigField{"seed", "seed for data generation and training",
                                [](RunConfig& c, const nlohmann::json& j) {
                                    c.data.seed = j.get<std::uint64_t>();
                                    c.train.seed = c.data.seed;
                                },
                                [](const RunConfig& c) { return nlohmann::json(c.train.seed); }});
        f.push_back(ConfigField{"image_size", "image height and width (multiple of 4)",
                                [](RunConfig& c, const nlohmann::json& j) {
                                    c.data.image_size = j.get<std::size_t>();
                                    c.train.model.image_size = c.data.image_size;
                                },
                                [](const RunConfig& c) { return nlohmann::json(c.train.model.image_size); }});
        f.push_back(MOSE_FIELD(std::size_t, "n_train", "source training samples", c.data.n_train));
        f.push_back(MOSE_FIELD(std::size_t, "n_val", "source validation samples", c.data.n_val));
        f.push_back(MOSE_FIELD(std::size_t, "n_target", "samples per target domain (20/80 val/test)", c.data.n_target));
        f.push_back(MOSE_FIELD(bool, "include_warp_target", "add the geometrically deformed target", c.data.include_warp_target));
        f.push_back(MOSE_FIELD(std::size_t, "n", "number of shape experts", c.train.model.n));
        f.push_back(MOSE_FIELD(std::size_t, "k", "experts retained per pixel", c.train.model.k));
        f.push_back(MOSE_FIELD(std::size_t, "classes", "segmentation classes incl. background", c.train.model.classes));
        f.push_back(MOSE_FIELD(std::size_t, "enc_channels", "encoder first-layer width", c.train.model.enc_channels));
        f.push_back(MOSE_FIELD(std::size_t, "embed_channels", "embedding channels", c.train.model.embed_channels));
        f.push_back(MOSE_FIELD(std::size_t, "gate_hidden", "gating network hidden width", c.train.model.gate_hidden));
        f.push_back(MOSE_FIELD(std::size_t, "dec_channels1", "decoder first upsampling width", c.train.model.dec_channels1));
        f.push_back(MOSE_FIELD(std::size_t, "dec_channels2", "decoder second upsampling width", c.train.model.dec_channels2));
        f.push_back(ConfigField{"prompt_mode", "shape (MoSE prompt) or zero (baseline)",
                                [](RunConfig& c, const nlohmann::json& j) {
                                    c.train.model.prompt_mode = parse_prompt_mode(j.get<std::string>());
                                },
                                [](const RunConfig& c) { return nlohmann::json(prompt_mode_name(c.train.model.prompt_mode)); }});
        f.push_back(MOSE_FIELD(double, "lambda", "Dice weight in the segmentation loss", c.train.loss.lambda));
        f.push_back(MOSE_FIELD(double, "beta", "regularizer weight", c.train.loss.beta));
        f.push_back(MOSE_FIELD(std::uint64_t, "t_warmup", "last iteration of the l1 warm-up phase", c.train.loss.t_warmup));
        f.push_back(MOSE_FIELD(double, "dice_smooth", "Dice smoothing constant", c.train.loss.dice_smooth));
        f.push_back(MOSE_FIELD(double, "lr", "AdamW learning rate", c.train.optim.lr));
        f.push_back(MOSE_FIELD(double, "weight_decay", "AdamW decoupled weight decay", c.train.optim.weight_decay));
        f.push_back(MOSE_FIELD(double, "adam_beta1", "AdamW first-moment decay", c.train.optim.beta1));
        f.push_back(MOSE_FIELD(double, "adam_beta2", "AdamW second-moment decay", c.train.optim.beta2));
        f.push_back(MOSE_FIELD(double, "adam_eps", "AdamW denominator epsilon", c.train.optim.eps));
        f.push_back(MOSE_FIELD(std::size_t, "batch_size", "samples per optimizer step", c.train.batch_size));
        f.push_back(MOSE_FIELD(std::size_t, "max_epochs", "epoch cap (0 = none)", c.train.max_epochs));
        f.push_back(MOSE_FIELD(std::size_t, "max_iterations", "iteration cap (0 = none)", c.train.max_iterations));
        f.push_back(MOSE_FIELD(double, "grad_clip", "global gradient-norm clip (0 = off)", c.train.grad_clip));
        f.push_back(MOSE_FIELD(std::size_t, "checkpoint_every", "checkpoint cadence in iterations (0 = final only)",
                               c.train.checkpoint_every));
        f.push_back(MOSE_FIELD(std::string, "data", "dataset directory", c.data_dir));
        f.push_back(MOSE_FIELD(std::string, "out", "output directory", c.out));
        f.push_back(MOSE_FIELD(std::string, "checkpoint", "checkpoint file for eval / visualize", c.checkpoint));
        f.push_back(MOSE_FIELD(bool, "export_samples", "eval: write per-sample shape map / prompt / mask PGMs",
                               c.export_samples));
        f.push_back(MOSE_FIELD(std::string, "phase", "gradcheck: warmup, sparse or both", c.gradcheck.phase));
        f.push_back(MOSE_FIELD(double, "gc_eps", "gradcheck central-difference step", c.gradcheck.eps));
        f.push_back(MOSE_FIELD(double, "gc_tol", "gradcheck pass threshold", c.gradcheck.tol));
        f.push_back(MOSE_FIELD(double, "gc_beta", "gradcheck regularizer weight", c.gradcheck.beta));
        f.push_back(MOSE_FIELD(std::size_t, "gc_image_size", "gradcheck image size", c.gradcheck.image_size));
        f.push_back(MOSE_FIELD(std::size_t, "gc_n", "gradcheck expert count", c.gradcheck.n));
        f.push_back(MOSE_FIELD(std::size_t, "gc_k", "gradcheck retained experts", c.gradcheck.k));
        f.push_back(MOSE_FIELD(std::size_t, "gc_batch", "gradcheck batch size", c.gradcheck.batch));
        f.push_back(MOSE_FIELD(std::size_t, "gc_width", "gradcheck channel base width", c.gradcheck.width));
        f.push_back(MOSE_FIELD(std::size_t, "gc_retries", "gradcheck tie re-sampling budget", c.gradcheck.retries));
        f.push_back(MOSE_FIELD(std::size_t, "gc_max_entries", "gradcheck entries per tensor (0 = all)",
                               c.gradcheck.max_entries));
        f.push_back(MOSE_FIELD(bool, "corrupt_grad", "gradcheck self-test: double the analytic gradient",
                               c.gradcheck.corrupt_grad));
        f.push_back(MOSE_FIELD(std::vector<std::size_t>, "sweep_n", "ablate: expert counts", c.sweep.n));
        f.push_back(MOSE_FIELD(std::vector<std::size_t>, "sweep_k", "ablate: Top-K values (empty = n/2)", c.sweep.k));
        f.push_back(MOSE_FIELD(std::vector<double>, "sweep_beta", "ablate: regularizer weights", c.sweep.beta));
        f.push_back(MOSE_FIELD(std::vector<std::uint64_t>, "sweep_t_warmup", "ablate: warm-up lengths", c.sweep.t_warmup));
        return f;
    }();
    return fields;
}

#undef MOSE_FIELD

inline const ConfigField* find_field(const std::string& key) {
    for (const auto& f : config_fields())
        if (f.key == key) return &f;
    return nullptr;
}

inline void apply_json(RunConfig& cfg, const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        const ConfigField* f = find_field(key);
        if (!f) throw ConfigError("unknown config key '" + key + "'");
        try {
            f->set(cfg, value);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config key '" + key + "': " + e.what());
        }
    }
}

/// Command-line value: JSON when it parses, a comma list for list keys, else a string.
inline void apply_override(RunConfig& cfg, const std::string& key, const std::string& text) {
    const ConfigField* f = find_field(key);
    if (!f) throw ConfigError("unknown config key '" + key + "'");
    const bool is_list = f->get(cfg).is_array();
    nlohmann::json value;
    const std::string candidate = is_list && !text.empty() && text.front() != '[' ? "[" + text + "]" : text;
    try {
        value = nlohmann::json::parse(candidate);
    } catch (const nlohmann::json::exception&) {
        value = text;
    }
    apply_json(cfg, nlohmann::json{{key, value}});
}

inline RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    RunConfig cfg;
    try {
        apply_json(cfg, nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config file " + path + ": " + e.what());
    }
    return cfg;
}

inline nlohmann::json to_json(const RunConfig& cfg) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& f : config_fields()) j[f.key] = f.get(cfg);
    return j;
}

/// Training-relevant subset, echoed into checkpoints.
inline nlohmann::json train_config_json(const TrainConfig& t) {
    RunConfig rc;
    rc.train = t;
    rc.data.seed = t.seed;
    rc.data.image_size = t.model.image_size;
    const nlohmann::json all = to_json(rc);
    nlohmann::json j;
    for (const char* key : {"seed",         "image_size",   "n",           "k",          "classes",
                            "enc_channels", "embed_channels", "gate_hidden", "dec_channels1", "dec_channels2",
                            "prompt_mode",  "lambda",       "beta",        "t_warmup",   "dice_smooth",
                            "lr",           "weight_decay", "adam_beta1",  "adam_beta2", "adam_eps",
                            "batch_size",   "max_epochs",   "max_iterations", "grad_clip", "checkpoint_every"}) {
        j[key] = all.at(key);
    }
    return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    RunConfig rc;
    apply_json(rc, j);
    return rc.train;
}

}  // namespace mose
