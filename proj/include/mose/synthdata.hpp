#pragma once

// Procedural single-source / multi-target benchmark. Masks are random
// star-convex blobs; domains differ only in how a mask is rendered to pixels.

#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mose/error.hpp"
#include "mose/netpbm.hpp"
#include "mose/rng.hpp"
#include "mose/tensor.hpp"

namespace mose {

struct DomainSpec {
    std::string name;
    double gamma = 1.0;
    double noise_std = 0.05;
    double bias_amp = 0.0;
    double contrast_fg = 0.7;
    double contrast_bg = 0.3;
    bool invert = false;
    double warp_amp = 0.0;  // > 0 perturbs the contour itself (geometric shift)
};

inline void to_json(nlohmann::json& j, const DomainSpec& d) {
    j = {{"name", d.name},           {"gamma", d.gamma},   {"noise_std", d.noise_std},
         {"bias_amp", d.bias_amp},   {"contrast_fg", d.contrast_fg}, {"contrast_bg", d.contrast_bg},
         {"invert", d.invert},       {"warp_amp", d.warp_amp}};
}

inline void from_json(const nlohmann::json& j, DomainSpec& d) {
    j.at("name").get_to(d.name);
    j.at("gamma").get_to(d.gamma);
    j.at("noise_std").get_to(d.noise_std);
    j.at("bias_amp").get_to(d.bias_amp);
    j.at("contrast_fg").get_to(d.contrast_fg);
    j.at("contrast_bg").get_to(d.contrast_bg);
    j.at("invert").get_to(d.invert);
    d.warp_amp = j.value("warp_amp", 0.0);
}

struct Sample {
    Tensor image;  // [1, H, W], 8-bit quantized values in [0, 1]
    Tensor mask;   // [H, W], 0 / 1
    std::string domain;
    std::string split;
    std::size_t index = 0;
    std::uint64_t shape_seed = 0;
};

inline constexpr int kContourHarmonics = 5;
inline constexpr double kMinAreaFraction = 0.03;
inline constexpr double kMaxAreaFraction = 0.40;
inline constexpr int kMaskRetries = 64;

/// r(theta) = r0 * (1 + sum_m amp[m] * cos((m + 1) * theta + phase[m])).
struct Contour {
    double cx = 0.0;
    double cy = 0.0;
    double r0 = 1.0;
    std::array<double, kContourHarmonics> amp{};
    std::array<double, kContourHarmonics> phase{};

    double radius(double theta) const {
        double s = 1.0;
        for (int m = 0; m < kContourHarmonics; ++m) s += amp[m] * std::cos((m + 1) * theta + phase[m]);
        return r0 * s;
    }
};

/// Pixel (y, x) is foreground iff its centre lies within r(theta) of (cx, cy).
inline Tensor rasterize(const Contour& c, std::size_t h, std::size_t w) {
    Tensor mask({h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double dx = static_cast<double>(x) - c.cx, dy = static_cast<double>(y) - c.cy;
            const double rho2 = dx * dx + dy * dy;
            const double r = c.radius(std::atan2(dy, dx));
            if (r > 0.0 && rho2 <= r * r) mask.at(y, x) = 1.0;
        }
    return mask;
}

inline Contour sample_contour(Rng& rng, std::size_t h, std::size_t w) {
    const double side = static_cast<double>(std::min(h, w));
    Contour c;
    c.r0 = rng.uniform(0.12, 0.24) * side;
    double reach = 1.0;
    for (int m = 0; m < kContourHarmonics; ++m) {
        const double bound = 0.2 / (m + 1);
        c.amp[m] = rng.uniform(-bound, bound);
        c.phase[m] = rng.uniform(0.0, 2.0 * std::numbers::pi);
        reach += bound;
    }
    const double margin = std::min(c.r0 * reach + 1.0, side / 2.0 - 1.0);
    c.cx = rng.uniform(margin, static_cast<double>(w) - 1.0 - margin);
    c.cy = rng.uniform(margin, static_cast<double>(h) - 1.0 - margin);
    return c;
}

inline std::size_t foreground_components(const Tensor& mask) {
    const std::size_t h = mask.dim(0), w = mask.dim(1);
    std::vector<std::uint8_t> seen(h * w, 0);
    std::size_t components = 0;
    std::deque<std::size_t> queue;
    for (std::size_t start = 0; start < h * w; ++start) {
        if (mask[start] == 0.0 || seen[start]) continue;
        ++components;
        seen[start] = 1;
        queue.push_back(start);
        while (!queue.empty()) {
            const std::size_t p = queue.front();
            queue.pop_front();
            const std::size_t y = p / w, x = p % w;
            const std::size_t nb[4] = {y > 0 ? p - w : p, y + 1 < h ? p + w : p, x > 0 ? p - 1 : p, x + 1 < w ? p + 1 : p};
            for (std::size_t q : nb) {
                if (q != p && mask[q] != 0.0 && !seen[q]) {
                    seen[q] = 1;
                    queue.push_back(q);
                }
            }
        }
    }
    return components;
}

/// One 4-connected foreground component covering 3%..40% of the image.
inline bool mask_is_valid(const Tensor& mask) {
    double area = 0.0;
    for (double v : mask.data()) area += v;
    const double frac = area / static_cast<double>(mask.size());
    return frac >= kMinAreaFraction && frac <= kMaxAreaFraction && foreground_components(mask) == 1;
}

inline Contour sample_valid_contour(Rng rng, std::size_t h, std::size_t w) {
    if (h < 32 || w < 32) throw ConfigError("gen_mask: H and W must be at least 32");
    for (int attempt = 0; attempt < kMaskRetries; ++attempt) {
        Contour c = sample_contour(rng, h, w);
        if (mask_is_valid(rasterize(c, h, w))) return c;
    }
    throw GenerationError("gen_mask: no valid mask after " + std::to_string(kMaskRetries) + " attempts");
}

inline Tensor gen_mask(Rng rng, std::size_t h, std::size_t w) { return rasterize(sample_valid_contour(rng, h, w), h, w); }

/// Mild geometric deformation of a contour; falls back to the original when invalid.
inline Tensor warped_mask(const Contour& base, double warp_amp, Rng rng, std::size_t h, std::size_t w) {
    Contour c = base;
    c.r0 *= 1.0 + warp_amp * rng.uniform(-1.0, 1.0);
    for (int m = 0; m < kContourHarmonics; ++m) c.amp[m] += warp_amp * rng.uniform(-1.0, 1.0) / (m + 1);
    Tensor mask = rasterize(c, h, w);
    return mask_is_valid(mask) ? mask : rasterize(base, h, w);
}

/// clamp(bias(y, x) * (mean_class + noise), 0, 1) ^ gamma, optionally inverted.
inline Tensor render(const Tensor& mask, const DomainSpec& d, Rng rng) {
    require_rank(mask, 2, "render mask");
    const std::size_t h = mask.dim(0), w = mask.dim(1);
    const double fy = rng.uniform(0.5, 1.5), fx = rng.uniform(0.5, 1.5);
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    Tensor image({1, h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double bias =
                1.0 + d.bias_amp * std::sin(2.0 * std::numbers::pi *
                                                (fy * static_cast<double>(y) / static_cast<double>(h) +
                                                 fx * static_cast<double>(x) / static_cast<double>(w)) +
                                            phi);
            const double mean = mask.at(y, x) != 0.0 ? d.contrast_fg : d.contrast_bg;
            const double noise = d.noise_std > 0.0 ? d.noise_std * rng.normal() : 0.0;
            double v = std::clamp(bias * (mean + noise), 0.0, 1.0);
            v = std::pow(v, d.gamma);
            image[y * w + x] = d.invert ? 1.0 - v : v;
        }
    return image;
}

/// Rounds to the 8-bit grid so in-memory samples equal their PGM round trip.
inline Tensor quantize8(const Tensor& image) {
    Tensor q = image;
    for (double& v : q.data()) v = static_cast<double>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0;
    return q;
}

inline DomainSpec default_source_domain() { return {"source", 1.0, 0.05, 0.0, 0.7, 0.3, false, 0.0}; }

inline std::vector<DomainSpec> default_target_domains() {
    return {
        {"target_contrast", 1.0, 0.08, 0.0, 0.55, 0.38, false, 0.0},
        {"target_gamma", 0.5, 0.05, 0.0, 0.7, 0.3, false, 0.0},
        {"target_bias", 1.0, 0.08, 0.4, 0.65, 0.3, false, 0.0},
    };
}

inline DomainSpec warp_target_domain() { return {"target_warp", 1.0, 0.06, 0.0, 0.65, 0.3, false, 0.15}; }

struct BenchmarkConfig {
    std::uint64_t seed = 1;
    std::size_t image_size = 64;
    std::size_t n_train = 200;
    std::size_t n_val = 50;
    std::size_t n_target = 100;
    bool include_warp_target = false;
};

struct TargetDomain {
    DomainSpec spec;
    std::vector<Sample> val;   // first 20%
    std::vector<Sample> test;  // remaining 80%
};

struct Benchmark {
    BenchmarkConfig config;
    DomainSpec source;
    std::vector<Sample> source_train;
    std::vector<Sample> source_val;
    std::vector<TargetDomain> targets;
};

namespace detail {
// Stream tags for benchmark substreams.
inline constexpr std::uint64_t kShapeStream = 0x5348;
inline constexpr std::uint64_t kAppearanceStream = 0x4150;
inline constexpr std::uint64_t kWarpStream = 0x5752;
}  // namespace detail

/// Sample i of domain slot `slot` is fully determined by (benchmark seed, slot, i).
inline Sample make_sample(const BenchmarkConfig& cfg, std::size_t slot, const DomainSpec& domain, std::size_t i,
                          const std::string& split, const std::set<std::uint64_t>& taken) {
    const Rng base(cfg.seed);
    Sample s;
    Rng seeds = base.split(detail::kShapeStream).split(slot).split(i);
    do {
        s.shape_seed = seeds.next_u64();
    } while (taken.count(s.shape_seed));
    const std::size_t size = cfg.image_size;
    const Contour contour = sample_valid_contour(Rng(s.shape_seed), size, size);
    s.mask = domain.warp_amp > 0.0
                 ? warped_mask(contour, domain.warp_amp, base.split(detail::kWarpStream).split(slot).split(i), size, size)
                 : rasterize(contour, size, size);
    s.image = quantize8(render(s.mask, domain, base.split(detail::kAppearanceStream).split(slot).split(i)));
    s.domain = domain.name;
    s.split = split;
    s.index = i;
    return s;
}

inline Benchmark make_benchmark(const BenchmarkConfig& cfg) {
    if (!cfg.n_train || !cfg.n_val || !cfg.n_target) throw ConfigError("benchmark sizes must be positive");
    if (cfg.image_size < 32 || cfg.image_size % 4) throw ConfigError("image_size must be >= 32 and divisible by 4");
    Benchmark b;
    b.config = cfg;
    b.source = default_source_domain();
    std::set<std::uint64_t> taken;
    auto take = [&](Sample s) {
        taken.insert(s.shape_seed);
        return s;
    };
    for (std::size_t i = 0; i < cfg.n_train; ++i) b.source_train.push_back(take(make_sample(cfg, 0, b.source, i, "train", taken)));
    for (std::size_t i = 0; i < cfg.n_val; ++i)
        b.source_val.push_back(take(make_sample(cfg, 0, b.source, cfg.n_train + i, "val", taken)));
    std::vector<DomainSpec> specs = default_target_domains();
    if (cfg.include_warp_target) specs.push_back(warp_target_domain());
    const std::size_t n_val = cfg.n_target / 5;
    for (std::size_t t = 0; t < specs.size(); ++t) {
        TargetDomain td{specs[t], {}, {}};
        for (std::size_t i = 0; i < cfg.n_target; ++i) {
            Sample s = take(make_sample(cfg, t + 1, specs[t], i, i < n_val ? "val" : "test", taken));
            (i < n_val ? td.val : td.test).push_back(std::move(s));
        }
        b.targets.push_back(std::move(td));
    }
    return b;
}

inline std::string sample_stem(const Sample& s) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%04zu", s.split.c_str(), s.index);
    return buf;
}

/// Layout: <dir>/<domain>/<split>_<index>_{image,mask}.pgm plus <dir>/manifest.json.
inline void save_benchmark(const Benchmark& b, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    nlohmann::json manifest;
    manifest["format"] = "mose-benchmark";
    manifest["version"] = 1;
    manifest["seed"] = b.config.seed;
    manifest["image_size"] = b.config.image_size;
    manifest["n_train"] = b.config.n_train;
    manifest["n_val"] = b.config.n_val;
    manifest["n_target"] = b.config.n_target;
    manifest["include_warp_target"] = b.config.include_warp_target;
    manifest["source"] = b.source;
    manifest["targets"] = nlohmann::json::array();
    for (const auto& t : b.targets) manifest["targets"].push_back(t.spec);
    manifest["samples"] = nlohmann::json::array();
    auto emit = [&](const Sample& s) {
        const fs::path sub = dir / s.domain;
        fs::create_directories(sub);
        const std::string stem = sample_stem(s);
        pgm::write(sub / (stem + "_image.pgm"), pgm::from_unit_tensor(s.image, 255));
        pgm::write(sub / (stem + "_mask.pgm"), pgm::from_unit_tensor(s.mask, 1));
        manifest["samples"].push_back({{"domain", s.domain},
                                       {"split", s.split},
                                       {"index", s.index},
                                       {"shape_seed", s.shape_seed},
                                       {"image", s.domain + "/" + stem + "_image.pgm"},
                                       {"mask", s.domain + "/" + stem + "_mask.pgm"}});
    };
    for (const auto& s : b.source_train) emit(s);
    for (const auto& s : b.source_val) emit(s);
    for (const auto& t : b.targets) {
        for (const auto& s : t.val) emit(s);
        for (const auto& s : t.test) emit(s);
    }
    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(2) << "\n";
}

inline Benchmark load_benchmark(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw FormatError("no manifest.json in " + dir.string());
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("manifest.json: ") + e.what());
    }
    if (m.value("format", "") != "mose-benchmark") throw FormatError("manifest.json: not a mose benchmark");
    Benchmark b;
    b.config.seed = m.at("seed").get<std::uint64_t>();
    b.config.image_size = m.at("image_size").get<std::size_t>();
    b.config.n_train = m.at("n_train").get<std::size_t>();
    b.config.n_val = m.at("n_val").get<std::size_t>();
    b.config.n_target = m.at("n_target").get<std::size_t>();
    b.config.include_warp_target = m.value("include_warp_target", false);
    b.source = m.at("source").get<DomainSpec>();
    std::map<std::string, std::size_t> target_slot;
    for (const auto& t : m.at("targets")) {
        target_slot[t.at("name").get<std::string>()] = b.targets.size();
        b.targets.push_back({t.get<DomainSpec>(), {}, {}});
    }
    const std::size_t size = b.config.image_size;
    for (const auto& e : m.at("samples")) {
        Sample s;
        s.domain = e.at("domain").get<std::string>();
        s.split = e.at("split").get<std::string>();
        s.index = e.at("index").get<std::size_t>();
        s.shape_seed = e.at("shape_seed").get<std::uint64_t>();
        s.image = pgm::to_unit_tensor(pgm::read(dir / e.at("image").get<std::string>()), {1, size, size});
        s.mask = pgm::to_unit_tensor(pgm::read(dir / e.at("mask").get<std::string>()), {size, size});
        if (s.domain == b.source.name) {
            (s.split == "train" ? b.source_train : b.source_val).push_back(std::move(s));
        } else {
            auto it = target_slot.find(s.domain);
            if (it == target_slot.end()) throw FormatError("manifest.json: unknown domain " + s.domain);
            auto& td = b.targets[it->second];
            (s.split == "val" ? td.val : td.test).push_back(std::move(s));
        }
    }
    return b;
}

}  // namespace mose
