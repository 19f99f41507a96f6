#pragma once

// Binary checkpoint, little-endian:
//   "MOSE" | u32 version | u32 meta_len | meta JSON (config echo, iteration, rng)
//   | u32 count | count x { u32 name_len | name | u32 rank | u64 dims[rank] | f64 data[] }
// Tensors are named "param/<name>", "adam_m/<name>" and "adam_v/<name>".

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mose/config.hpp"
#include "mose/error.hpp"
#include "mose/trainer.hpp"

namespace mose {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    TrainConfig config;
    TrainState state;
};

namespace detail {
class ByteWriter {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void raw(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
    const std::vector<char>& bytes() const { return bytes_; }

private:
    std::vector<char> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

    std::uint32_t u32() {
        need(4, "u32");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8, "u64");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string raw(std::size_t n) {
        need(n, "bytes");
        std::string s(bytes_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t offset() const { return pos_; }
    bool at_end() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) {
            throw FormatError(std::string("checkpoint truncated reading ") + what + " at offset " + std::to_string(pos_));
        }
    }
    std::vector<char> bytes_;
    std::size_t pos_ = 0;
};
}  // namespace detail

inline std::vector<char> serialize_checkpoint(const TrainConfig& cfg, const TrainState& state) {
    nlohmann::json meta;
    meta["config"] = train_config_json(cfg);
    meta["iteration"] = state.iteration;
    meta["rng_key"] = state.rng.key;
    meta["rng_counter"] = state.rng.counter;
    meta["adam"] = {{"beta1", cfg.optim.beta1}, {"beta2", cfg.optim.beta2}, {"eps", cfg.optim.eps}};
    const std::string meta_text = meta.dump();

    detail::ByteWriter w;
    w.raw("MOSE");
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(meta_text.size()));
    w.raw(meta_text);
    w.u32(static_cast<std::uint32_t>(3 * kParamCount));
    auto emit = [&w](const std::string& name, const Tensor& t) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.raw(name);
        w.u32(static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) w.u64(d);
        for (double v : t.data()) w.f64(v);
    };
    visit_params([&](const char* n, const Tensor& t) { emit(std::string("param/") + n, t); }, state.params);
    visit_params([&](const char* n, const Tensor& t) { emit(std::string("adam_m/") + n, t); }, state.adam_m);
    visit_params([&](const char* n, const Tensor& t) { emit(std::string("adam_v/") + n, t); }, state.adam_v);
    return w.bytes();
}

/// Parses a full checkpoint; nothing is returned unless every field is valid.
inline Checkpoint deserialize_checkpoint(std::vector<char> bytes) {
    detail::ByteReader r(std::move(bytes));
    if (r.raw(4) != "MOSE") throw FormatError("checkpoint: bad magic at offset 0");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " at offset 4");
    }
    const std::size_t meta_offset = r.offset();
    const std::string meta_text = r.raw(r.u32());
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(meta_text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint: bad metadata at offset " + std::to_string(meta_offset) + ": " + e.what());
    }
    Checkpoint ck;
    try {
        ck.config = train_config_from_json(meta.at("config"));
        ck.state.iteration = meta.at("iteration").get<std::uint64_t>();
        ck.state.rng = {meta.at("rng_key").get<std::uint64_t>(), meta.at("rng_counter").get<std::uint64_t>()};
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: incomplete metadata: ") + e.what());
    }

    std::map<std::string, Tensor> table;
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t entry_offset = r.offset();
        std::string name = r.raw(r.u32());
        const std::uint32_t rank = r.u32();
        if (rank == 0 || rank > 8) throw FormatError("checkpoint: bad rank at offset " + std::to_string(entry_offset));
        Shape shape(rank);
        std::uint64_t numel = 1;
        for (auto& d : shape) {
            const std::uint64_t v = r.u64();
            if (v == 0 || v > (1ULL << 32)) throw FormatError("checkpoint: bad dimension at offset " + std::to_string(r.offset() - 8));
            d = static_cast<std::size_t>(v);
            numel *= v;
            if (numel > (1ULL << 32)) throw FormatError("checkpoint: tensor too large at offset " + std::to_string(entry_offset));
        }
        std::vector<double> data(static_cast<std::size_t>(numel));
        for (double& v : data) v = r.f64();
        table.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    if (!r.at_end()) throw FormatError("checkpoint: trailing bytes at offset " + std::to_string(r.offset()));

    const ModelParams like = init_params(ck.config.model, Rng(0));
    auto take = [&](const std::string& prefix, ModelParams& dst) {
        dst = like;
        visit_params(
            [&](const char* n, Tensor& t) {
                auto it = table.find(prefix + n);
                if (it == table.end()) throw FormatError("checkpoint: missing tensor " + prefix + n);
                if (it->second.shape() != t.shape()) throw FormatError("checkpoint: shape mismatch for " + prefix + n);
                t = std::move(it->second);
            },
            dst);
    };
    take("param/", ck.state.params);
    take("adam_m/", ck.state.adam_m);
    take("adam_v/", ck.state.adam_v);
    return ck;
}

/// Atomic: writes "<path>.tmp" and renames it over `path`.
inline void save_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg, const TrainState& state) {
    const std::vector<char> bytes = serialize_checkpoint(cfg, state);
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(std::move(bytes));
}

}  // namespace mose
