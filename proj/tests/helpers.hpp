#pragma once

#include <filesystem>
#include <string>

#include "mose/config.hpp"
#include "mose/rng.hpp"
#include "mose/synthdata.hpp"
#include "mose/tensor.hpp"

namespace mose::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

inline Tensor random_mask(std::size_t h, std::size_t w, Rng& rng, double p = 0.5) {
    Tensor t({h, w});
    for (double& v : t.data()) v = rng.uniform() < p ? 1.0 : 0.0;
    return t;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("mose_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// Small model and data so a training step takes milliseconds.
inline TrainConfig tiny_train_config() {
    TrainConfig c;
    c.model.image_size = 32;
    c.model.n = 4;
    c.model.k = 2;
    c.model.enc_channels = 4;
    c.model.embed_channels = 8;
    c.model.gate_hidden = 8;
    c.model.dec_channels1 = 8;
    c.model.dec_channels2 = 4;
    c.loss.t_warmup = 5;
    c.batch_size = 2;
    c.max_iterations = 10;
    c.max_epochs = 0;
    return c;
}

inline BenchmarkConfig tiny_bench_config(std::uint64_t seed = 1) {
    BenchmarkConfig b;
    b.seed = seed;
    b.image_size = 32;
    b.n_train = 8;
    b.n_val = 4;
    b.n_target = 5;
    return b;
}

}  // namespace mose::test
