#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "mose/error.hpp"
#include "mose/tensor.hpp"

namespace mose {

struct AdamWConfig {
    double lr = 3e-3;
    double weight_decay = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One AdamW update at step t >= 1: decoupled decay p -= lr * wd * p, then the
/// bias-corrected Adam step.
inline void adamw_step(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, const AdamWConfig& cfg,
                       std::uint64_t t, const std::string& name = "param") {
    if (t < 1) throw ConfigError("adamw_step: step count must be >= 1");
    param.require_same_shape(grad, ("adamw grad for " + name).c_str());
    param.require_same_shape(m, ("adamw first moment for " + name).c_str());
    param.require_same_shape(v, ("adamw second moment for " + name).c_str());
    if (!grad.all_finite()) throw NumericError("adamw_step: non-finite gradient for " + name);

    const double td = static_cast<double>(t);
    const double bc1 = 1.0 - std::pow(cfg.beta1, td);
    const double bc2 = 1.0 - std::pow(cfg.beta2, td);
    const double decay = 1.0 - cfg.lr * cfg.weight_decay;
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        param[i] = param[i] * decay - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

}  // namespace mose
