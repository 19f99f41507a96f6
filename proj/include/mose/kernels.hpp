#pragma once

// Forward and analytic backward kernels. Every reduction runs in a fixed order
// (row-major, inner-to-outer) so repeated runs are bit-identical.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "mose/error.hpp"
#include "mose/tensor.hpp"

namespace mose::kernels {

struct Conv2dGrads {
    Tensor input;
    Tensor weight;
    Tensor bias;
};

struct Conv2dGeometry {
    std::size_t cin, h, w, cout, kh, kw, stride, pad, ho, wo;
};

inline Conv2dGeometry conv2d_geometry(const Tensor& input, const Tensor& weight, const Tensor& bias,
                                      std::size_t stride, std::size_t pad) {
    require_rank(input, 3, "conv2d input");
    require_rank(weight, 4, "conv2d weight");
    require_rank(bias, 1, "conv2d bias");
    if (stride == 0) throw ConfigError("conv2d: stride must be positive");
    Conv2dGeometry g{input.dim(0), input.dim(1), input.dim(2), weight.dim(0), weight.dim(2), weight.dim(3),
                     stride,       pad,          0,            0};
    if (weight.dim(1) != g.cin) {
        throw DimensionError("conv2d: weight axis 1 (input channels) is " + std::to_string(weight.dim(1)) +
                             " but input axis 0 (channels) is " + std::to_string(g.cin));
    }
    if (bias.dim(0) != g.cout) {
        throw DimensionError("conv2d: bias axis 0 is " + std::to_string(bias.dim(0)) +
                             " but weight axis 0 (output channels) is " + std::to_string(g.cout));
    }
    auto out_extent = [&](std::size_t in, std::size_t k, const char* axis) {
        const std::size_t padded = in + 2 * pad;
        if (k > padded) {
            throw DimensionError(std::string("conv2d: kernel does not fit padded input along ") + axis);
        }
        if ((padded - k) % stride != 0) {
            throw DimensionError(std::string("conv2d: ") + axis + " extent " + std::to_string(in) +
                                 " does not tile exactly with kernel " + std::to_string(k) + ", stride " +
                                 std::to_string(stride) + ", pad " + std::to_string(pad));
        }
        return (padded - k) / stride + 1;
    };
    g.ho = out_extent(g.h, g.kh, "height (axis 1)");
    g.wo = out_extent(g.w, g.kw, "width (axis 2)");
    return g;
}

namespace detail {
// Output columns [lo, hi) whose input column ox*stride + kx - pad lies inside [0, w).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t k, std::size_t pad, std::size_t stride,
                                                       std::size_t in, std::size_t out) {
    const long kk = static_cast<long>(k), p = static_cast<long>(pad), s = static_cast<long>(stride);
    long lo = 0;
    if (p > kk) lo = (p - kk + s - 1) / s;
    const long last = static_cast<long>(in) - 1 + p - kk;
    long hi = last < 0 ? 0 : std::min(last / s + 1, static_cast<long>(out));
    lo = std::min(lo, hi);
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}
}  // namespace detail

/// Cross-correlation. Each output accumulates in (ci, ky, kx) order starting at 0,
/// then the bias is added.
inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
                     std::size_t pad) {
    const auto g = conv2d_geometry(input, weight, bias, stride, pad);
    Tensor out({g.cout, g.ho, g.wo});
    const double* in = input.data().data();
    const double* wt = weight.data().data();
    double* o = out.data().data();
    for (std::size_t co = 0; co < g.cout; ++co) {
        double* oc = o + co * g.ho * g.wo;
        for (std::size_t ci = 0; ci < g.cin; ++ci) {
            const double* ic = in + ci * g.h * g.w;
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
                const auto [oy_lo, oy_hi] = detail::valid_range(ky, pad, stride, g.h, g.ho);
                for (std::size_t kx = 0; kx < g.kw; ++kx) {
                    const double wv = wt[((co * g.cin + ci) * g.kh + ky) * g.kw + kx];
                    const auto [ox_lo, ox_hi] = detail::valid_range(kx, pad, stride, g.w, g.wo);
                    for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
                        const double* irow = ic + (oy * stride + ky - pad) * g.w + kx - pad;
                        double* orow = oc + oy * g.wo;
                        if (stride == 1) {
                            for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) orow[ox] += wv * irow[ox];
                        } else {
                            for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) orow[ox] += wv * irow[ox * stride];
                        }
                    }
                }
            }
        }
        const double b = bias[co];
        for (std::size_t i = 0; i < g.ho * g.wo; ++i) oc[i] += b;
    }
    return out;
}

inline Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                                   std::size_t stride, std::size_t pad) {
    const Tensor bias_shape({weight.dim(0)});
    const auto g = conv2d_geometry(input, weight, bias_shape, stride, pad);
    require_rank(grad_out, 3, "conv2d grad_out");
    require_axis(grad_out, 0, g.cout, "conv2d grad_out");
    require_axis(grad_out, 1, g.ho, "conv2d grad_out");
    require_axis(grad_out, 2, g.wo, "conv2d grad_out");

    Conv2dGrads grads{Tensor::zeros_like(input), Tensor::zeros_like(weight), Tensor({g.cout})};
    const double* in = input.data().data();
    const double* wt = weight.data().data();
    const double* go = grad_out.data().data();
    double* gi = grads.input.data().data();
    double* gw = grads.weight.data().data();

    for (std::size_t co = 0; co < g.cout; ++co) {
        const double* goc = go + co * g.ho * g.wo;
        double acc = 0.0;
        for (std::size_t i = 0; i < g.ho * g.wo; ++i) acc += goc[i];
        grads.bias[co] = acc;
        for (std::size_t ci = 0; ci < g.cin; ++ci) {
            const double* ic = in + ci * g.h * g.w;
            double* gic = gi + ci * g.h * g.w;
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
                const auto [oy_lo, oy_hi] = detail::valid_range(ky, pad, stride, g.h, g.ho);
                for (std::size_t kx = 0; kx < g.kw; ++kx) {
                    const std::size_t widx = ((co * g.cin + ci) * g.kh + ky) * g.kw + kx;
                    const double wv = wt[widx];
                    const auto [ox_lo, ox_hi] = detail::valid_range(kx, pad, stride, g.w, g.wo);
                    double wacc = 0.0;
                    for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
                        const std::size_t ioff = (oy * stride + ky - pad) * g.w + kx - pad;
                        const double* irow = ic + ioff;
                        double* girow = gic + ioff;
                        const double* grow = goc + oy * g.wo;
                        for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) {
                            const double gv = grow[ox];
                            wacc += gv * irow[ox * stride];
                            girow[ox * stride] += wv * gv;
                        }
                    }
                    gw[widx] += wacc;
                }
            }
        }
    }
    return grads;
}

/// Mean over non-overlapping factor x factor blocks of a [C,H,W] tensor.
inline Tensor avg_pool2d(const Tensor& input, std::size_t factor) {
    require_rank(input, 3, "avg_pool2d input");
    if (factor == 0) throw ConfigError("avg_pool2d: factor must be positive");
    const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
    if (h % factor != 0) throw DimensionError("avg_pool2d: height (axis 1) not divisible by factor");
    if (w % factor != 0) throw DimensionError("avg_pool2d: width (axis 2) not divisible by factor");
    const std::size_t ho = h / factor, wo = w / factor;
    const double inv = 1.0 / static_cast<double>(factor * factor);
    Tensor out({c, ho, wo});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double acc = 0.0;
                for (std::size_t dy = 0; dy < factor; ++dy)
                    for (std::size_t dx = 0; dx < factor; ++dx)
                        acc += input.at(ch, oy * factor + dy, ox * factor + dx);
                out.at(ch, oy, ox) = acc * inv;
            }
    return out;
}

inline Tensor avg_pool2d_backward(const Tensor& grad_out, std::size_t factor) {
    require_rank(grad_out, 3, "avg_pool2d grad_out");
    const std::size_t c = grad_out.dim(0), ho = grad_out.dim(1), wo = grad_out.dim(2);
    const double inv = 1.0 / static_cast<double>(factor * factor);
    Tensor gin({c, ho * factor, wo * factor});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < ho * factor; ++y)
            for (std::size_t x = 0; x < wo * factor; ++x) gin.at(ch, y, x) = grad_out.at(ch, y / factor, x / factor) * inv;
    return gin;
}

/// Nearest-neighbour repeat of every pixel into a factor x factor block.
inline Tensor upsample_nearest(const Tensor& input, std::size_t factor) {
    require_rank(input, 3, "upsample input");
    const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
    Tensor out({c, h * factor, w * factor});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h * factor; ++y)
            for (std::size_t x = 0; x < w * factor; ++x) out.at(ch, y, x) = input.at(ch, y / factor, x / factor);
    return out;
}

inline Tensor upsample_nearest_backward(const Tensor& grad_out, std::size_t factor) {
    require_rank(grad_out, 3, "upsample grad_out");
    const std::size_t c = grad_out.dim(0), h = grad_out.dim(1) / factor, w = grad_out.dim(2) / factor;
    Tensor gin({c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (std::size_t dy = 0; dy < factor; ++dy)
                    for (std::size_t dx = 0; dx < factor; ++dx) acc += grad_out.at(ch, y * factor + dy, x * factor + dx);
                gin.at(ch, y, x) = acc;
            }
    return gin;
}

inline double sigmoid(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& input) {
    Tensor out = Tensor::zeros_like(input);
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = sigmoid(input[i]);
    return out;
}

/// Gradient given the forward output s = sigmoid(x).
inline Tensor sigmoid_backward(const Tensor& output, const Tensor& grad_out) {
    Tensor gin = Tensor::zeros_like(output);
    for (std::size_t i = 0; i < output.size(); ++i) gin[i] = grad_out[i] * output[i] * (1.0 - output[i]);
    return gin;
}

inline Tensor tanh(const Tensor& input) {
    Tensor out = Tensor::zeros_like(input);
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = std::tanh(input[i]);
    return out;
}

inline Tensor tanh_backward(const Tensor& output, const Tensor& grad_out) {
    Tensor gin = Tensor::zeros_like(output);
    for (std::size_t i = 0; i < output.size(); ++i) gin[i] = grad_out[i] * (1.0 - output[i] * output[i]);
    return gin;
}

/// Softmax over axis 0 of a [C,H,W] tensor.
inline Tensor softmax_channels(const Tensor& logits) {
    require_rank(logits, 3, "softmax logits");
    const std::size_t c = logits.dim(0), hw = logits.dim(1) * logits.dim(2);
    Tensor out = Tensor::zeros_like(logits);
    for (std::size_t p = 0; p < hw; ++p) {
        double mx = logits[p];
        for (std::size_t ch = 1; ch < c; ++ch) mx = std::max(mx, logits[ch * hw + p]);
        double z = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double e = std::exp(logits[ch * hw + p] - mx);
            out[ch * hw + p] = e;
            z += e;
        }
        for (std::size_t ch = 0; ch < c; ++ch) out[ch * hw + p] /= z;
    }
    return out;
}

inline Tensor softmax_channels_backward(const Tensor& probs, const Tensor& grad_out) {
    const std::size_t c = probs.dim(0), hw = probs.dim(1) * probs.dim(2);
    Tensor gin = Tensor::zeros_like(probs);
    for (std::size_t p = 0; p < hw; ++p) {
        double dot = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) dot += grad_out[ch * hw + p] * probs[ch * hw + p];
        for (std::size_t ch = 0; ch < c; ++ch) gin[ch * hw + p] = probs[ch * hw + p] * (grad_out[ch * hw + p] - dot);
    }
    return gin;
}

}  // namespace mose::kernels
