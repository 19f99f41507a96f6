#pragma once

// Shape-expert dictionary, pixel-wise gating, Top-K sparsification by absolute
// value, shape-map composition and the sigmoid prompt.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "mose/error.hpp"
#include "mose/graph.hpp"
#include "mose/kernels.hpp"
#include "mose/params.hpp"
#include "mose/rng.hpp"
#include "mose/tensor.hpp"

namespace mose {

using GatingNet = GatingNetT<Tensor>;
using GatingNodes = GatingNetT<NodeId>;

/// Expert maps are h = H/4 by w = W/4.
inline constexpr std::size_t kExpertDownsample = 4;

inline constexpr double kExpertInitStd = 0.1;

/// n learnable h x w expert maps drawn i.i.d. from N(0, 0.1^2).
inline Tensor make_expert_bank(std::size_t n, std::size_t h, std::size_t w, Rng rng) {
    if (n == 0) throw ConfigError("expert bank: n must be at least 1");
    Tensor experts({n, h, w});
    for (double& v : experts.data()) v = rng.normal(0.0, kExpertInitStd);
    return experts;
}

/// Sparsified gating field. `dense` is [h, w, n]; `retained` lists, per pixel,
/// the k kept expert indices in descending |value| order (ties: lower index first).
struct SparseCoding {
    Tensor dense;
    std::vector<std::uint32_t> retained;
    std::size_t k = 0;

    std::size_t height() const { return dense.dim(0); }
    std::size_t width() const { return dense.dim(1); }
    std::size_t experts() const { return dense.dim(2); }
    std::size_t pixels() const { return height() * width(); }

    std::span<const std::uint32_t> retained_at(std::size_t pixel) const {
        return std::span<const std::uint32_t>(retained).subspan(pixel * k, k);
    }

    /// Dense coding with every expert retained (warm-up phase).
    static SparseCoding all_retained(Tensor field) {
        require_rank(field, 3, "gating field");
        SparseCoding sc;
        const std::size_t n = field.dim(2), pixels = field.dim(0) * field.dim(1);
        sc.k = n;
        sc.retained.resize(pixels * n);
        for (std::size_t p = 0; p < pixels; ++p)
            for (std::size_t j = 0; j < n; ++j) sc.retained[p * n + j] = static_cast<std::uint32_t>(j);
        sc.dense = std::move(field);
        return sc;
    }
};

/// Keeps, per pixel, the k entries of largest absolute value; zeroes the rest.
inline SparseCoding topk_sparsify(const Tensor& gating, std::size_t k) {
    require_rank(gating, 3, "topk_sparsify gating");
    const std::size_t n = gating.dim(2), pixels = gating.dim(0) * gating.dim(1);
    if (k < 1 || k > n) {
        throw ConfigError("topk_sparsify: k = " + std::to_string(k) + " must lie in [1, n = " + std::to_string(n) + "]");
    }
    SparseCoding sc;
    sc.k = k;
    sc.dense = Tensor::zeros_like(gating);
    sc.retained.resize(pixels * k);
    std::vector<std::uint32_t> order(n);
    for (std::size_t p = 0; p < pixels; ++p) {
        const double* row = gating.data().data() + p * n;
        std::iota(order.begin(), order.end(), 0u);
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                          [row](std::uint32_t a, std::uint32_t b) {
                              const double fa = std::abs(row[a]), fb = std::abs(row[b]);
                              return fa > fb || (fa == fb && a < b);
                          });
        for (std::size_t r = 0; r < k; ++r) {
            const std::uint32_t j = order[r];
            sc.retained[p * k + r] = j;
            sc.dense[p * n + j] = row[j];
        }
    }
    return sc;
}

/// Graph form; gradient flows through retained entries only.
inline NodeId topk_sparsify(Graph& g, NodeId gating, std::size_t k, SparseCoding* coding_out = nullptr) {
    SparseCoding sc = topk_sparsify(g.value(gating), k);
    const std::size_t n = sc.experts();
    std::vector<std::uint8_t> mask(sc.dense.size(), 0);
    for (std::size_t p = 0; p < sc.pixels(); ++p)
        for (std::uint32_t j : sc.retained_at(p)) mask[p * n + j] = 1;
    Tensor value = sc.dense;
    if (coding_out) *coding_out = std::move(sc);
    return g.apply("topk_sparsify", std::move(value), {gating},
                   [gating, mask = std::move(mask)](Graph& gr, NodeId, const Tensor& gout) {
                       Tensor gin = Tensor::zeros_like(gout);
                       for (std::size_t i = 0; i < gin.size(); ++i)
                           if (mask[i]) gin[i] = gout[i];
                       gr.accumulate(gating, gin);
                   });
}

inline void check_coding_bank(const Tensor& coding, const Tensor& experts) {
    require_rank(coding, 3, "compose coding");
    require_rank(experts, 3, "compose experts");
    require_axis(experts, 0, coding.dim(2), "compose experts (expert count)");
    require_axis(experts, 1, coding.dim(0), "compose experts (height)");
    require_axis(experts, 2, coding.dim(1), "compose experts (width)");
}

/// map[y, x] = sum_j coding[y, x, j] * experts[j, y, x], summed in ascending j.
inline Tensor compose_shape_map(const Tensor& coding, const Tensor& experts) {
    check_coding_bank(coding, experts);
    const std::size_t h = coding.dim(0), w = coding.dim(1), n = coding.dim(2), hw = h * w;
    Tensor map({h, w});
    for (std::size_t p = 0; p < hw; ++p) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += coding[p * n + j] * experts[j * hw + p];
        map[p] = acc;
    }
    return map;
}

inline Tensor compose_shape_map(const SparseCoding& coding, const Tensor& experts) {
    return compose_shape_map(coding.dense, experts);
}

inline NodeId compose_shape_map(Graph& g, NodeId coding, NodeId experts) {
    Tensor map = compose_shape_map(g.value(coding), g.value(experts));
    return g.apply("compose_shape_map", std::move(map), {coding, experts},
                   [coding, experts](Graph& gr, NodeId, const Tensor& gout) {
                       const Tensor& c = gr.value(coding);
                       const Tensor& s = gr.value(experts);
                       const std::size_t n = c.dim(2), hw = c.dim(0) * c.dim(1);
                       Tensor gc = Tensor::zeros_like(c);
                       Tensor gs = Tensor::zeros_like(s);
                       for (std::size_t p = 0; p < hw; ++p)
                           for (std::size_t j = 0; j < n; ++j) {
                               gc[p * n + j] = gout[p] * s[j * hw + p];
                               gs[j * hw + p] = gout[p] * c[p * n + j];
                           }
                       gr.accumulate(coding, gc);
                       gr.accumulate(experts, gs);
                   });
}

/// Sigmoid of the shape map; values in (0, 1) away from saturation.
inline Tensor shape_prompt(const Tensor& map) {
    if (!map.all_finite()) throw NumericError("shape_prompt: non-finite shape map");
    return kernels::sigmoid(map);
}

inline NodeId shape_prompt(Graph& g, NodeId map) { return ops::sigmoid(g, map); }

/// Pixel-wise expert weights [h, w, n] from an embedding [Ce, h, w].
inline NodeId gate(Graph& g, NodeId embedding, const GatingNodes& net) {
    const NodeId hidden = ops::tanh(g, ops::conv2d(g, embedding, net.hidden.weight, net.hidden.bias, 1, 1));
    const NodeId out = ops::conv2d(g, hidden, net.out.weight, net.out.bias, 1, 1);
    return ops::chw_to_hwc(g, out);
}

inline Tensor gate(const Tensor& embedding, const GatingNet& net) {
    Graph g;
    const GatingNodes nodes{{g.constant(net.hidden.weight), g.constant(net.hidden.bias)},
                            {g.constant(net.out.weight), g.constant(net.out.bias)}};
    return g.value(gate(g, g.constant(embedding), nodes));
}

}  // namespace mose
