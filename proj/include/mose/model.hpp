#pragma once

// Encoder / prompt-conditioned decoder surrounding the MoSE layer, and the
// read-only inference path used on unseen domains.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "mose/error.hpp"
#include "mose/graph.hpp"
#include "mose/losses.hpp"
#include "mose/mose_layer.hpp"
#include "mose/params.hpp"
#include "mose/rng.hpp"
#include "mose/tensor.hpp"

namespace mose {

/// Shape: the shape map is the decoder prompt. Zero: the decoder sees an
/// all-zero prompt and the MoSE branch is not evaluated (baseline).
enum class PromptMode { Shape, Zero };

struct ModelConfig {
    std::size_t image_size = 64;
    std::size_t n = 16;
    std::size_t k = 4;
    std::size_t classes = 2;
    std::size_t enc_channels = 16;
    std::size_t embed_channels = 32;
    std::size_t gate_hidden = 64;
    std::size_t dec_channels1 = 16;
    std::size_t dec_channels2 = 8;
    PromptMode prompt_mode = PromptMode::Shape;

    std::size_t expert_size() const { return image_size / kExpertDownsample; }

    void validate() const {
        if (image_size == 0 || image_size % kExpertDownsample != 0) {
            throw ConfigError("image_size must be a positive multiple of 4, got " + std::to_string(image_size));
        }
        if (n < 1) throw ConfigError("n must be at least 1");
        if (k < 1 || k > n) throw ConfigError("k must lie in [1, n]");
        if (classes < 2) throw ConfigError("classes must be at least 2");
        if (!enc_channels || !embed_channels || !gate_hidden || !dec_channels1 || !dec_channels2) {
            throw ConfigError("channel widths must be positive");
        }
    }
};

using Encoder = EncoderT<Tensor>;
using Decoder = DecoderT<Tensor>;
using ModelParams = ParamSetT<Tensor>;
using ParamNodes = ParamSetT<NodeId>;

inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

namespace detail {
inline ConvT<Tensor> make_conv(std::size_t cout, std::size_t cin, std::size_t kh, std::size_t kw, Rng& rng) {
    ConvT<Tensor> c{Tensor({cout, cin, kh, kw}), Tensor({cout})};
    const double stddev = 1.0 / std::sqrt(static_cast<double>(cin * kh * kw));
    for (double& v : c.weight.data()) v = rng.normal(0.0, stddev);
    return c;
}
}  // namespace detail

/// LeCun-normal conv weights, zero biases, experts from make_expert_bank.
inline ModelParams init_params(const ModelConfig& cfg, Rng rng) {
    cfg.validate();
    const std::size_t h = cfg.expert_size();
    Rng conv_rng = rng.split(1);
    ModelParams p;
    p.encoder.down1 = detail::make_conv(cfg.enc_channels, 1, 4, 4, conv_rng);
    p.encoder.down2 = detail::make_conv(cfg.embed_channels, cfg.enc_channels, 4, 4, conv_rng);
    p.gating.hidden = detail::make_conv(cfg.gate_hidden, cfg.embed_channels, 3, 3, conv_rng);
    p.gating.out = detail::make_conv(cfg.n, cfg.gate_hidden, 3, 3, conv_rng);
    p.experts = make_expert_bank(cfg.n, h, h, rng.split(2));
    p.decoder.prompt = detail::make_conv(cfg.embed_channels, 1, 1, 1, conv_rng);
    p.decoder.up1 = detail::make_conv(cfg.dec_channels1, cfg.embed_channels, 3, 3, conv_rng);
    p.decoder.up2 = detail::make_conv(cfg.dec_channels2, cfg.dec_channels1, 3, 3, conv_rng);
    p.decoder.head = detail::make_conv(cfg.classes, cfg.dec_channels2, 3, 3, conv_rng);
    return p;
}

inline ModelParams zeros_like(const ModelParams& params) {
    ModelParams z = params;
    visit_params([](const char*, Tensor& t) { t.fill(0.0); }, z);
    return z;
}

inline ParamNodes bind_params(Graph& g, const ModelParams& params) {
    ParamNodes nodes;
    visit_params([&g](const char*, NodeId& id, const Tensor& t) { id = g.parameter(t); }, nodes, params);
    return nodes;
}

inline ModelParams collect_grads(const Graph& g, const ParamNodes& nodes, const ModelParams& like) {
    ModelParams grads = zeros_like(like);
    visit_params([&g](const char*, Tensor& out, const NodeId& id) { out = g.grad(id); }, grads, nodes);
    return grads;
}

inline void check_image(const Tensor& x, const ModelConfig& cfg) {
    require_rank(x, 3, "image");
    require_axis(x, 0, 1, "image (channels)");
    if (x.dim(1) % kExpertDownsample || x.dim(2) % kExpertDownsample) {
        throw ConfigError("image height and width must be divisible by 4");
    }
    require_axis(x, 1, cfg.image_size, "image (height)");
    require_axis(x, 2, cfg.image_size, "image (width)");
}

/// [1, H, W] -> [Ce, H/4, W/4].
inline NodeId encode(Graph& g, NodeId x, const EncoderT<NodeId>& enc) {
    const NodeId h1 = ops::tanh(g, ops::conv2d(g, x, enc.down1.weight, enc.down1.bias, 2, 1));
    return ops::tanh(g, ops::conv2d(g, h1, enc.down2.weight, enc.down2.bias, 2, 1));
}

inline Tensor encode(const Tensor& x, const Encoder& enc) {
    if (x.rank() == 3 && (x.dim(1) % kExpertDownsample || x.dim(2) % kExpertDownsample)) {
        throw ConfigError("encode: image height and width must be divisible by 4");
    }
    Graph g;
    const EncoderT<NodeId> nodes{{g.constant(enc.down1.weight), g.constant(enc.down1.bias)},
                                 {g.constant(enc.down2.weight), g.constant(enc.down2.bias)}};
    return g.value(encode(g, g.constant(x), nodes));
}

/// Prompt [h, w] is projected 1x1 to embedding channels and added to the
/// embedding, then upsampled twice to [C, H, W] logits.
inline NodeId decode(Graph& g, NodeId embedding, NodeId prompt, const DecoderT<NodeId>& dec) {
    const Tensor& pv = g.value(prompt);
    require_rank(pv, 2, "decoder prompt");
    const NodeId prompt_chw = ops::reshape(g, prompt, {1, pv.dim(0), pv.dim(1)});
    const NodeId fused = ops::add(g, embedding, ops::conv2d(g, prompt_chw, dec.prompt.weight, dec.prompt.bias, 1, 0));
    const NodeId u1 = ops::upsample_nearest(g, ops::tanh(g, ops::conv2d(g, fused, dec.up1.weight, dec.up1.bias, 1, 1)), 2);
    const NodeId u2 = ops::upsample_nearest(g, ops::tanh(g, ops::conv2d(g, u1, dec.up2.weight, dec.up2.bias, 1, 1)), 2);
    return ops::conv2d(g, u2, dec.head.weight, dec.head.bias, 1, 1);
}

struct ForwardNodes {
    NodeId embedding = kNoNode;
    NodeId gating = kNoNode;
    NodeId coding = kNoNode;
    NodeId shape_map = kNoNode;
    NodeId prompt = kNoNode;
    NodeId logits = kNoNode;
    SparseCoding coding_value;
};

/// One embedding feeds both the gating network and the decoder.
inline ForwardNodes forward(Graph& g, const ParamNodes& params, NodeId image, const ModelConfig& cfg, Phase phase) {
    check_image(g.value(image), cfg);
    ForwardNodes out;
    out.embedding = encode(g, image, params.encoder);
    const std::size_t h = cfg.expert_size();
    if (cfg.prompt_mode == PromptMode::Zero) {
        out.prompt = g.constant(Tensor({h, h}));
    } else {
        const Tensor& emb = g.value(out.embedding);
        if (emb.dim(1) != g.value(params.experts).dim(1) || emb.dim(2) != g.value(params.experts).dim(2)) {
            throw DimensionError("embedding spatial size does not match the expert bank");
        }
        out.gating = gate(g, out.embedding, params.gating);
        if (phase == Phase::Warmup) {
            out.coding = out.gating;
            out.coding_value = SparseCoding::all_retained(g.value(out.gating));
        } else {
            out.coding = topk_sparsify(g, out.gating, cfg.k, &out.coding_value);
        }
        out.shape_map = compose_shape_map(g, out.coding, params.experts);
        out.prompt = shape_prompt(g, out.shape_map);
    }
    out.logits = decode(g, out.embedding, out.prompt, params.decoder);
    return out;
}

struct ModelOutput {
    Tensor shape_map;  // [h, w]; zeros in zero-prompt mode
    Tensor prompt;     // [h, w]
    Tensor logits;     // [C, H, W]
    SparseCoding coding;
};

inline ModelOutput forward(const Tensor& x, const ModelParams& params, const ModelConfig& cfg, Phase phase) {
    Graph g;
    ParamNodes nodes;
    visit_params([&g](const char*, NodeId& id, const Tensor& t) { id = g.constant(t); }, nodes, params);
    ForwardNodes f = forward(g, nodes, g.constant(x), cfg, phase);
    ModelOutput out;
    const std::size_t h = cfg.expert_size();
    out.shape_map = f.shape_map == kNoNode ? Tensor({h, h}) : g.value(f.shape_map);
    out.prompt = g.value(f.prompt);
    out.logits = g.value(f.logits);
    out.coding = std::move(f.coding_value);
    return out;
}

/// Per-pixel argmax over class logits; ties go to the lower class id.
inline Tensor argmax_mask(const Tensor& logits) {
    require_rank(logits, 3, "argmax logits");
    const std::size_t c = logits.dim(0), h = logits.dim(1), w = logits.dim(2), hw = h * w;
    Tensor mask({h, w});
    for (std::size_t p = 0; p < hw; ++p) {
        std::size_t best = 0;
        for (std::size_t ch = 1; ch < c; ++ch)
            if (logits[ch * hw + p] > logits[best * hw + p]) best = ch;
        mask[p] = static_cast<double>(best);
    }
    return mask;
}

struct Inference {
    Tensor mask;  // [H, W] class ids
    ModelOutput output;
};

/// Sparse-phase forward without any parameter mutation.
inline Inference infer(const Tensor& x, const ModelParams& params, const ModelConfig& cfg) {
    Inference r;
    r.output = forward(x, params, cfg, Phase::Sparse);
    r.mask = argmax_mask(r.output.logits);
    return r;
}

}  // namespace mose
