#pragma once

// Parameter layout of the whole model, templated on the leaf type so the same
// structure holds tensors (values, gradients, optimizer moments) or graph node ids.

#include <cstddef>
#include <utility>

namespace mose {

template <class T>
struct ConvT {
    T weight;
    T bias;
};

/// Two stride-2 convolutions: 1 -> enc_channels -> embed_channels.
template <class T>
struct EncoderT {
    ConvT<T> down1;
    ConvT<T> down2;
};

/// Two 3x3 convolutions: embed_channels -> gate_hidden -> n.
template <class T>
struct GatingNetT {
    ConvT<T> hidden;
    ConvT<T> out;
};

/// 1x1 prompt projection, then conv + 2x repeat twice, then the class head.
template <class T>
struct DecoderT {
    ConvT<T> prompt;
    ConvT<T> up1;
    ConvT<T> up2;
    ConvT<T> head;
};

template <class T>
struct ParamSetT {
    EncoderT<T> encoder;
    GatingNetT<T> gating;
    T experts;  // [n, h, w]
    DecoderT<T> decoder;
};

/// Calls f(name, leaf_of_set_0, leaf_of_set_1, ...) for every parameter in a fixed order.
template <class F, class... Sets>
void visit_params(F&& f, Sets&&... sets) {
    f("encoder.down1.weight", sets.encoder.down1.weight...);
    f("encoder.down1.bias", sets.encoder.down1.bias...);
    f("encoder.down2.weight", sets.encoder.down2.weight...);
    f("encoder.down2.bias", sets.encoder.down2.bias...);
    f("gating.hidden.weight", sets.gating.hidden.weight...);
    f("gating.hidden.bias", sets.gating.hidden.bias...);
    f("gating.out.weight", sets.gating.out.weight...);
    f("gating.out.bias", sets.gating.out.bias...);
    f("experts", sets.experts...);
    f("decoder.prompt.weight", sets.decoder.prompt.weight...);
    f("decoder.prompt.bias", sets.decoder.prompt.bias...);
    f("decoder.up1.weight", sets.decoder.up1.weight...);
    f("decoder.up1.bias", sets.decoder.up1.bias...);
    f("decoder.up2.weight", sets.decoder.up2.weight...);
    f("decoder.up2.bias", sets.decoder.up2.bias...);
    f("decoder.head.weight", sets.decoder.head.weight...);
    f("decoder.head.bias", sets.decoder.head.bias...);
}

inline constexpr std::size_t kParamCount = 17;

}  // namespace mose
