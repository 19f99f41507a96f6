#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mose/kernels.hpp"
#include "mose/tensor.hpp"

namespace mose {

using NodeId = std::size_t;

/// Tape of kernel applications. Nodes are appended in topological order, so
/// backward is a single reverse sweep; gradients from fan-out add up.
class Graph {
public:
    using Backward = std::function<void(Graph&, NodeId self, const Tensor& grad_out)>;

    NodeId constant(Tensor value) { return push("constant", std::move(value), {}, false, nullptr); }

    NodeId parameter(Tensor value) { return push("parameter", std::move(value), {}, true, nullptr); }

    NodeId apply(std::string op, Tensor value, std::initializer_list<NodeId> inputs, Backward backward) {
        return apply(std::move(op), std::move(value), std::vector<NodeId>(inputs), std::move(backward));
    }

    NodeId apply(std::string op, Tensor value, std::vector<NodeId> inputs, Backward backward) {
        bool needs = false;
        for (NodeId in : inputs) needs = needs || nodes_.at(in).requires_grad;
        return push(std::move(op), std::move(value), std::move(inputs), needs, std::move(backward));
    }

    const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
    const std::string& op(NodeId id) const { return nodes_.at(id).op; }
    const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }
    bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Gradient of the last backward root w.r.t. this node (zeros if unreached).
    Tensor grad(NodeId id) const {
        const Node& n = nodes_.at(id);
        return n.grad.empty() ? Tensor::zeros_like(n.value) : n.grad;
    }

    void accumulate(NodeId id, const Tensor& g) {
        Node& n = nodes_.at(id);
        if (!n.requires_grad) return;
        n.value.require_same_shape(g, ("gradient for node '" + n.op + "'").c_str());
        if (n.grad.empty()) {
            n.grad = g;
        } else {
            n.grad += g;
        }
    }

    /// Reverse sweep from a scalar root seeded with 1.
    void backward(NodeId root) {
        if (value(root).size() != 1) throw DimensionError("backward root must be a scalar");
        for (Node& n : nodes_) n.grad = Tensor();
        visits_ = 0;
        nodes_[root].grad = Tensor(nodes_[root].value.shape(), 1.0);
        for (NodeId id = root + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (n.grad.empty() || !n.backward) continue;
            ++visits_;
            // Copy: backward may append to inputs' grads, which never aliases n.grad.
            const Tensor g = n.grad;
            n.backward(*this, id, g);
        }
    }

    std::size_t backward_visits() const noexcept { return visits_; }

private:
    struct Node {
        std::string op;
        Tensor value;
        std::vector<NodeId> inputs;
        bool requires_grad = false;
        Backward backward;
        Tensor grad;
    };

    NodeId push(std::string op, Tensor value, std::vector<NodeId> inputs, bool requires_grad, Backward backward) {
        for (NodeId in : inputs) {
            if (in >= nodes_.size()) throw DimensionError("graph input id out of range");
        }
        nodes_.push_back(Node{std::move(op), std::move(value), std::move(inputs), requires_grad,
                              std::move(backward), Tensor()});
        return nodes_.size() - 1;
    }

    std::vector<Node> nodes_;
    std::size_t visits_ = 0;
};

namespace ops {

inline NodeId conv2d(Graph& g, NodeId x, NodeId weight, NodeId bias, std::size_t stride, std::size_t pad) {
    Tensor out = kernels::conv2d(g.value(x), g.value(weight), g.value(bias), stride, pad);
    return g.apply("conv2d", std::move(out), {x, weight, bias},
                   [x, weight, bias, stride, pad](Graph& gr, NodeId, const Tensor& gout) {
                       auto grads = kernels::conv2d_backward(gr.value(x), gr.value(weight), gout, stride, pad);
                       gr.accumulate(x, grads.input);
                       gr.accumulate(weight, grads.weight);
                       gr.accumulate(bias, grads.bias);
                   });
}

inline NodeId tanh(Graph& g, NodeId x) {
    return g.apply("tanh", kernels::tanh(g.value(x)), {x}, [x](Graph& gr, NodeId self, const Tensor& gout) {
        gr.accumulate(x, kernels::tanh_backward(gr.value(self), gout));
    });
}

inline NodeId sigmoid(Graph& g, NodeId x) {
    return g.apply("sigmoid", kernels::sigmoid(g.value(x)), {x}, [x](Graph& gr, NodeId self, const Tensor& gout) {
        gr.accumulate(x, kernels::sigmoid_backward(gr.value(self), gout));
    });
}

inline NodeId softmax_channels(Graph& g, NodeId x) {
    return g.apply("softmax", kernels::softmax_channels(g.value(x)), {x},
                   [x](Graph& gr, NodeId self, const Tensor& gout) {
                       gr.accumulate(x, kernels::softmax_channels_backward(gr.value(self), gout));
                   });
}

inline NodeId upsample_nearest(Graph& g, NodeId x, std::size_t factor) {
    return g.apply("upsample", kernels::upsample_nearest(g.value(x), factor), {x},
                   [x, factor](Graph& gr, NodeId, const Tensor& gout) {
                       gr.accumulate(x, kernels::upsample_nearest_backward(gout, factor));
                   });
}

inline NodeId avg_pool2d(Graph& g, NodeId x, std::size_t factor) {
    return g.apply("avg_pool2d", kernels::avg_pool2d(g.value(x), factor), {x},
                   [x, factor](Graph& gr, NodeId, const Tensor& gout) {
                       gr.accumulate(x, kernels::avg_pool2d_backward(gout, factor));
                   });
}

inline NodeId add(Graph& g, NodeId a, NodeId b) {
    Tensor out = g.value(a);
    out += g.value(b);
    return g.apply("add", std::move(out), {a, b}, [a, b](Graph& gr, NodeId, const Tensor& gout) {
        gr.accumulate(a, gout);
        gr.accumulate(b, gout);
    });
}

inline NodeId scale(Graph& g, NodeId a, double s) {
    Tensor out = g.value(a);
    out *= s;
    return g.apply("scale", std::move(out), {a}, [a, s](Graph& gr, NodeId, const Tensor& gout) {
        Tensor gin = gout;
        gin *= s;
        gr.accumulate(a, gin);
    });
}

/// Elementwise sum of same-shaped nodes, accumulated left to right.
inline NodeId sum(Graph& g, std::span<const NodeId> terms) {
    if (terms.empty()) throw DimensionError("sum of zero terms");
    Tensor out = g.value(terms[0]);
    for (std::size_t i = 1; i < terms.size(); ++i) out += g.value(terms[i]);
    std::vector<NodeId> ins(terms.begin(), terms.end());
    return g.apply("sum", std::move(out), ins, [ins](Graph& gr, NodeId, const Tensor& gout) {
        for (NodeId in : ins) gr.accumulate(in, gout);
    });
}

inline NodeId reshape(Graph& g, NodeId x, Shape shape) {
    Tensor out = g.value(x).reshaped(std::move(shape));
    return g.apply("reshape", std::move(out), {x}, [x](Graph& gr, NodeId, const Tensor& gout) {
        gr.accumulate(x, gout.reshaped(gr.value(x).shape()));
    });
}

/// [C,H,W] -> [H,W,C].
inline NodeId chw_to_hwc(Graph& g, NodeId x) {
    const Tensor& in = g.value(x);
    require_rank(in, 3, "chw_to_hwc");
    const std::size_t c = in.dim(0), h = in.dim(1), w = in.dim(2);
    Tensor out({h, w, c});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) out.at(y, xx, ch) = in.at(ch, y, xx);
    return g.apply("chw_to_hwc", std::move(out), {x}, [x, c, h, w](Graph& gr, NodeId, const Tensor& gout) {
        Tensor gin({c, h, w});
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t xx = 0; xx < w; ++xx) gin.at(ch, y, xx) = gout.at(y, xx, ch);
        gr.accumulate(x, gin);
    });
}

}  // namespace ops
}  // namespace mose
