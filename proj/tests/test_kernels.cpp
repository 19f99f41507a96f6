#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "mose/grad_check.hpp"
#include "mose/graph.hpp"
#include "mose/kernels.hpp"

using namespace mose;
using mose::test::random_tensor;

namespace {

// Direct cross-correlation, one output at a time.
Tensor conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t s, std::size_t p) {
    const long cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const long cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const long ho = (h + 2 * p - kh) / s + 1, wo = (wd + 2 * p - kw) / s + 1;
    Tensor out({static_cast<std::size_t>(cout), static_cast<std::size_t>(ho), static_cast<std::size_t>(wo)});
    for (long co = 0; co < cout; ++co)
        for (long oy = 0; oy < ho; ++oy)
            for (long ox = 0; ox < wo; ++ox) {
                double acc = 0.0;
                for (long ci = 0; ci < cin; ++ci)
                    for (long ky = 0; ky < kh; ++ky)
                        for (long kx = 0; kx < kw; ++kx) {
                            const long iy = oy * static_cast<long>(s) + ky - static_cast<long>(p);
                            const long ix = ox * static_cast<long>(s) + kx - static_cast<long>(p);
                            if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
                            acc += w[((co * cin + ci) * kh + ky) * kw + kx] * x.at(ci, iy, ix);
                        }
                out.at(co, oy, ox) = acc + b[co];
            }
    return out;
}

struct ConvCase {
    std::size_t cin, h, w, cout, k, stride, pad;
};

}  // namespace

TEST(Conv2d, IdentityKernel) {
    Rng rng(1);
    const Tensor x = random_tensor({1, 5, 7}, rng);
    const Tensor y = kernels::conv2d(x, Tensor({1, 1, 1, 1}, 1.0), Tensor({1}), 1, 0);
    EXPECT_EQ(y, x);
}

TEST(Conv2d, SumOfOnes) {
    const Tensor y = kernels::conv2d(Tensor({1, 3, 3}, 1.0), Tensor({1, 1, 3, 3}, 1.0), Tensor({1}), 1, 0);
    ASSERT_EQ(y.size(), 1u);
    EXPECT_EQ(y[0], 9.0);
}

TEST(Conv2d, MatchesDirectOracleExactly) {
    Rng rng(2);
    const Tensor x = random_tensor({2, 5, 5}, rng);
    const Tensor w = random_tensor({3, 2, 3, 3}, rng);
    const Tensor b = random_tensor({3}, rng);
    for (std::size_t pad : {0u, 1u}) {
        EXPECT_EQ(kernels::conv2d(x, w, b, 1, pad), conv_oracle(x, w, b, 1, pad)) << "pad " << pad;
    }
}

TEST(Conv2d, StridedMatchesOracle) {
    Rng rng(3);
    for (const ConvCase& c : {ConvCase{1, 8, 8, 4, 4, 2, 1}, ConvCase{3, 9, 7, 2, 3, 2, 1}, ConvCase{2, 6, 6, 2, 2, 2, 0}}) {
        const Tensor x = random_tensor({c.cin, c.h, c.w}, rng);
        const Tensor w = random_tensor({c.cout, c.cin, c.k, c.k}, rng);
        const Tensor b = random_tensor({c.cout}, rng);
        EXPECT_EQ(kernels::conv2d(x, w, b, c.stride, c.pad), conv_oracle(x, w, b, c.stride, c.pad));
    }
}

TEST(Conv2d, ErrorsNameTheAxis) {
    const Tensor x({2, 5, 5}), b({3});
    try {
        kernels::conv2d(x, Tensor({3, 1, 3, 3}), b, 1, 0);
        FAIL();
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("axis 1"), std::string::npos) << e.what();
    }
    try {
        kernels::conv2d(Tensor({2, 6, 5}), Tensor({3, 2, 3, 3}), b, 2, 0);
        FAIL();
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("height (axis 1)"), std::string::npos) << e.what();
    }
    EXPECT_THROW(kernels::conv2d(x, Tensor({3, 2, 7, 7}), b, 1, 0), DimensionError);
}

TEST(AvgPool, Examples) {
    Tensor block({1, 2, 2}, std::vector<double>{1, 2, 3, 5});
    EXPECT_EQ(kernels::avg_pool2d(block, 2)[0], 2.75);
    EXPECT_EQ(kernels::avg_pool2d(Tensor({2, 4, 4}, 0.3), 2), Tensor({2, 2, 2}, 0.3));
    Rng rng(4);
    const Tensor x = random_tensor({2, 3, 5}, rng);
    EXPECT_EQ(kernels::avg_pool2d(x, 1), x);
    EXPECT_THROW(kernels::avg_pool2d(Tensor({1, 5, 4}), 2), DimensionError);
}

TEST(Sigmoid, Examples) {
    EXPECT_EQ(kernels::sigmoid(0.0), 0.5);
    EXPECT_NEAR(kernels::sigmoid(40.0), 1.0, 1e-15);
    EXPECT_NEAR(kernels::sigmoid(1.0), 0.7310585786, 1e-9);
    EXPECT_TRUE(std::isfinite(kernels::sigmoid(-1000.0)));
    EXPECT_EQ(kernels::sigmoid(-1000.0), 0.0);
}

TEST(GradCheck, QuadraticIsExact) {
    Rng rng(5);
    const Tensor p = random_tensor({3, 4}, rng);
    const Objective f = [](std::span<const Tensor> ps, std::vector<Tensor>* grads) {
        double s = 0.0;
        for (double v : ps[0].data()) s += v * v;
        if (grads) {
            grads->assign(1, ps[0]);
            (*grads)[0] *= 2.0;
        }
        return s;
    };
    const std::vector<Tensor> params{p};
    const auto rep = grad_check(f, params);
    EXPECT_LT(rep.max_rel_error, 1e-9);
    EXPECT_EQ(params[0], p);  // evaluation point untouched
}

TEST(GradCheck, CorruptedGradientIsCaught) {
    const Objective f = [](std::span<const Tensor> ps, std::vector<Tensor>* grads) {
        double s = 0.0;
        for (double v : ps[0].data()) s += v * v;
        if (grads) {
            grads->assign(1, ps[0]);
            (*grads)[0] *= 4.0;
        }
        return s;
    };
    Rng rng(6);
    const std::vector<Tensor> params{random_tensor({5}, rng, 1.0, 2.0)};
    EXPECT_GT(grad_check(f, params).max_rel_error, 0.3);
}

TEST(GradCheck, RejectsBadEpsAndNonFiniteLoss) {
    const Objective f = [](std::span<const Tensor> ps, std::vector<Tensor>* grads) {
        if (grads) grads->assign(1, Tensor::zeros_like(ps[0]));
        return ps[0][0] > 0.5 ? std::nan("") : 0.0;
    };
    const std::vector<Tensor> params{Tensor({2}, std::vector<double>{0.5, 0.0})};
    GradCheckOptions bad;
    bad.eps = 1e-2;
    EXPECT_THROW(grad_check(f, params, bad), ConfigError);
    try {
        grad_check(f, params);
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("parameter 0"), std::string::npos) << e.what();
    }
}

namespace {

// Random linear readout of an op's output makes a scalar loss.
double readout(const Tensor& y, const Tensor& r) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
    return s;
}

}  // namespace

// Every graph op against central differences, over many shapes and seeds.
TEST(KernelGradients, RandomShapes) {
    Rng rng(7);
    int cases = 0;
    for (int seed = 0; seed < 24; ++seed) {
        Rng r = rng.split(seed);
        const std::size_t cin = 1 + r.below(3), cout = 1 + r.below(3);
        const std::size_t k = 1 + r.below(3), pad = r.below(2), stride = 1 + r.below(2);
        // Pick a spatial size that tiles exactly for this geometry.
        std::size_t h = k + stride * (1 + r.below(3)) - 2 * pad;
        if (h < 2) h += 2 * stride;
        const std::size_t w = h;
        const Tensor x = random_tensor({cin, h, w}, r);
        const Tensor wt = random_tensor({cout, cin, k, k}, r);
        const Tensor b = random_tensor({cout}, r);
        const std::size_t ho = (h + 2 * pad - k) / stride + 1;
        const Tensor rp = random_tensor({cout, 2 * ho, 2 * ho}, r);

        const Objective f = [&](std::span<const Tensor> ps, std::vector<Tensor>* grads) {
            Graph g;
            const NodeId nx = g.parameter(ps[0]), nw = g.parameter(ps[1]), nb = g.parameter(ps[2]);
            NodeId y = ops::conv2d(g, nx, nw, nb, stride, pad);
            y = (seed % 3 == 0) ? ops::tanh(g, y) : (seed % 3 == 1 ? ops::sigmoid(g, y) : ops::softmax_channels(g, y));
            const NodeId up = ops::upsample_nearest(g, y, 2);
            const double v = readout(g.value(up), rp);
            const NodeId loss = g.apply("readout", Tensor::scalar(v), {up}, [&](Graph& gr, NodeId, const Tensor& go) {
                Tensor gin = rp;
                gin *= go.item();
                gr.accumulate(up, gin);
            });
            if (grads) {
                g.backward(loss);
                *grads = {g.grad(nx), g.grad(nw), g.grad(nb)};
            }
            return v;
        };
        const std::vector<Tensor> params{x, wt, b};
        const auto rep = grad_check(f, params);
        EXPECT_LT(rep.max_rel_error, 1e-4) << "case " << seed;
        ++cases;
    }
    EXPECT_GE(cases, 20);
}

TEST(KernelGradients, AvgPool) {
    Rng rng(8);
    for (int seed = 0; seed < 5; ++seed) {
        Rng r = rng.split(seed);
        const std::size_t f = 1 + r.below(3);
        const Tensor x = random_tensor({2, 2 * f, 3 * f}, r);
        const Tensor rd = random_tensor({2, 2, 3}, r);
        const Objective obj = [&](std::span<const Tensor> ps, std::vector<Tensor>* grads) {
            const Tensor y = kernels::avg_pool2d(ps[0], f);
            if (grads) *grads = {kernels::avg_pool2d_backward(rd, f)};
            return readout(y, rd);
        };
        const std::vector<Tensor> params{x};
        EXPECT_LT(grad_check(obj, params).max_rel_error, 1e-4);
    }
}

TEST(Graph, AccumulatesAndCountsVisits) {
    Graph g;
    const NodeId a = g.parameter(Tensor({2}, std::vector<double>{1.0, 2.0}));
    const NodeId c = g.constant(Tensor({2}, 5.0));
    const NodeId s = ops::add(g, a, a);  // a used twice: gradient 2
    const NodeId t = ops::add(g, s, c);
    const NodeId loss = g.apply("sum", Tensor::scalar(g.value(t)[0] + g.value(t)[1]), {t},
                                [t](Graph& gr, NodeId, const Tensor& go) { gr.accumulate(t, Tensor({2}, go.item())); });
    g.backward(loss);
    EXPECT_EQ(g.grad(a), Tensor({2}, 2.0));
    EXPECT_EQ(g.grad(c), Tensor({2}, 0.0));  // constants receive nothing
    EXPECT_EQ(g.backward_visits(), 3u);      // loss, t, s
}
