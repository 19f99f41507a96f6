#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "helpers.hpp"
#include "mose/metrics.hpp"

using namespace mose;
using mose::test::random_mask;

namespace {

double dice_oracle(const Tensor& p, const Tensor& g) {
    double inter = 0, a = 0, b = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        inter += (p[i] != 0 && g[i] != 0);
        a += p[i] != 0;
        b += g[i] != 0;
    }
    return a + b == 0 ? 1.0 : 2 * inter / (a + b);
}

// All-pairs directed distances, then the symmetric max.
double hausdorff_oracle(const Tensor& p, const Tensor& g) {
    const std::size_t h = p.dim(0), w = p.dim(1);
    std::vector<std::pair<long, long>> ps, gs;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            if (p.at(y, x) != 0) ps.emplace_back(y, x);
            if (g.at(y, x) != 0) gs.emplace_back(y, x);
        }
    if (ps.empty() && gs.empty()) return 0.0;
    if (ps.empty() || gs.empty()) return std::sqrt(double(h * h + w * w));
    auto directed = [](const auto& from, const auto& to) {
        long worst = 0;
        for (auto [ay, ax] : from) {
            long best = std::numeric_limits<long>::max();
            for (auto [by, bx] : to) best = std::min(best, (ay - by) * (ay - by) + (ax - bx) * (ax - bx));
            worst = std::max(worst, best);
        }
        return worst;
    };
    return std::sqrt(static_cast<double>(std::max(directed(ps, gs), directed(gs, ps))));
}

}  // namespace

TEST(Dice, HandCases) {
    Tensor a({4, 4}), b({4, 4});
    a.at(1, 0) = a.at(1, 1) = a.at(2, 0) = a.at(2, 1) = 1;
    b.at(1, 1) = b.at(1, 2) = b.at(2, 1) = b.at(2, 2) = 1;
    EXPECT_EQ(dice_coeff(a, b), 0.5);
    EXPECT_EQ(dice_coeff(a, a), 1.0);
    Tensor c({4, 4});
    c.at(3, 3) = 1;
    EXPECT_EQ(dice_coeff(a, c), 0.0);
}

TEST(Hausdorff, HandCases) {
    Tensor a({6, 6}), b({6, 6});
    a.at(0, 0) = 1;
    b.at(3, 4) = 1;
    EXPECT_EQ(hausdorff(a, b), 5.0);
    EXPECT_EQ(hausdorff(a, a), 0.0);
    EXPECT_EQ(hausdorff(Tensor({6, 8}), Tensor({6, 8})), 0.0);
    EXPECT_EQ(hausdorff(a, Tensor({6, 6})), std::sqrt(72.0));
}

TEST(Metrics, MatchBruteForceOracles) {
    Rng rng(1);
    for (int seed = 0; seed < 500; ++seed) {
        Rng r = rng.split(seed);
        const std::size_t h = 1 + r.below(16), w = 1 + r.below(16);
        const double density = r.uniform(0.0, 0.6);
        const Tensor p = random_mask(h, w, r, density), g = random_mask(h, w, r, density);
        ASSERT_EQ(dice_coeff(p, g), dice_oracle(p, g)) << "seed " << seed;
        ASSERT_EQ(hausdorff(p, g), hausdorff_oracle(p, g)) << "seed " << seed;
    }
}

TEST(DistanceTransform, MatchesBruteForce) {
    Rng rng(2);
    const Tensor m = random_mask(13, 9, rng, 0.1);
    const Tensor d = squared_distance_transform(m);
    for (std::size_t y = 0; y < 13; ++y)
        for (std::size_t x = 0; x < 9; ++x) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t v = 0; v < 13; ++v)
                for (std::size_t u = 0; u < 9; ++u)
                    if (m.at(v, u) != 0) best = std::min(best, double((y - v) * (y - v) + (x - u) * (x - u)));
            ASSERT_EQ(d.at(y, x), best);
        }
}

TEST(Utilization, DeadExperts) {
    Rng rng(3);
    std::vector<SparseCoding> all;
    Tensor g({4, 4, 5});
    for (double& v : g.data()) v = rng.uniform(0.1, 1.0);
    all.push_back(topk_sparsify(g, 5));
    EXPECT_EQ(utilization_report(all).dead_experts, 0u);

    Tensor onehot({4, 4, 4});
    for (std::size_t p = 0; p < 16; ++p) onehot[p * 4] = 1.0;
    std::vector<SparseCoding> one{topk_sparsify(onehot, 1)};
    const UtilizationReport r = utilization_report(one);
    EXPECT_EQ(r.dead_experts, 3u);
    EXPECT_EQ(r.retained[0], 16u);
    EXPECT_EQ(r.usage_cv, 3.0);  // [16, 0, 0, 0]: var 48, mean^2 16
}

TEST(MeanStd, Population) {
    const std::vector<double> xs{1, 2, 3, 4};
    const auto [m, s] = mean_std(xs);
    EXPECT_EQ(m, 2.5);
    EXPECT_DOUBLE_EQ(s, std::sqrt(1.25));
}
