#include <gtest/gtest.h>

#include <cmath>

#include "mose/optim.hpp"

using namespace mose;

TEST(AdamW, ZeroGradZeroDecayLeavesParams) {
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    Tensor p({3}, std::vector<double>{1.0, -2.0, 0.5});
    const Tensor before = p;
    Tensor g({3}), m({3}), v({3});
    for (std::uint64_t t = 1; t <= 5; ++t) adamw_step(p, g, m, v, cfg, t);
    EXPECT_EQ(p, before);
}

TEST(AdamW, ZeroGradOnlyDecays) {
    AdamWConfig cfg;
    cfg.lr = 0.01;
    cfg.weight_decay = 0.1;
    Tensor p({2}, std::vector<double>{1.0, -4.0});
    Tensor g({2}), m({2}), v({2});
    adamw_step(p, g, m, v, cfg, 1);
    EXPECT_EQ(p[0], 1.0 * (1.0 - 0.001));
    EXPECT_EQ(p[1], -4.0 * (1.0 - 0.001));
}

TEST(AdamW, FirstStepMovesByLr) {
    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.0;
    Tensor p({1}, std::vector<double>{1.0}), g({1}, std::vector<double>{3.0}), m({1}), v({1});
    adamw_step(p, g, m, v, cfg, 1);
    EXPECT_NEAR(p[0], 0.9, 1e-8);
}

TEST(AdamW, MinimizesQuadratic) {
    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.0;
    Tensor x({1}, std::vector<double>{1.0}), m({1}), v({1});
    for (std::uint64_t t = 1; t <= 50; ++t) {
        const Tensor g = x;  // d/dx of x^2 / 2
        adamw_step(x, g, m, v, cfg, t);
    }
    EXPECT_LT(std::abs(x[0]), 0.1);
}

TEST(AdamW, RejectsBadInput) {
    AdamWConfig cfg;
    Tensor p({2}), g({3}), m({2}), v({2});
    EXPECT_THROW(adamw_step(p, g, m, v, cfg, 1), DimensionError);
    Tensor g2({2}, std::vector<double>{NAN, 0.0});
    EXPECT_THROW(adamw_step(p, g2, m, v, cfg, 1), NumericError);
    EXPECT_THROW(adamw_step(p, Tensor({2}), m, v, cfg, 0), ConfigError);
}
