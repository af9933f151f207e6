#include <gtest/gtest.h>

#include <array>
#include <cmath>

#include "unida/checkpoint.hpp"
#include "unida/optim.hpp"
#include "oracles.hpp"

using namespace unida;

namespace {

NetDims tiny() { return NetDims{2, 3, 3, 2, 2, 2}; }

ModelParams constant_grad(const NetDims& d, double value) {
    ModelParams g = ModelParams::zeros(d);
    g.for_each_tensor([&](const char*, ParamGroup, bool, std::span<double> v, int) {
        for (double& x : v) x = value;
    });
    return g;
}

std::vector<double> group_values(const ModelParams& p, ParamGroup group) {
    std::vector<double> out;
    p.for_each_tensor([&](const char*, ParamGroup g, bool, std::span<const double> v, int) {
        if (g == group) out.insert(out.end(), v.begin(), v.end());
    });
    return out;
}

}  // namespace

TEST(AdamW, MatchesReferenceOnQuadratic) {
    const AdamWConfig cfg{0.9, 0.999, 1e-8, 0.01};
    oracle::AdamW ref{0.05, 0.9, 0.999, 1e-8, 0.01};
    std::array<double, 2> x{1.5, -2.0};
    oracle::Point y = x;
    std::vector<double> m(2, 0.0), v(2, 0.0);
    for (int t = 1; t <= 100; ++t) {
        adamw_update(x, oracle::quad_grad(x), m, v, 0.05, t, cfg);
        ref.step(y, oracle::quad_grad(y));
        ASSERT_NEAR(x[0], y[0], 1e-10) << "step " << t;
        ASSERT_NEAR(x[1], y[1], 1e-10) << "step " << t;
    }
}

TEST(AdamW, FirstStepMovesByLearningRate) {
    // Bias correction makes the first step lr * sign(g) (up to eps), after decay.
    std::array<double, 1> x{1.0};
    std::array<double, 1> g{3.0};
    std::vector<double> m(1, 0.0), v(1, 0.0);
    adamw_update(x, g, m, v, 0.1, 1, AdamWConfig{0.9, 0.999, 0.0, 0.5});
    EXPECT_NEAR(x[0], 1.0 * (1 - 0.1 * 0.5) - 0.1, 1e-15);
}

TEST(AdamW, ConvergesOnQuadratic) {
    std::array<double, 2> x{1.5, -2.0};
    std::vector<double> m(2, 0.0), v(2, 0.0);
    const AdamWConfig cfg{0.9, 0.999, 1e-8, 0.0};
    for (int t = 1; t <= 3000; ++t) {
        adamw_update(x, oracle::quad_grad(x), m, v, 0.01 * (1.0 - t / 3001.0), t, cfg);
    }
    EXPECT_LT(std::hypot(x[0], x[1]), 1e-2);
}

TEST(Momentum, MatchesReferenceOnQuadratic) {
    oracle::Momentum ref{0.05, 0.9};
    std::array<double, 2> x{1.5, -2.0};
    oracle::Point y = x;
    std::vector<double> buf(2, 0.0);
    for (int t = 0; t < 100; ++t) {
        momentum_update(x, oracle::quad_grad(x), buf, 0.05, 0.9);
        ref.step(y, oracle::quad_grad(y));
        ASSERT_NEAR(x[0], y[0], 1e-10) << "step " << t;
        ASSERT_NEAR(x[1], y[1], 1e-10) << "step " << t;
    }
    for (int t = 0; t < 200; ++t) momentum_update(x, oracle::quad_grad(x), buf, 0.05, 0.9);
    EXPECT_LT(std::hypot(x[0], x[1]), 1e-3);
}

TEST(ModelOptimizer, ZeroRateGroupIsBitIdentical) {
    for (OptimizerKind kind : {OptimizerKind::adaptive, OptimizerKind::momentum}) {
        ModelParams p = ModelParams::initialized(tiny(), 1);
        const ModelParams before = p;
        ModelOptimizer opt(kind, tiny());
        for (int i = 0; i < 5; ++i) opt.step(p, constant_grad(tiny(), 0.3), GroupRates{0.01, 0.0}, true);
        EXPECT_EQ(group_values(p, ParamGroup::extractor), group_values(before, ParamGroup::extractor));
        EXPECT_EQ(group_values(p, ParamGroup::closed_head), group_values(before, ParamGroup::closed_head));
        EXPECT_NE(group_values(p, ParamGroup::open_head), group_values(before, ParamGroup::open_head));
        EXPECT_NE(group_values(p, ParamGroup::discriminator), group_values(before, ParamGroup::discriminator));
    }
}

TEST(ModelOptimizer, GroupsReceiveTheirOwnRates) {
    ModelParams p = ModelParams::zeros(tiny());
    ModelOptimizer opt(OptimizerKind::momentum, tiny(), {}, 0.0);
    opt.step(p, constant_grad(tiny(), 1.0), GroupRates{0.2, 0.05}, true);
    for (double v : group_values(p, ParamGroup::open_head)) EXPECT_DOUBLE_EQ(v, -0.2);
    for (double v : group_values(p, ParamGroup::discriminator)) EXPECT_DOUBLE_EQ(v, -0.2);
    for (double v : group_values(p, ParamGroup::extractor)) EXPECT_DOUBLE_EQ(v, -0.05);
    for (double v : group_values(p, ParamGroup::closed_head)) EXPECT_DOUBLE_EQ(v, -0.05);
}

TEST(ModelOptimizer, FrozenDiscriminatorKeepsWeightsAndState) {
    ModelParams p = ModelParams::initialized(tiny(), 2);
    const ModelParams before = p;
    ModelOptimizer opt(OptimizerKind::adaptive, tiny());
    opt.step(p, constant_grad(tiny(), 1.0), GroupRates{0.1, 0.1}, false);
    EXPECT_EQ(group_values(p, ParamGroup::discriminator), group_values(before, ParamGroup::discriminator));
    EXPECT_NE(group_values(p, ParamGroup::extractor), group_values(before, ParamGroup::extractor));
    EXPECT_EQ(opt.steps(), 1);
}

TEST(ModelOptimizer, TensorUpdatesMatchScalarReference) {
    const AdamWConfig cfg{0.8, 0.99, 1e-8, 0.1};
    ModelParams p = ModelParams::initialized(tiny(), 3);
    const auto start = flatten_params(p);
    ModelOptimizer opt(OptimizerKind::adaptive, tiny(), cfg);
    const ModelParams g = constant_grad(tiny(), -0.7);
    for (int t = 0; t < 4; ++t) opt.step(p, g, GroupRates{0.01, 0.01}, true);
    const auto end = flatten_params(p);
    for (std::size_t i = 0; i < start.size(); ++i) {
        std::array<double, 1> x{start[i]};
        std::array<double, 1> gr{-0.7};
        std::vector<double> m(1, 0.0), v(1, 0.0);
        for (int t = 1; t <= 4; ++t) adamw_update(x, gr, m, v, 0.01, t, cfg);
        EXPECT_EQ(end[i], x[0]);
    }
}

TEST(OptimizerKind, ParsesNames) {
    EXPECT_EQ(optimizer_kind_from("adaptive"), OptimizerKind::adaptive);
    EXPECT_EQ(optimizer_kind_from("momentum"), OptimizerKind::momentum);
    EXPECT_EQ(to_string(OptimizerKind::momentum), "momentum");
    EXPECT_THROW(optimizer_kind_from("sgd"), std::invalid_argument);
}
