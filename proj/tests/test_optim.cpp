// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "oodcert/optim.hpp"

using namespace oodcert;

TEST(Adam, TwoStepsMatchHandComputation)
{
    ParamSet<double> p{{"w", Tensor<double>({2}, {1.0, -1.0})}};
    OptState<double> st;
    st.hyper.lr = 0.1;
    std::vector<std::vector<double>> gs{{0.5, -2.0}, {0.1, 3.0}};
    double m[2] = {0, 0}, v[2] = {0, 0}, w[2] = {1.0, -1.0};
    for (std::size_t k = 0; k < gs.size(); ++k) {
        adam_step(p, ParamSet<double>{{"w", Tensor<double>({2}, gs[k])}}, st);
        for (int i = 0; i < 2; ++i) {
            m[i] = 0.9 * m[i] + 0.1 * gs[k][i];
            v[i] = 0.999 * v[i] + 0.001 * gs[k][i] * gs[k][i];
            double mh = m[i] / (1 - std::pow(0.9, k + 1)), vh = v[i] / (1 - std::pow(0.999, k + 1));
            w[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
        }
    }
    EXPECT_NEAR(p.at("w")[0], w[0], 1e-14);
    EXPECT_NEAR(p.at("w")[1], w[1], 1e-14);
    EXPECT_EQ(st.step, 2u);
}

TEST(Adam, FirstStepIsLrTimesSign)
{
    ParamSet<double> p{{"w", Tensor<double>({3}, {0, 0, 0})}};
    OptState<double> st;
    adam_step(p, ParamSet<double>{{"w", Tensor<double>({3}, {4.0, -1e-3, 2.0})}}, st, 0.01);
    EXPECT_NEAR(p.at("w")[0], -0.01, 1e-9);
    EXPECT_NEAR(p.at("w")[1], 0.01, 1e-7);
    EXPECT_NEAR(p.at("w")[2], -0.01, 1e-9);
}

TEST(Adam, DecoupledWeightDecayShrinksWithZeroGradient)
{
    ParamSet<double> p{{"w", Tensor<double>({1}, {2.0})}};
    OptState<double> st;
    st.hyper.weight_decay = 0.5;
    adam_step(p, ParamSet<double>{{"w", Tensor<double>({1}, {0.0})}}, st, 0.1);
    EXPECT_DOUBLE_EQ(p.at("w")[0], 2.0 - 0.1 * 0.5 * 2.0);
}

TEST(Adam, MinimizesQuadratic)
{
    ParamSet<double> p{{"w", Tensor<double>({2}, {3.0, -4.0})}};
    OptState<double> st;
    st.hyper.lr = 0.05;
    for (int k = 0; k < 2000; ++k) {
        ParamSet<double> g{{"w", Tensor<double>({2}, {2 * (p.at("w")[0] - 1), 2 * (p.at("w")[1] + 2)})}};
        adam_step(p, g, st);
    }
    EXPECT_NEAR(p.at("w")[0], 1.0, 1e-3);
    EXPECT_NEAR(p.at("w")[1], -2.0, 1e-3);
}

TEST(Adam, RejectsMismatchedGradients)
{
    ParamSet<double> p{{"w", Tensor<double>({2})}};
    OptState<double> st;
    EXPECT_THROW(adam_step(p, ParamSet<double>{{"w", Tensor<double>({3})}}, st), ShapeError);
    EXPECT_THROW(adam_step(p, ParamSet<double>{{"v", Tensor<double>({2})}}, st), ShapeError);
}

TEST(Ema, EndpointsAndBlend)
{
    ParamSet<double> s{{"w", Tensor<double>({1}, {1.0})}}, p{{"w", Tensor<double>({1}, {3.0})}};
    EXPECT_EQ(ema_update(s, p, 0.0).at("w")[0], 3.0);
    EXPECT_EQ(ema_update(s, p, 1.0).at("w")[0], 1.0);
    EXPECT_DOUBLE_EQ(ema_update(s, p, 0.75).at("w")[0], 1.5);
    EXPECT_THROW(ema_update(s, p, 1.5), ConfigError);
}

TEST(Schedule, CosineEndpointsAndMidpoint)
{
    EXPECT_DOUBLE_EQ(scheduled_lr("cosine", 1e-3, 0, 100), 1e-3);
    EXPECT_NEAR(scheduled_lr("cosine", 1e-3, 50, 100), 5e-4, 1e-18);
    EXPECT_NEAR(scheduled_lr("cosine", 1e-3, 100, 100), 0.0, 1e-18);
    EXPECT_DOUBLE_EQ(scheduled_lr("constant", 2e-3, 77, 100), 2e-3);
    EXPECT_THROW(scheduled_lr("step", 1e-3, 0, 1), ConfigError);
}
