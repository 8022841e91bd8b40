// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "oodcert/likelihood.hpp"

using namespace oodcert;

namespace {

const double log2pi = std::log(2 * std::numbers::pi);

OracleDenoiser oracle(std::size_t d)
{
    return OracleDenoiser(GaussianOracle::standard(d), {});
}

SolverConfig exact(std::size_t steps = 128)
{
    SolverConfig c;
    c.steps = steps;
    c.divergence = DivergenceMode::exact_dense;
    return c;
}

ScoreFn linear_score(const std::vector<double>& a, std::size_t d)
{
    return [a, d](const Tensor<double>& b) {
        Tensor<double> out(b.shape());
        for (std::size_t r = 0; r < b.size() / d; ++r)
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) out[r * d + i] += a[i * d + j] * b[r * d + j];
        return out;
    };
}

// Identity-like scalar regressor y = w x.
Model scalar_regressor(double w)
{
    ModelSpec s;
    s.input_shape = {1};
    s.output_shape = {1};
    auto p = init_params(s, 0);
    p.at("mlp.out.w")[0] = w;
    return Model(s, p);
}

}  // namespace

TEST(LogPrior, ClosedForms)
{
    EXPECT_NEAR(log_prior(Tensor<double>({2}), 1.0), -log2pi, 1e-14);
    EXPECT_NEAR(log_prior(Tensor<double>({1}), 20.0), -0.5 * std::log(2 * std::numbers::pi * 400), 1e-14);
    Tensor<double> z({3}, {0.5, -1, 2});
    double s = 7;
    Tensor<double> zs = z;
    for (double& v : zs.data()) v *= s;
    double q = squared_norm(z);
    EXPECT_NEAR(log_prior(zs, s) - log_prior(zs, 1.0), -3 * std::log(s) - q * s * s * (1 / (s * s) - 1) / 2, 1e-10);
}

TEST(Divergence, IdentityAndZeroScore)
{
    ScoreFn id = [](const Tensor<double>& b) { return b; };
    ScoreFn zero = [](const Tensor<double>& b) { return Tensor<double>(b.shape()); };
    Tensor<double> z({5}, {0.1, -2, 3, 0.4, 9});
    Rng rng(1);
    auto probes = rademacher_probes({5}, 7, rng);
    EXPECT_DOUBLE_EQ(divergence(id, z, probes, DivergenceMode::hutchinson), 5.0);
    EXPECT_NEAR(divergence(id, z, {}, DivergenceMode::exact_dense), 5.0, 1e-12);
    EXPECT_EQ(divergence(zero, z, probes, DivergenceMode::hutchinson), 0.0);
    EXPECT_EQ(divergence(zero, z, {}, DivergenceMode::exact_dense), 0.0);
}

TEST(Divergence, LinearScoreTraceOracle)
{
    const std::size_t d = 8;
    Rng rng(42);
    std::vector<double> a(d * d);
    for (double& v : a) v = rng.normal();
    double trace = 0;
    for (std::size_t i = 0; i < d; ++i) trace += a[i * d + i];
    auto s = linear_score(a, d);
    Tensor<double> z({d});
    for (double& v : z.data()) v = rng.normal();
    EXPECT_NEAR(divergence(s, z, {}, DivergenceMode::exact_dense), trace, 1e-6);

    const std::size_t n = 10000;
    auto probes = rademacher_probes({d}, n, rng);
    double m = 0, q = 0;
    for (const auto& v : probes) {
        double e = divergence(s, z, std::span<const Tensor<double>>(&v, 1), DivergenceMode::hutchinson);
        m += e;
        q += e * e;
    }
    m /= n;
    double se = std::sqrt((q / n - m * m) / n);
    EXPECT_LT(std::abs(m - trace), 3 * se);
}

TEST(Divergence, ExactModeRejectsLargeFields)
{
    ScoreFn id = [](const Tensor<double>& b) { return b; };
    EXPECT_THROW(divergence(id, Tensor<double>({65}), {}, DivergenceMode::exact_dense), ConfigError);
    EXPECT_NO_THROW(divergence(id, Tensor<double>({64}), {}, DivergenceMode::exact_dense));
    EXPECT_THROW(divergence(id, Tensor<double>({4}), {}, DivergenceMode::hutchinson), ConfigError);
}

TEST(LogLikelihood, GaussianOracleExact)
{
    auto d = oracle(2);
    auto r0 = log_likelihood(d, Tensor<double>({2}, {0, 0}), exact(), Rng(0));
    auto r1 = log_likelihood(d, Tensor<double>({2}, {1, 1}), exact(), Rng(0));
    EXPECT_NEAR(r0.log_likelihood, -log2pi, 5e-3);
    EXPECT_NEAR(r1.log_likelihood, -log2pi - 1, 5e-3);
    EXPECT_EQ(r0.log_likelihood, r0.log_prior - r0.divergence_integral);
}

TEST(LogLikelihood, StepDoublingConverges)
{
    auto d = oracle(2);
    Tensor<double> z({2}, {0.3, -1.2});
    double a = log_likelihood(d, z, exact(64), Rng(0)).log_likelihood;
    double b = log_likelihood(d, z, exact(128), Rng(0)).log_likelihood;
    EXPECT_LT(std::abs(a - b), 1e-3);
}

TEST(LogLikelihood, HutchinsonCloseToExact)
{
    auto d = oracle(2);
    Tensor<double> z({2}, {0.5, 0.8});
    SolverConfig h = exact();
    h.divergence = DivergenceMode::hutchinson;
    h.probes = 32;
    double e = log_likelihood(d, z, exact(), Rng(0)).log_likelihood;
    double m = log_likelihood(d, z, h, Rng(3)).log_likelihood;
    EXPECT_LT(std::abs(e - m), 0.05);
}

TEST(LogLikelihood, TrajectoryNodesAndRescaledScore)
{
    auto d = oracle(2);
    auto r = log_likelihood(d, Tensor<double>({2}, {1, -1}), exact(16), Rng(0));
    ASSERT_EQ(r.trajectory.size(), 17u);
    EXPECT_EQ(r.trajectory.front().t, 0.0);
    EXPECT_EQ(r.trajectory.back().t, 1.0);
    NoiseSchedule s;
    for (const auto& p : r.trajectory) {
        double sig = s.sigma(p.t);
        for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(p.eps[i], sig * p.z[i] / (1 + sig * sig), 1e-12);
    }
    EXPECT_EQ(r.trajectory.back().z, r.z_final);
}

TEST(LogLikelihood, DeterministicAndShapeChecked)
{
    auto d = oracle(4);
    SolverConfig c;
    c.steps = 16;
    c.probes = 4;
    Tensor<double> z({4}, {0.1, 0.2, 0.3, 0.4});
    EXPECT_EQ(log_likelihood(d, z, c, Rng(5)).log_likelihood, log_likelihood(d, z, c, Rng(5)).log_likelihood);
    EXPECT_THROW(log_likelihood(d, Tensor<double>({3}), c, Rng(5)), ShapeError);
    c.steps = 4;
    EXPECT_THROW(log_likelihood(d, z, c, Rng(5)), ConfigError);
}

TEST(LogLikelihood, DivergenceReportsFailure)
{
    FunctionDenoiser bad([](const Tensor<double>& z, double) { return Tensor<double>(z.shape(), 1e300); }, {2}, {});
    try {
        log_likelihood(bad, Tensor<double>({2}), exact(8), Rng(0));
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("likelihood integration diverged"), std::string::npos) << e.what();
    }
}

TEST(CertifyJlbc, RanksConsistentPredictionHigher)
{
    auto d = oracle(2);
    SolverConfig c = exact(32);
    Tensor<double> x({1}, {0.2});
    auto good = certify_jlbc(scalar_regressor(1.0), d, x, c, 1, 0, Tensor<double>({1}, {0.2}));
    auto off = certify_jlbc(scalar_regressor(10.0), d, x, c, 1, 0, Tensor<double>({1}, {0.2}));
    EXPECT_EQ(good.method, "JLBC");
    EXPECT_GT(good.certificate, off.certificate);
    EXPECT_NEAR(*good.error, 0.0, 1e-15);
    EXPECT_NEAR(*off.error, 1.8, 1e-12);
    auto again = certify_jlbc(scalar_regressor(1.0), d, x, c, 1, 0);
    EXPECT_EQ(again.certificate, good.certificate);
    EXPECT_FALSE(again.error.has_value());
}

TEST(CertifyMixedAr, SingleStepEqualsJlbcOfDirect)
{
    auto d = oracle(2);
    ModelSpec s;
    s.input_shape = {1};
    s.output_shape = {1};
    s.conditioned = true;
    s.widths = {4};
    Model reg(s, init_params(s, 3));
    SolverConfig c = exact(16);
    Tensor<double> x({1}, {0.4});
    auto mixed = certify_mixed_ar(reg, d, x, 1.0, 1, c, 9, 2);
    auto direct = log_likelihood(d, joint_field(reg, x, reg.predict(x, 1.0)), c, sample_stream(9, 2));
    EXPECT_EQ(mixed.certificate, direct.log_likelihood);
    EXPECT_EQ(mixed.method, "JLBC-MIXED-AR");
    EXPECT_EQ(mixed_certificate(2, 4), 3.0);
    EXPECT_THROW(certify_mixed_ar(scalar_regressor(1), d, x, 1.0, 2, c, 0), ConfigError);
}

TEST(PredictionError, MaeAndRelative)
{
    auto [mae, rel] = prediction_error(Tensor<double>({2}, {1, 3}), Tensor<double>({2}, {2, 1}));
    EXPECT_DOUBLE_EQ(mae, 1.5);
    EXPECT_DOUBLE_EQ(rel, 1.0);
}
