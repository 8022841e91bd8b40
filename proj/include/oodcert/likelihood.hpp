// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "oodcert/diffusion.hpp"
#include "oodcert/record.hpp"

namespace oodcert {

enum class DivergenceMode { exact_dense, hutchinson };

inline DivergenceMode parse_divergence(const std::string& s)
{
    if (s == "exact-dense" || s == "exact") return DivergenceMode::exact_dense;
    if (s == "hutchinson") return DivergenceMode::hutchinson;
    throw ConfigError("unknown divergence mode '" + s + "' (expected exact-dense or hutchinson)");
}

/// Largest field the exact divergence accepts.
inline constexpr std::size_t max_exact_dim = 64;

struct SolverConfig {
    ode::Method method = ode::Method::rk38;
    std::size_t steps = 64;
    DivergenceMode divergence = DivergenceMode::hutchinson;
    std::size_t probes = 32;
    std::string probe_distribution = "rademacher";
    double fd_epsilon = 1e-3;
    bool keep_trajectory = true;

    void validate() const
    {
        if (steps < 8) throw ConfigError("solver: steps must be >= 8");
        if (probes < 1) throw ConfigError("solver: probes must be >= 1");
        if (!(fd_epsilon > 0)) throw ConfigError("solver: fd epsilon must be positive");
        if (probe_distribution != "rademacher") throw ConfigError("solver: only rademacher probes are supported");
    }
};

inline void to_json(json& j, const SolverConfig& c)
{
    j = json{{"method", ode::method_name(c.method)},
             {"steps", c.steps},
             {"divergence", c.divergence == DivergenceMode::hutchinson ? "hutchinson" : "exact-dense"},
             {"probes", c.probes},
             {"probe_distribution", c.probe_distribution},
             {"fd_epsilon", c.fd_epsilon}};
}

/// One node of the probability-flow trajectory with the rescaled score
/// eps = -sigma(t) s(z; sigma(t)).
struct TrajectoryPoint {
    double t = 0;
    Tensor<double> z;
    Tensor<double> eps;
};

using Trajectory = std::vector<TrajectoryPoint>;

/// log_likelihood = log_prior - divergence_integral, in nats.
struct LikelihoodResult {
    double log_likelihood = 0;
    double log_prior = 0;
    double divergence_integral = 0;
    Tensor<double> z_final;
    Trajectory trajectory;
};

/// log N(z; 0, sigma_max^2 I) over all elements of z.
inline double log_prior(const Tensor<double>& z, double sigma_max)
{
    auto d = static_cast<double>(z.size());
    double var = sigma_max * sigma_max;
    return -0.5 * d * std::log(2 * std::numbers::pi * var) - 0.5 * squared_norm(z) / var;
}

/// Score on a batch [B, ...field] at a fixed noise level.
using ScoreFn = std::function<Tensor<double>(const Tensor<double>&)>;

struct ScoreAndDivergence {
    Tensor<double> score;  // s(z), field shape
    double divergence = 0;
};

/// Rademacher probes for one trajectory.
inline std::vector<Tensor<double>> rademacher_probes(const Shape& field, std::size_t count, Rng& rng)
{
    std::vector<Tensor<double>> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        Tensor<double> v(field);
        for (double& x : v.data()) x = rng.rademacher();
        out.push_back(std::move(v));
    }
    return out;
}

/// s(z) and the divergence of s at z in one batched score evaluation.
///
/// exact-dense: sum over coordinate axes of (s_i(z + h e_i) - s_i(z - h e_i)) / 2h.
/// hutchinson:  mean over probes v of v . (s(z + h v) - s(z - h v)) / 2h.
/// h = fd_epsilon (1 + max|z|) rounded down to a power of two. The stencil is
/// centred on z snapped to multiples of h 2^-40, which makes every z +- h v
/// exact, so s(z) = z gives d exactly.
inline ScoreAndDivergence score_and_divergence(const ScoreFn& s, const Tensor<double>& z,
                                               std::span<const Tensor<double>> probes, DivergenceMode mode,
                                               double fd_epsilon)
{
    std::size_t d = z.size();
    if (mode == DivergenceMode::exact_dense && d > max_exact_dim) {
        throw ConfigError("dimension " + std::to_string(d) + " too large for exact divergence (max "
                          + std::to_string(max_exact_dim) + ")");
    }
    if (mode == DivergenceMode::hutchinson && probes.empty()) throw ConfigError("hutchinson divergence needs probes");
    std::size_t dirs = mode == DivergenceMode::exact_dense ? d : probes.size();
    double h = std::exp2(std::floor(std::log2(fd_epsilon * (1.0 + max_abs(z)))));

    double q = std::ldexp(h, -40);
    std::vector<double> centre(d);
    for (std::size_t i = 0; i < d; ++i) centre[i] = std::nearbyint(z[i] / q) * q;

    Shape bs = z.shape();
    bs.insert(bs.begin(), 1 + 2 * dirs);
    Tensor<double> batch(bs);
    std::copy(z.data().begin(), z.data().end(), batch.ptr());
    for (std::size_t k = 0; k < dirs; ++k) {
        double* plus = batch.ptr() + (1 + 2 * k) * d;
        double* minus = plus + d;
        std::copy(centre.begin(), centre.end(), plus);
        std::copy(centre.begin(), centre.end(), minus);
        if (mode == DivergenceMode::exact_dense) {
            plus[k] += h;
            minus[k] -= h;
        } else {
            for (std::size_t i = 0; i < d; ++i) {
                plus[i] += h * probes[k][i];
                minus[i] -= h * probes[k][i];
            }
        }
    }
    Tensor<double> out = s(batch);
    if (out.shape() != bs) throw ShapeError("score function changed the batch shape");

    ScoreAndDivergence r;
    r.score = Tensor<double>(z.shape(), std::vector<double>(out.ptr(), out.ptr() + d));
    double acc = 0;
    for (std::size_t k = 0; k < dirs; ++k) {
        const double* sp = out.ptr() + (1 + 2 * k) * d;
        const double* sm = sp + d;
        if (mode == DivergenceMode::exact_dense) {
            acc += (sp[k] - sm[k]) / (2 * h);
        } else {
            double dp = 0;
            for (std::size_t i = 0; i < d; ++i) dp += probes[k][i] * (sp[i] - sm[i]);
            acc += dp / (2 * h);
        }
    }
    r.divergence = mode == DivergenceMode::exact_dense ? acc : acc / static_cast<double>(dirs);
    return r;
}

inline double divergence(const ScoreFn& s, const Tensor<double>& z, std::span<const Tensor<double>> probes,
                         DivergenceMode mode, double fd_epsilon = 1e-3)
{
    return score_and_divergence(s, z, probes, mode, fd_epsilon).divergence;
}

//---------------------------------------------------------------------------//
/*!
 * Log-likelihood of a normalized joint field under the denoiser's
 * probability-flow ODE.
 *
 * Integrates the augmented state (z, A) from t = 0 to t = 1 with
 *   dz/dt = -1/2 g^2(t) s(z; sigma(t)),   dA/dt = 1/2 g^2(t) div s(z; sigma(t)),
 * g^2 = d sigma^2 / dt, and returns log p_prior(z(1)) - A(1). Probes are
 * drawn once per call from \p rng and reused at every stage.
 */
inline LikelihoodResult log_likelihood(const Denoiser& den, const Tensor<double>& z, const SolverConfig& cfg, Rng rng)
{
    cfg.validate();
    NoiseSchedule sched = den.schedule();
    if (z.shape() != den.field_shape()) {
        throw ShapeError("likelihood: field " + shape_str(z.shape()) + " does not match denoiser "
                         + shape_str(den.field_shape()));
    }
    Shape field = z.shape();
    std::size_t d = z.size();
    std::vector<Tensor<double>> probes;
    if (cfg.divergence == DivergenceMode::hutchinson) probes = rademacher_probes(field, cfg.probes, rng);

    Tensor<double> last_score;
    auto rhs = [&](double t, const ode::State& y) {
        t = std::clamp(t, 0.0, 1.0);
        double sigma = sched.sigma(t);
        ScoreFn sfn = [&](const Tensor<double>& b) { return score(den, b, sigma); };
        Tensor<double> zt(field, std::vector<double>(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(d)));
        auto sd = score_and_divergence(sfn, zt, probes, cfg.divergence, cfg.fd_epsilon);
        double half_g2 = 0.5 * sched.dsigma2_dt(t);
        ode::State out(d + 1);
        for (std::size_t i = 0; i < d; ++i) out[i] = -half_g2 * sd.score[i];
        out[d] = half_g2 * sd.divergence;
        last_score = std::move(sd.score);
        return out;
    };

    LikelihoodResult res;
    auto observe = [&](std::size_t, double t, const ode::State& y, const ode::State& slope) {
        if (!cfg.keep_trajectory) return;
        TrajectoryPoint pt;
        pt.t = t;
        pt.z = Tensor<double>(field, std::vector<double>(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(d)));
        double sigma = sched.sigma(t);
        if (slope.empty()) {
            Shape bs = field;
            bs.insert(bs.begin(), 1);
            last_score = score(den, pt.z.reshaped(bs), sigma).reshaped(field);
        }
        pt.eps = last_score;
        for (double& v : pt.eps.data()) v *= -sigma;
        res.trajectory.push_back(std::move(pt));
    };

    ode::State y(z.data().begin(), z.data().end());
    y.push_back(0.0);
    try {
        y = ode::integrate(cfg.method, rhs, std::move(y), 0.0, 1.0, cfg.steps, observe);
    } catch (const NumericError& e) {
        throw NumericError(std::string("likelihood integration diverged: ") + e.what());
    }
    res.z_final = Tensor<double>(field, std::vector<double>(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(d)));
    res.divergence_integral = y[d];
    res.log_prior = log_prior(res.z_final, sched.sigma_max);
    res.log_likelihood = res.log_prior - res.divergence_integral;
    if (!std::isfinite(res.log_likelihood)) {
        throw NumericError("likelihood integration diverged: non-finite log-likelihood at t=1");
    }
    return res;
}

//---------------------------------------------------------------------------//
// Certificates built on the joint likelihood

/// Normalized joint field (x, y_pred) under the regressor's normalization.
inline Tensor<double> joint_field(const Model& regressor, const Tensor<double>& x, const Tensor<double>& y_pred)
{
    const Normalization& n = regressor.normalization();
    return concat0(n.norm_x(x), n.norm_y(y_pred));
}

/// Mean absolute error and relative L1 error of a prediction.
inline std::pair<double, double> prediction_error(const Tensor<double>& pred, const Tensor<double>& truth)
{
    if (pred.shape() != truth.shape()) throw ShapeError("prediction/ground-truth shape mismatch");
    double abs_err = 0, ref = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        abs_err += std::abs(pred[i] - truth[i]);
        ref += std::abs(truth[i]);
    }
    double rel = ref > 0 ? abs_err / ref : std::numeric_limits<double>::infinity();
    return {abs_err / static_cast<double>(pred.size()), rel};
}

/// Per-sample probe stream.
inline Rng sample_stream(std::uint64_t seed, std::size_t sample_id)
{
    return Rng(seed).split(sample_id);
}

/// Joint-likelihood certificate of one input: higher means more in-distribution.
inline CertificateRecord certify_jlbc(const Model& regressor, const Denoiser& den, const Tensor<double>& x,
                                      const SolverConfig& cfg, std::uint64_t seed, std::size_t sample_id = 0,
                                      const std::optional<Tensor<double>>& truth = std::nullopt,
                                      const std::string& dataset = "")
{
    Tensor<double> y_pred = regressor.predict(x);
    SolverConfig c = cfg;
    c.keep_trajectory = false;
    auto res = log_likelihood(den, joint_field(regressor, x, y_pred), c, sample_stream(seed, sample_id));
    CertificateRecord r;
    r.sample_id = sample_id;
    r.dataset = dataset;
    r.method = "JLBC";
    r.certificate = res.log_likelihood;
    if (truth) std::tie(r.error, r.relative_error) = prediction_error(y_pred, *truth);
    return r;
}

/// Equal-weight combination of the direct and autoregressive joint likelihoods.
inline double mixed_certificate(double ll_direct, double ll_autoregressive)
{
    return 0.5 * ll_direct + 0.5 * ll_autoregressive;
}

/// Mixed certificate for a lead-time conditioned regressor: the direct
/// prediction at lead time T and an ar_steps rollout with lead time T / ar_steps.
/// Both likelihoods use the same probe stream.
inline CertificateRecord certify_mixed_ar(const Model& regressor, const Denoiser& den, const Tensor<double>& x,
                                          double lead_time, std::size_t ar_steps, const SolverConfig& cfg,
                                          std::uint64_t seed, std::size_t sample_id = 0,
                                          const std::optional<Tensor<double>>& truth = std::nullopt,
                                          const std::string& dataset = "")
{
    if (!regressor.spec().conditioned) throw ConfigError("mixed AR certificate needs a lead-time conditioned regressor");
    if (ar_steps < 1) throw ConfigError("ar_steps must be >= 1");
    Tensor<double> y_dir = regressor.predict(x, lead_time);
    Tensor<double> y_ar = y_dir;
    if (ar_steps > 1) {
        y_ar = x;
        for (std::size_t k = 0; k < ar_steps; ++k) y_ar = regressor.predict(y_ar, lead_time / static_cast<double>(ar_steps));
    }
    SolverConfig c = cfg;
    c.keep_trajectory = false;
    double ll_dir = log_likelihood(den, joint_field(regressor, x, y_dir), c, sample_stream(seed, sample_id)).log_likelihood;
    double ll_ar = ar_steps > 1
                       ? log_likelihood(den, joint_field(regressor, x, y_ar), c, sample_stream(seed, sample_id)).log_likelihood
                       : ll_dir;
    CertificateRecord r;
    r.sample_id = sample_id;
    r.dataset = dataset;
    r.method = "JLBC-MIXED-AR";
    r.certificate = mixed_certificate(ll_dir, ll_ar);
    if (truth) std::tie(r.error, r.relative_error) = prediction_error(y_dir, *truth);
    return r;
}

}  // namespace oodcert
