// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "oodcert/datagen.hpp"
#include "oodcert/ode.hpp"
#include "oodcert/train.hpp"

namespace oodcert {

//---------------------------------------------------------------------------//
/*!
 * Exponential variance-exploding schedule on t in [0, 1]:
 *   sigma(t) = sigma_min (sigma_max / sigma_min)^t.
 * Data sits at t = 0, the Gaussian prior at t = 1.
 */
struct NoiseSchedule {
    double sigma_min = 0.01;
    double sigma_max = 20.0;

    void validate() const
    {
        if (!(sigma_min > 0) || !(sigma_max > sigma_min)) {
            throw ConfigError("noise schedule needs 0 < sigma_min < sigma_max");
        }
    }

    double log_ratio() const { return std::log(sigma_max / sigma_min); }

    double sigma(double t) const
    {
        if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("sigma(t): t must lie in [0, 1]");
        if (t == 0.0) return sigma_min;
        if (t == 1.0) return sigma_max;
        return sigma_min * std::exp(t * log_ratio());
    }

    /// d sigma^2 / dt = 2 sigma^2 log(sigma_max / sigma_min).
    double dsigma2_dt(double t) const
    {
        double s = sigma(t);
        return 2.0 * s * s * log_ratio();
    }
};

inline void to_json(json& j, const NoiseSchedule& s)
{
    j = json{{"sigma_min", s.sigma_min}, {"sigma_max", s.sigma_max}, {"schedule", "exponential"}};
}

inline void from_json(const json& j, NoiseSchedule& s)
{
    j.at("sigma_min").get_to(s.sigma_min);
    j.at("sigma_max").get_to(s.sigma_max);
}

/// Denoiser preconditioning for data of standard deviation sigma_data.
struct Preconditioning {
    double sigma_data = 1.0;

    double c_skip(double s) const { return sigma_data * sigma_data / (s * s + sigma_data * sigma_data); }
    double c_out(double s) const { return s * sigma_data / std::sqrt(s * s + sigma_data * sigma_data); }
    double c_in(double s) const { return 1.0 / std::sqrt(s * s + sigma_data * sigma_data); }
    double c_noise(double s) const { return std::log(s) / 4.0; }
    /// Loss weight (sigma^2 + sigma_data^2) / (sigma sigma_data)^2.
    double weight(double s) const
    {
        return (s * s + sigma_data * sigma_data) / (s * s * sigma_data * sigma_data);
    }
};

//---------------------------------------------------------------------------//
/*!
 * D(z; sigma) evaluated on a batch z[B, ...field] at one noise level.
 */
class Denoiser {
  public:
    virtual ~Denoiser() = default;
    virtual Tensor<double> denoise(const Tensor<double>& z, double sigma) const = 0;
    virtual Shape field_shape() const = 0;
    virtual NoiseSchedule schedule() const = 0;
};

/// Preconditioned network: D = c_skip z + c_out F(c_in z, c_noise).
class NetworkDenoiser final : public Denoiser {
  public:
    explicit NetworkDenoiser(const Checkpoint& ck)
        : backbone_(ck), pre_{ck.meta.value("sigma_data", 1.0)},
          sched_(ck.meta.at("schedule").get<NoiseSchedule>())
    {
        if (!backbone_.spec().conditioned) throw ConfigError("denoiser backbone must be noise-conditioned");
    }

    Tensor<double> denoise(const Tensor<double>& z, double sigma) const override
    {
        std::size_t batch = z.dim(0);
        // Chunk large batches to bound activation memory.
        constexpr std::size_t chunk = 256;
        if (batch > chunk) {
            Tensor<double> out(z.shape());
            for (std::size_t lo = 0; lo < batch; lo += chunk) {
                std::size_t hi = std::min(batch, lo + chunk);
                auto part = denoise(z.rows(lo, hi), sigma);
                std::copy(part.data().begin(), part.data().end(), out.ptr() + lo * (z.size() / batch));
            }
            return out;
        }
        Tensor<double> in = z;
        double cin = pre_.c_in(sigma);
        for (double& v : in.data()) v *= cin;
        Tensor<double> cond({batch}, std::vector<double>(batch, pre_.c_noise(sigma)));
        Tensor<double> f = backbone_.apply(in, cond);
        double cs = pre_.c_skip(sigma), co = pre_.c_out(sigma);
        for (std::size_t i = 0; i < f.size(); ++i) f[i] = cs * z[i] + co * f[i];
        return f;
    }

    Shape field_shape() const override { return backbone_.spec().input_shape; }
    NoiseSchedule schedule() const override { return sched_; }

  private:
    Model backbone_;
    Preconditioning pre_;
    NoiseSchedule sched_;
};

/// Closed-form optimal denoiser of a Gaussian oracle over flat fields [d].
class OracleDenoiser final : public Denoiser {
  public:
    OracleDenoiser(GaussianOracle oracle, NoiseSchedule sched) : oracle_(std::move(oracle)), sched_(sched) {}

    Tensor<double> denoise(const Tensor<double>& z, double sigma) const override
    {
        std::size_t d = oracle_.dim();
        if (z.size() % d) throw ShapeError("oracle denoiser: field size mismatch");
        Tensor<double> out(z.shape());
        for (std::size_t b = 0; b < z.size() / d; ++b) {
            auto r = oracle_.denoise(std::span<const double>(z.ptr() + b * d, d), sigma);
            std::copy(r.begin(), r.end(), out.ptr() + b * d);
        }
        return out;
    }

    Shape field_shape() const override { return {oracle_.dim()}; }
    NoiseSchedule schedule() const override { return sched_; }
    const GaussianOracle& oracle() const { return oracle_; }

  private:
    GaussianOracle oracle_;
    NoiseSchedule sched_;
};

/// Any callable D(z_batch, sigma).
class FunctionDenoiser final : public Denoiser {
  public:
    using Fn = std::function<Tensor<double>(const Tensor<double>&, double)>;
    FunctionDenoiser(Fn fn, Shape field, NoiseSchedule sched) : fn_(std::move(fn)), field_(std::move(field)), sched_(sched) {}

    Tensor<double> denoise(const Tensor<double>& z, double sigma) const override { return fn_(z, sigma); }
    Shape field_shape() const override { return field_; }
    NoiseSchedule schedule() const override { return sched_; }

  private:
    Fn fn_;
    Shape field_;
    NoiseSchedule sched_;
};

/// Tweedie score (D(z; sigma) - z) / sigma^2 for a batch.
inline Tensor<double> score(const Denoiser& d, const Tensor<double>& z, double sigma)
{
    Tensor<double> den = d.denoise(z, sigma);
    if (!den.all_finite()) throw NumericError("denoiser produced non-finite output");
    if (den.shape() != z.shape()) throw ShapeError("denoiser changed the field shape");
    double inv = 1.0 / (sigma * sigma);
    for (std::size_t i = 0; i < den.size(); ++i) den[i] = (den[i] - z[i]) * inv;
    return den;
}

//---------------------------------------------------------------------------//
// Training

/// Denoising score matching loss
///   mean_i lambda(sigma_i) || D(z_i + sigma_i eps_i; sigma_i) - z_i ||^2
/// for a differentiable denoiser den(noisy, sigmas) -> Var.
template<class T, class DenoiseFn>
ad::Var<T> dsm_loss(DenoiseFn&& den, const Tensor<T>& batch, std::span<const double> sigmas, const Tensor<T>& noise,
                    const Preconditioning& pre = {})
{
    if (batch.shape() != noise.shape() || batch.dim(0) != sigmas.size()) throw ShapeError("dsm_loss: shape mismatch");
    std::size_t b = sigmas.size(), per = batch.size() / b;
    Tensor<T> noisy = batch;
    Tensor<T> weight(batch.shape());
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < per; ++j) {
            noisy[i * per + j] += static_cast<T>(sigmas[i]) * noise[i * per + j];
            weight[i * per + j] = static_cast<T>(pre.weight(sigmas[i]));
        }
    ad::Var<T> d = den(noisy, sigmas);
    ad::Var<T> err = ad::square(ad::sub(d, ad::constant(batch)));
    return ad::scale(ad::sum(ad::mul(ad::constant(std::move(weight)), err)), T{1} / static_cast<T>(b));
}

/// Differentiable preconditioned network denoiser on a batch.
template<class T>
ad::Var<T> precond_denoise(const ModelSpec& spec, const ad::VarMap<T>& p, const Tensor<T>& noisy,
                           std::span<const double> sigmas, const Preconditioning& pre)
{
    std::size_t b = sigmas.size(), per = noisy.size() / b;
    Tensor<T> in = noisy, skip = noisy, out_scale(noisy.shape());
    Tensor<T> cond({b});
    for (std::size_t i = 0; i < b; ++i) {
        double s = sigmas[i];
        cond[i] = static_cast<T>(pre.c_noise(s));
        for (std::size_t j = 0; j < per; ++j) {
            in[i * per + j] *= static_cast<T>(pre.c_in(s));
            skip[i * per + j] *= static_cast<T>(pre.c_skip(s));
            out_scale[i * per + j] = static_cast<T>(pre.c_out(s));
        }
    }
    auto f = forward<T>(spec, p, ad::constant(std::move(in)), cond);
    return ad::add(ad::constant(std::move(skip)), ad::mul(ad::constant(std::move(out_scale)), f));
}

/// Train a denoiser on the normalized joint fields of \p data. Noise levels
/// are drawn log-uniform on [sigma_min, sigma_max].
inline Checkpoint train_denoiser(ModelSpec spec, const Tensor<double>& joint, const TrainConfig& cfg,
                                 const NoiseSchedule& sched = {}, const Preconditioning& pre = {},
                                 const std::string& dataset_tag = "")
{
    sched.validate();
    Shape field(joint.shape().begin() + 1, joint.shape().end());
    spec.input_shape = field;
    spec.output_shape = field;
    spec.conditioned = true;
    spec.validate();

    auto build = [&](auto tag) {
        using T = typename decltype(tag)::type;
        return [&](const ad::VarMap<T>& p, std::span<const std::size_t> idx, Rng& rng) {
                Tensor<T> batch = gather_rows<T>(joint, idx);
                std::vector<double> sigmas(idx.size());
                for (double& s : sigmas) s = sched.sigma_min * std::exp(rng.uniform() * sched.log_ratio());
                Tensor<T> noise(batch.shape());
                for (T& v : noise.data()) v = static_cast<T>(rng.normal());
                auto den = [&](const Tensor<T>& noisy, std::span<const double> s) {
                    return precond_denoise<T>(spec, p, noisy, s, pre);
                };
                return dsm_loss<T>(den, batch, sigmas, noise, pre);
        };
    };
    json meta{{"kind", "denoiser"}, {"schedule", sched}, {"sigma_data", pre.sigma_data}, {"dataset", dataset_tag}};
    return train_to_checkpoint(spec, cfg, joint.dim(0), build, std::move(meta));
}

//---------------------------------------------------------------------------//
// Sampling

namespace detail {

inline Tensor<double> prior_draws(const Shape& field, std::size_t n, double sigma, std::uint64_t seed)
{
    Shape s = field;
    s.insert(s.begin(), n);
    Tensor<double> z(s);
    std::size_t per = shape_size(field);
    Rng root(seed);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = root.split(i);
        for (std::size_t j = 0; j < per; ++j) z[i * per + j] = sigma * rng.normal();
    }
    return z;
}

inline void check_steps(std::size_t steps)
{
    if (steps < 8) throw ConfigError("sampler needs steps >= 8");
}

}  // namespace detail

/// Probability-flow ODE sampler: dz/dt = -1/2 dsigma^2/dt s(z; sigma(t)),
/// integrated from the prior at t = 1 to t = 0 with fixed-step RK.
inline Tensor<double> sample_ode(const Denoiser& d, std::size_t n, std::size_t steps, std::uint64_t seed,
                                 ode::Method method = ode::Method::rk38)
{
    detail::check_steps(steps);
    NoiseSchedule sched = d.schedule();
    Tensor<double> z = detail::prior_draws(d.field_shape(), n, sched.sigma_max, seed);
    Shape shape = z.shape();
    auto rhs = [&](double t, const ode::State& y) {
        double s = sched.sigma(std::clamp(t, 0.0, 1.0));
        Tensor<double> sc = score(d, Tensor<double>(shape, y), s);
        double c = -0.5 * sched.dsigma2_dt(std::clamp(t, 0.0, 1.0));
        ode::State out(sc.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * sc[i];
        return out;
    };
    ode::State y = ode::integrate(method, rhs, z.vec(), 1.0, 0.0, steps);
    return Tensor<double>(shape, std::move(y));
}

/// Euler-Maruyama on the reverse VE SDE dz = -g^2 s dt + g dW, g^2 = dsigma^2/dt,
/// stepping t from 1 to 0. The last step adds no noise.
inline Tensor<double> sample_sde(const Denoiser& d, std::size_t n, std::size_t steps, std::uint64_t seed)
{
    detail::check_steps(steps);
    NoiseSchedule sched = d.schedule();
    Tensor<double> z = detail::prior_draws(d.field_shape(), n, sched.sigma_max, seed);
    std::size_t per = z.size() / n;
    Rng root = Rng(seed).split(0x5de);
    double h = 1.0 / static_cast<double>(steps);
    for (std::size_t k = 0; k < steps; ++k) {
        double t = 1.0 - static_cast<double>(k) * h;
        double g2 = sched.dsigma2_dt(t);
        Tensor<double> sc = score(d, z, sched.sigma(t));
        bool last = k + 1 == steps;
        for (std::size_t i = 0; i < n; ++i) {
            Rng rng = root.split(i).split(k);
            for (std::size_t j = 0; j < per; ++j) {
                std::size_t q = i * per + j;
                z[q] += g2 * sc[q] * h;
                if (!last) z[q] += std::sqrt(g2 * h) * rng.normal();
            }
        }
        if (!z.all_finite()) throw NumericError("SDE sampler state became non-finite at t=" + std::to_string(t));
    }
    return z;
}

}  // namespace oodcert
