// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "oodcert/dataset.hpp"
#include "oodcert/rng.hpp"

namespace oodcert {

//---------------------------------------------------------------------------//
// Wave equation u_tt = c^2 (u_xx + u_yy) on [0,1]^2 with a sine-series
// initial condition and zero initial velocity.

struct WaveParams {
    std::size_t modes = 1;        // K
    double decay = 0.0;           // r in (i^2 + j^2)^(-r)
    std::vector<double> coeffs;   // a_ij, row-major K x K, i and j from 1
    double speed = 0.1;           // c
    std::size_t grid = 32;        // s

    double coeff(std::size_t i, std::size_t j) const { return coeffs.at((i - 1) * modes + (j - 1)); }
};

/// Grid nodes at (p + 0.5) / s so that no row or column sits on the
/// homogeneous boundary.
inline double grid_node(std::size_t p, std::size_t s)
{
    return (static_cast<double>(p) + 0.5) / static_cast<double>(s);
}

namespace detail {

/// Sum over modes of amp(i, j) sin(pi i x) sin(pi j y) on the s x s grid.
template<class Amp>
Tensor<double> sine_series(std::size_t modes, std::size_t s, Amp&& amp)
{
    std::vector<double> table(modes * s);
    for (std::size_t i = 1; i <= modes; ++i)
        for (std::size_t p = 0; p < s; ++p)
            table[(i - 1) * s + p] = std::sin(std::numbers::pi * static_cast<double>(i) * grid_node(p, s));

    // out = S^T C S, done as two passes to stay O(K s^2).
    std::vector<double> partial(modes * s, 0.0);  // [i][q] = sum_j C_ij S_j(q)
    for (std::size_t i = 1; i <= modes; ++i)
        for (std::size_t j = 1; j <= modes; ++j) {
            double c = amp(i, j);
            if (c == 0.0) continue;
            for (std::size_t q = 0; q < s; ++q) partial[(i - 1) * s + q] += c * table[(j - 1) * s + q];
        }
    Tensor<double> out({1, s, s});
    for (std::size_t i = 1; i <= modes; ++i)
        for (std::size_t p = 0; p < s; ++p) {
            double sp = table[(i - 1) * s + p];
            for (std::size_t q = 0; q < s; ++q) out[p * s + q] += sp * partial[(i - 1) * s + q];
        }
    return out;
}

}  // namespace detail

/// Initial condition pi * sum a_ij (i^2+j^2)^(-r) sin(pi i x) sin(pi j y) as
/// a [1, s, s] field indexed [x][y].
inline Tensor<double> wave_initial(const WaveParams& w)
{
    if (w.coeffs.size() != w.modes * w.modes) throw ConfigError("wave: need K*K coefficients");
    return detail::sine_series(w.modes, w.grid, [&](std::size_t i, std::size_t j) {
        double k2 = static_cast<double>(i * i + j * j);
        return std::numbers::pi * w.coeff(i, j) * std::pow(k2, -w.decay);
    });
}

/// Exact solution at time t: every mode scaled by cos(c pi t sqrt(i^2+j^2)).
inline Tensor<double> wave_exact(const WaveParams& w, double t)
{
    if (t < 0) throw ConfigError("wave_exact: negative time");
    if (w.coeffs.size() != w.modes * w.modes) throw ConfigError("wave: need K*K coefficients");
    return detail::sine_series(w.modes, w.grid, [&](std::size_t i, std::size_t j) {
        double k2 = static_cast<double>(i * i + j * j);
        return std::numbers::pi * w.coeff(i, j) * std::pow(k2, -w.decay)
               * std::cos(w.speed * std::numbers::pi * t * std::sqrt(k2));
    });
}

//---------------------------------------------------------------------------//
// Distribution presets

struct DistSpec {
    std::string tag = "wave-train";
    std::size_t n = 1000;
    std::uint64_t seed = 0;
    // wave
    std::size_t grid = 32;
    double r_lo = 0.75, r_hi = 0.85;
    std::size_t k_lo = 5, k_hi = 7;
    double speed = 0.1;
    double final_time = 5.0;
    // toys
    double nu = 0.1;
    std::size_t n_plus = 200;
    std::string toy_function = "linear";
    double noise_var = 0.1;
    double mode_var = 0.5;
    // gaussian oracle
    std::size_t dim = 2;

    /// Wave presets. Desk scale: 32^2 grid with mode counts scaled down;
    /// full scale: 128^2 grid with the original ranges.
    static DistSpec wave(const std::string& dist, bool desk, std::size_t n, std::uint64_t seed)
    {
        DistSpec d;
        d.n = n;
        d.seed = seed;
        d.grid = desk ? 32 : 128;
        if (dist == "train") {
            d.tag = "wave-train";
            d.r_lo = 0.75, d.r_hi = 0.85;
            if (desk) d.k_lo = 5, d.k_hi = 7;
            else d.k_lo = 20, d.k_hi = 28;
        } else if (dist == "test") {
            d.tag = "wave-test";
            d.r_lo = 0.675, d.r_hi = 0.925;
            if (desk) d.k_lo = 4, d.k_hi = 8;
            else d.k_lo = 16, d.k_hi = 32;
        } else {
            throw ConfigError("wave distribution must be 'train' or 'test', got '" + dist + "'");
        }
        return d;
    }
};

inline WaveParams draw_wave_params(const DistSpec& spec, Rng& rng)
{
    WaveParams w;
    w.grid = spec.grid;
    w.speed = spec.speed;
    w.modes = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(spec.k_lo),
                                                       static_cast<std::int64_t>(spec.k_hi)));
    w.decay = rng.uniform(spec.r_lo, spec.r_hi);
    w.coeffs.resize(w.modes * w.modes);
    for (double& a : w.coeffs) a = rng.uniform(-1.0, 1.0);
    return w;
}

/// Pairs (u0, u(., T)); sample i draws from its own stream split(i).
inline Dataset gen_wave_dataset(const DistSpec& spec)
{
    if (spec.tag != "wave-train" && spec.tag != "wave-test") throw ConfigError("not a wave distribution: " + spec.tag);
    if (spec.k_lo < 1 || spec.k_lo > spec.k_hi || !(spec.r_lo <= spec.r_hi) || spec.grid < 2 || spec.n < 1) {
        throw ConfigError("wave: invalid parameter ranges");
    }
    Rng root(spec.seed);
    std::vector<Tensor<double>> xs, ys;
    Dataset d;
    d.tag = spec.tag;
    for (std::size_t i = 0; i < spec.n; ++i) {
        Rng rng = root.split(i);
        WaveParams w = draw_wave_params(spec, rng);
        xs.push_back(wave_initial(w));
        ys.push_back(wave_exact(w, spec.final_time));
        d.metadata.push_back({{"K", w.modes}, {"r", w.decay}});
    }
    d.inputs = stack<double>(xs);
    d.outputs = stack<double>(ys);
    d.fit_normalization();
    return d;
}

//---------------------------------------------------------------------------//
// One-dimensional toys

inline double toy_function(const std::string& name, double x)
{
    if (name == "linear") return x;
    if (name == "quadratic") return x * x;
    if (name == "cubic") return x * x * x;
    if (name == "sine") return std::sin(std::numbers::pi * x);
    throw ConfigError("unknown toy function '" + name + "'");
}

/// sin(pi x / 2) for x < 0, sin(25 pi x) for x >= 0.
inline double piecewise_sine(double x)
{
    return x < 0 ? std::sin(std::numbers::pi * x / 2) : std::sin(25 * std::numbers::pi * x);
}

namespace detail {

inline Dataset scalar_dataset(std::string tag, const std::vector<double>& x, const std::vector<double>& y,
                              std::vector<json> meta)
{
    Dataset d;
    d.tag = std::move(tag);
    d.inputs = Tensor<double>({x.size(), 1}, x);
    d.outputs = Tensor<double>({y.size(), 1}, y);
    d.metadata = std::move(meta);
    d.fit_normalization();
    return d;
}

}  // namespace detail

/// N_+ draws from N(1, mode_var) and round(nu N_+) from N(-1, mode_var),
/// targets f(x) + N(0, noise_var). Variances follow N(mean, variance).
inline Dataset gen_toy_bimodal(const DistSpec& spec)
{
    if (!(spec.nu > 0 && spec.nu <= 1)) throw ConfigError("toy-bimodal: nu must lie in (0, 1]");
    if (spec.n_plus < 1) throw ConfigError("toy-bimodal: N+ must be at least 1");
    auto n_minus = static_cast<std::size_t>(std::llround(spec.nu * static_cast<double>(spec.n_plus)));
    Rng root(spec.seed);
    std::vector<double> x, y;
    std::vector<json> meta;
    double mode_sd = std::sqrt(spec.mode_var), noise_sd = std::sqrt(spec.noise_var);
    for (std::size_t i = 0; i < spec.n_plus + n_minus; ++i) {
        Rng rng = root.split(i);
        bool plus = i < spec.n_plus;
        double xi = rng.normal(plus ? 1.0 : -1.0, mode_sd);
        x.push_back(xi);
        y.push_back(toy_function(spec.toy_function, xi) + noise_sd * rng.normal());
        meta.push_back({{"mode", plus ? "+" : "-"}});
    }
    return detail::scalar_dataset("toy-bimodal", x, y, std::move(meta));
}

/// Noiseless (x, f(x)) with x ~ U(-1, 1) and f the piecewise sine.
inline Dataset gen_toy_piecewise_sine(std::size_t n, std::uint64_t seed)
{
    if (n < 1) throw ConfigError("toy-piecewise-sine: N must be at least 1");
    Rng root(seed);
    std::vector<double> x, y;
    std::vector<json> meta;
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = root.split(i);
        double xi = rng.uniform(-1.0, 1.0);
        x.push_back(xi);
        y.push_back(piecewise_sine(xi));
        meta.push_back({{"branch", xi < 0 ? "smooth" : "oscillatory"}});
    }
    return detail::scalar_dataset("toy-piecewise-sine", x, y, std::move(meta));
}

//---------------------------------------------------------------------------//
/*!
 * Diagonal Gaussian N(mean, diag(var)) with closed-form quantities under
 * variance-exploding noise: the perturbed score
 *   s(z; sigma) = -(z - mean) / (var + sigma^2)
 * and the optimal denoiser
 *   D(z; sigma) = z + sigma^2 s(z; sigma).
 */
class GaussianOracle {
  public:
    GaussianOracle(std::vector<double> mean, std::vector<double> var) : mean_(std::move(mean)), var_(std::move(var))
    {
        if (mean_.size() != var_.size() || mean_.empty()) throw ConfigError("gaussian oracle: size mismatch");
        for (double v : var_)
            if (!(v > 0)) throw ConfigError("gaussian oracle: variances must be positive");
    }

    static GaussianOracle standard(std::size_t dim)
    {
        return {std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
    }

    std::size_t dim() const { return mean_.size(); }

    /// log N(z; mean, diag(var + sigma^2)); sigma = 0 is the data density.
    double log_density(std::span<const double> z, double sigma = 0) const
    {
        check(z.size());
        double acc = 0;
        for (std::size_t i = 0; i < z.size(); ++i) {
            double v = var_[i] + sigma * sigma;
            double d = z[i] - mean_[i];
            acc += -0.5 * (std::log(2 * std::numbers::pi * v) + d * d / v);
        }
        return acc;
    }

    std::vector<double> score(std::span<const double> z, double sigma) const
    {
        check(z.size());
        std::vector<double> s(z.size());
        for (std::size_t i = 0; i < z.size(); ++i) s[i] = -(z[i] - mean_[i]) / (var_[i] + sigma * sigma);
        return s;
    }

    std::vector<double> denoise(std::span<const double> z, double sigma) const
    {
        auto s = score(z, sigma);
        for (std::size_t i = 0; i < z.size(); ++i) s[i] = z[i] + sigma * sigma * s[i];
        return s;
    }

    std::vector<double> sample(Rng& rng) const
    {
        std::vector<double> z(dim());
        for (std::size_t i = 0; i < dim(); ++i) z[i] = mean_[i] + std::sqrt(var_[i]) * rng.normal();
        return z;
    }

    /// Draws split into input (first half, rounded up) and output channels.
    Dataset dataset(std::size_t n, std::uint64_t seed) const
    {
        Rng root(seed);
        std::size_t dx = dim() - dim() / 2, dy = dim() / 2;
        if (dy == 0) throw ConfigError("gaussian oracle dataset needs dim >= 2");
        Dataset d;
        d.tag = "gaussian-oracle";
        d.inputs = Tensor<double>({n, dx});
        d.outputs = Tensor<double>({n, dy});
        for (std::size_t i = 0; i < n; ++i) {
            Rng rng = root.split(i);
            auto z = sample(rng);
            std::copy_n(z.begin(), dx, d.inputs.ptr() + i * dx);
            std::copy_n(z.begin() + static_cast<std::ptrdiff_t>(dx), dy, d.outputs.ptr() + i * dy);
            d.metadata.push_back(json::object());
        }
        return d;
    }

    const std::vector<double>& mean() const { return mean_; }
    const std::vector<double>& var() const { return var_; }

  private:
    void check(std::size_t n) const
    {
        if (n != dim()) throw ShapeError("gaussian oracle: dimension mismatch");
    }

    std::vector<double> mean_;
    std::vector<double> var_;
};

/// Convenience entry point for the distribution tag.
inline Dataset generate(const DistSpec& spec)
{
    if (spec.tag == "wave-train" || spec.tag == "wave-test") return gen_wave_dataset(spec);
    if (spec.tag == "toy-bimodal") return gen_toy_bimodal(spec);
    if (spec.tag == "toy-piecewise-sine") return gen_toy_piecewise_sine(spec.n, spec.seed);
    if (spec.tag == "gaussian-oracle") return GaussianOracle::standard(spec.dim).dataset(spec.n, spec.seed);
    throw ConfigError("unknown distribution tag '" + spec.tag + "'");
}

}  // namespace oodcert
