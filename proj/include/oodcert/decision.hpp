// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "oodcert/error.hpp"
#include "oodcert/record.hpp"

namespace oodcert {

//---------------------------------------------------------------------------//
// Statistics

inline double mean(std::span<const double> v)
{
    if (v.empty()) throw ConfigError("mean of empty list");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double median(std::span<const double> v)
{
    if (v.empty()) throw ConfigError("median of empty list");
    std::vector<double> s(v.begin(), v.end());
    std::sort(s.begin(), s.end());
    std::size_t n = s.size();
    return n % 2 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
}

/// Standard deviation with the N denominator.
inline double population_std(std::span<const double> v)
{
    double m = mean(v);
    double acc = 0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(v.size()));
}

/// q-th percentile, q in [0, 100], linear interpolation between order statistics.
inline double percentile(std::span<const double> v, double q)
{
    if (v.empty()) throw ConfigError("percentile of empty list");
    if (!(q >= 0 && q <= 100)) throw ConfigError("percentile must lie in [0, 100]");
    std::vector<double> s(v.begin(), v.end());
    std::sort(s.begin(), s.end());
    double pos = q / 100.0 * static_cast<double>(s.size() - 1);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    std::size_t hi = std::min(lo + 1, s.size() - 1);
    double f = pos - static_cast<double>(lo);
    return s[lo] + f * (s[hi] - s[lo]);
}

/// 1-based ranks with ties averaged.
inline std::vector<double> ranks(std::span<const double> v)
{
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

inline double pearson(std::span<const double> x, std::span<const double> y)
{
    if (x.size() != y.size() || x.size() < 2) throw ConfigError("correlation needs two equal lists of length >= 2");
    double mx = mean(x), my = mean(y), sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0 || syy == 0) return 0;
    return sxy / std::sqrt(sxx * syy);
}

inline double spearman(std::span<const double> x, std::span<const double> y)
{
    auto rx = ranks(x), ry = ranks(y);
    return pearson(rx, ry);
}

/// Probability that a positive scores above a negative, ties counting half.
inline double rank_auc(std::span<const double> positives, std::span<const double> negatives)
{
    if (positives.empty() || negatives.empty()) throw ConfigError("AUC needs both classes");
    double acc = 0;
    for (double p : positives)
        for (double n : negatives) acc += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
    return acc / static_cast<double>(positives.size() * negatives.size());
}

//---------------------------------------------------------------------------//
// Boundaries

/// m + sign * alpha * std over the decision certificates. sign = -1 for
/// likelihood-type certificates, +1 for trajectory-family ones.
inline double certificate_boundary(std::span<const double> certs, double alpha, int sign = -1)
{
    if (certs.size() < 2) throw ConfigError("certificate boundary needs at least 2 decision samples");
    if (sign != 1 && sign != -1) throw ConfigError("boundary sign must be +1 or -1");
    return median(certs) + sign * alpha * population_std(certs);
}

/// (100 - beta)-th percentile of the decision errors; beta in percent.
inline double error_boundary(std::span<const double> errors, double beta)
{
    if (errors.empty()) throw ConfigError("error boundary needs at least one error");
    if (!(beta > 0 && beta < 100)) throw ConfigError("beta must lie in (0, 100)");
    return percentile(errors, 100.0 - beta);
}

struct DecisionBoundary {
    double certificate_threshold = 0;
    double error_threshold = 0;
    double median = 0;
    double std = 0;
    double alpha = 1.5;
    double beta = 5;
    int sign = -1;
    std::size_t samples = 0;
};

inline void to_json(nlohmann::json& j, const DecisionBoundary& b)
{
    j = nlohmann::json{{"certificate_threshold", b.certificate_threshold},
                       {"error_threshold", b.error_threshold},
                       {"median", b.median},
                       {"std", b.std},
                       {"alpha", b.alpha},
                       {"beta", b.beta},
                       {"sign", b.sign},
                       {"samples", b.samples}};
}

inline void from_json(const nlohmann::json& j, DecisionBoundary& b)
{
    j.at("certificate_threshold").get_to(b.certificate_threshold);
    j.at("error_threshold").get_to(b.error_threshold);
    j.at("median").get_to(b.median);
    j.at("std").get_to(b.std);
    j.at("alpha").get_to(b.alpha);
    j.at("beta").get_to(b.beta);
    j.at("sign").get_to(b.sign);
    j.at("samples").get_to(b.samples);
}

inline DecisionBoundary make_boundary(std::span<const double> certs, std::span<const double> errors, double alpha,
                                      double beta, int sign = -1)
{
    DecisionBoundary b;
    b.certificate_threshold = certificate_boundary(certs, alpha, sign);
    b.error_threshold = error_boundary(errors, beta);
    b.median = median(certs);
    b.std = population_std(certs);
    b.alpha = alpha;
    b.beta = beta;
    b.sign = sign;
    b.samples = certs.size();
    return b;
}

/// Boundary from decision records, which must all carry errors.
inline DecisionBoundary make_boundary(const std::vector<CertificateRecord>& decision, double alpha, double beta,
                                      int sign = -1)
{
    std::vector<double> c, e;
    for (const auto& r : decision) {
        if (!r.error) throw ConfigError("decision sample " + std::to_string(r.sample_id) + " has no error");
        c.push_back(r.certificate);
        e.push_back(*r.error);
    }
    return make_boundary(c, e, alpha, beta, sign);
}

struct Classification {
    std::string label;       // ID | OOD
    std::string fine_label;  // ID | CD | OOD
};

/*!
 * ID iff the certificate is on the in-distribution side of the threshold
 * (inclusive). Fine labels use the fixed 1.5 and 3 standard-deviation bands
 * around the median: CD strictly between them, OOD at or beyond 3.
 */
inline Classification classify(double cert, const DecisionBoundary& b)
{
    // Mirror family certificates so that larger is always more ID.
    double c = -b.sign * cert, m = -b.sign * b.median, l = -b.sign * b.certificate_threshold;
    Classification out;
    out.label = c >= l ? "ID" : "OOD";
    if (c >= m - 1.5 * b.std)
        out.fine_label = "ID";
    else if (c > m - 3 * b.std)
        out.fine_label = "CD";
    else
        out.fine_label = "OOD";
    return out;
}

inline void label_records(std::vector<CertificateRecord>& records, const DecisionBoundary& b)
{
    for (auto& r : records) {
        auto c = classify(r.certificate, b);
        r.label = c.label;
        r.fine_label = c.fine_label;
    }
}

//---------------------------------------------------------------------------//
// Quadrant metrics

/// Positive = classified OOD; ground-truth positive = error > e_b.
struct QuadrantCounts {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::size_t total() const { return tp + fp + tn + fn; }
};

struct Metrics {
    QuadrantCounts counts;
    double acc = 0, fpr = 0, fnr = 0, fdr = 0;
    std::optional<double> arcb;
    std::size_t critical = 0;
};

inline void to_json(nlohmann::json& j, const Metrics& m)
{
    j = nlohmann::json{{"ACC", m.acc},
                       {"FPR", m.fpr},
                       {"FNR", m.fnr},
                       {"FDR", m.fdr},
                       {"TP", m.counts.tp},
                       {"FP", m.counts.fp},
                       {"TN", m.counts.tn},
                       {"FN", m.counts.fn},
                       {"N", m.counts.total()},
                       {"critical", m.critical}};
    if (m.arcb) j["ARCB"] = *m.arcb;
}

namespace detail {

inline double ratio(std::size_t num, std::size_t den)
{
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace detail

inline Metrics metrics_from_counts(const QuadrantCounts& q)
{
    Metrics m;
    m.counts = q;
    m.acc = detail::ratio(q.tp + q.tn, q.total());
    m.fpr = detail::ratio(q.fp, q.fp + q.tn);
    m.fnr = detail::ratio(q.fn, q.fn + q.tp);
    m.fdr = detail::ratio(q.fp, q.fp + q.tp);
    return m;
}

inline Metrics quadrant_metrics(const std::vector<CertificateRecord>& records, const DecisionBoundary& b)
{
    QuadrantCounts q;
    std::size_t critical = 0, critical_ood = 0;
    for (const auto& r : records) {
        if (!r.error) throw ConfigError("record " + std::to_string(r.sample_id) + " has no error");
        bool ood = classify(r.certificate, b).label == "OOD";
        bool large = *r.error > b.error_threshold;
        if (ood && large) ++q.tp;
        if (ood && !large) ++q.fp;
        if (!ood && !large) ++q.tn;
        if (!ood && large) ++q.fn;
        if (r.relative_error && *r.relative_error >= 1.0) {
            ++critical;
            critical_ood += ood;
        }
    }
    Metrics m = metrics_from_counts(q);
    m.critical = critical;
    if (critical > 0) m.arcb = detail::ratio(critical_ood, critical);
    return m;
}

//---------------------------------------------------------------------------//
// A-posteriori error fit

/// y(x) = a exp(-b (x - center)) + c with a symmetric band.
struct ErrorFit {
    double a = 0, b = 0, c = 0, center = 0;
    double band = 0;
    double band_percentile = 75;
    std::size_t samples = 0;
    bool converged = true;
    double rmse = 0;

    double operator()(double x) const { return a * std::exp(-b * (x - center)) + c; }
};

inline void to_json(nlohmann::json& j, const ErrorFit& f)
{
    j = nlohmann::json{{"a", f.a},       {"b", f.b},
                       {"c", f.c},       {"center", f.center},
                       {"band", f.band}, {"band_percentile", f.band_percentile},
                       {"samples", f.samples}, {"converged", f.converged},
                       {"rmse", f.rmse}};
}

inline void from_json(const nlohmann::json& j, ErrorFit& f)
{
    j.at("a").get_to(f.a);
    j.at("b").get_to(f.b);
    j.at("c").get_to(f.c);
    j.at("center").get_to(f.center);
    j.at("band").get_to(f.band);
    j.at("band_percentile").get_to(f.band_percentile);
    j.at("samples").get_to(f.samples);
    j.at("converged").get_to(f.converged);
    j.at("rmse").get_to(f.rmse);
}

struct ErrorEstimate {
    double estimate = 0, lower = 0, upper = 0;
};

inline ErrorEstimate predict_error(const ErrorFit& fit, double cert)
{
    double e = fit(cert);
    return {e, std::max(0.0, e - fit.band), e + fit.band};
}

namespace detail {

struct ExpParams {
    double a, b, c;
};

inline double sse(const ExpParams& p, std::span<const double> u, std::span<const double> y)
{
    double s = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        double r = p.a * std::exp(-p.b * u[i]) + p.c - y[i];
        s += r * r;
    }
    return std::isfinite(s) ? s : std::numeric_limits<double>::infinity();
}

/// Gauss-Newton with step halving on y = a exp(-b u) + c. Returns the best
/// iterate and whether the relative SSE change fell below tolerance.
inline std::pair<ExpParams, bool> gauss_newton(ExpParams p, std::span<const double> u, std::span<const double> y,
                                               std::size_t max_iter)
{
    double cur = sse(p, u, y);
    double scale = 0;
    for (double v : y) scale += v * v;
    for (std::size_t it = 0; it < max_iter; ++it) {
        Eigen::Matrix3d jtj = Eigen::Matrix3d::Zero();
        Eigen::Vector3d jtr = Eigen::Vector3d::Zero();
        for (std::size_t i = 0; i < u.size(); ++i) {
            double e = std::exp(-p.b * u[i]);
            Eigen::Vector3d g(e, -p.a * u[i] * e, 1.0);
            double r = p.a * e + p.c - y[i];
            jtj += g * g.transpose();
            jtr += g * r;
        }
        // Tiny ridge keeps degenerate directions solvable.
        jtj.diagonal().array() += 1e-12 * (jtj.diagonal().maxCoeff() + 1e-300);
        Eigen::Vector3d step = jtj.ldlt().solve(-jtr);
        if (!step.allFinite()) return {p, false};
        double t = 1;
        bool improved = false;
        for (int k = 0; k < 40; ++k, t *= 0.5) {
            ExpParams q{p.a + t * step[0], p.b + t * step[1], p.c + t * step[2]};
            double s = sse(q, u, y);
            if (s <= cur) {
                double change = cur - s;
                p = q;
                improved = change > 0;
                bool done = change <= 1e-15 * std::max(cur, 1e-300) || s <= 1e-30 * std::max(scale, 1e-300);
                cur = s;
                if (done) return {p, true};
                break;
            }
        }
        if (!improved) return {p, true};
    }
    return {p, false};
}

}  // namespace detail

/*!
 * Least-squares exponential fit of error against certificate.
 *
 * Works in the standardized certificate u = (x - mean) / std. Initialization:
 * c0 = 0.9 min(error), then b0, a0 from a line through log(error - c0).
 * Constant errors give the c-only fit a = b = 0, c = median.
 */
inline ErrorFit fit_error_curve(std::span<const double> certs, std::span<const double> errors,
                                double band_percentile = 75, std::size_t max_iter = 500)
{
    if (certs.size() != errors.size()) throw ConfigError("fit: certificate and error lists differ in length");
    if (certs.size() < 8) throw ConfigError("fit: need at least 8 points");
    for (std::size_t i = 0; i < certs.size(); ++i) {
        if (!std::isfinite(certs[i]) || !std::isfinite(errors[i])) throw NumericError("fit: non-finite input");
        if (errors[i] < 0) throw ConfigError("fit: errors must be non-negative");
    }
    ErrorFit fit;
    fit.samples = certs.size();
    fit.band_percentile = band_percentile;

    auto [ymin, ymax] = std::minmax_element(errors.begin(), errors.end());
    double mu = mean(certs), sd = population_std(certs);
    bool constant = *ymax - *ymin <= 1e-14 * std::max(1.0, std::abs(*ymax));
    if (constant || sd == 0) {
        fit.c = median(errors);
    } else {
        std::vector<double> u(certs.size());
        for (std::size_t i = 0; i < u.size(); ++i) u[i] = (certs[i] - mu) / sd;
        double c0 = 0.9 * *ymin;
        std::vector<double> lu, ly;
        for (std::size_t i = 0; i < u.size(); ++i) {
            if (errors[i] - c0 > 0) {
                lu.push_back(u[i]);
                ly.push_back(std::log(errors[i] - c0));
            }
        }
        detail::ExpParams p0{0, 0, mean(errors)};
        if (lu.size() >= 2) {
            double mx = mean(lu), my = mean(ly), sxy = 0, sxx = 0;
            for (std::size_t i = 0; i < lu.size(); ++i) {
                sxy += (lu[i] - mx) * (ly[i] - my);
                sxx += (lu[i] - mx) * (lu[i] - mx);
            }
            double slope = sxx > 0 ? sxy / sxx : 0;
            p0 = {std::exp(my - slope * mx), -slope, c0};
        }
        auto [p, ok] = detail::gauss_newton(p0, u, errors, max_iter);
        detail::ExpParams flat{0, 0, mean(errors)};
        if (detail::sse(flat, u, errors) < detail::sse(p, u, errors)) p = flat;
        fit.converged = ok;
        fit.b = p.b / sd;
        fit.c = p.c;
        double shifted = p.a * std::exp(p.b * mu / sd);
        if (std::isfinite(shifted) && shifted != 0) {
            fit.a = shifted;
        } else {
            fit.a = p.a;
            fit.center = mu;
        }
    }
    std::vector<double> dev(certs.size());
    double sq = 0;
    for (std::size_t i = 0; i < dev.size(); ++i) {
        dev[i] = std::abs(fit(certs[i]) - errors[i]);
        sq += dev[i] * dev[i];
    }
    fit.rmse = std::sqrt(sq / static_cast<double>(dev.size()));
    fit.band = percentile(dev, band_percentile);
    return fit;
}

}  // namespace oodcert
