// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "oodcert/likelihood.hpp"
#include "oodcert/train.hpp"

namespace oodcert {

/// A certificate method. Family methods use the toggles (alpha, beta, gamma)
/// and exponent p; JLBC is the joint likelihood, OODC the classifier baseline.
struct CertificateMethod {
    std::string tag;
    double alpha = 0, beta = 0, gamma = 0;
    double p = 2;

    bool is_family() const { return tag != "JLBC" && tag != "OODC"; }
    /// +1: larger is more OOD; -1: larger is more ID.
    int sign() const { return is_family() ? +1 : -1; }
};

inline std::vector<CertificateMethod> method_presets(double p = 2)
{
    return {
        {"JLBC", 0, 0, 0, p},   {"JDPath", 0, 1, 0, p}, {"JSFNS", 1, 0, 0, p},
        {"JSBDDM", 1, 1, 0, p}, {"JMSSM", 0, 0, 1, p},  {"OODC", 0, 0, 0, p},
    };
}

/// Case-insensitive lookup of a preset tag.
inline CertificateMethod find_method(const std::string& name, double p = 2)
{
    auto lower = [](std::string s) {
        for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        return s;
    };
    for (const auto& m : method_presets(p))
        if (lower(m.tag) == lower(name)) return m;
    throw ConfigError("unknown certificate method '" + name + "'");
}

/// Comma-separated list of method tags.
inline std::vector<CertificateMethod> parse_methods(const std::string& list, double p = 2)
{
    std::vector<CertificateMethod> out;
    std::size_t pos = 0;
    while (pos <= list.size()) {
        std::size_t end = list.find(',', pos);
        if (end == std::string::npos) end = list.size();
        std::string item = list.substr(pos, end - pos);
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (!item.empty()) out.push_back(find_method(item, p));
        pos = end + 1;
    }
    if (out.empty()) throw ConfigError("empty certificate method list");
    return out;
}

//---------------------------------------------------------------------------//
// Unified score-trajectory family

struct FamilyTerms {
    double sum_norm = 0;         // ||sum_k eps_k||^p
    double derivative_norm = 0;  // ||sum_k (eps_{k+1} - eps_k) / (t_{k+1} - t_k)||^p
    double norm_sum = 0;         // sum_k ||eps_k||^p
};

namespace detail {

inline double pow_norm(double sumsq, double p)
{
    return p == 2 ? sumsq : std::pow(std::sqrt(sumsq), p);
}

}  // namespace detail

inline FamilyTerms family_terms(const Trajectory& traj, double p = 2)
{
    if (traj.empty()) throw ConfigError("certificate needs a non-empty trajectory");
    if (!(p > 0)) throw ConfigError("norm exponent p must be positive");
    std::size_t d = traj.front().eps.size();
    std::vector<double> sum(d, 0.0), dsum(d, 0.0);
    FamilyTerms f;
    for (std::size_t k = 0; k < traj.size(); ++k) {
        const auto& e = traj[k].eps;
        if (e.size() != d) throw ShapeError("trajectory eps sizes differ");
        double sq = 0;
        for (std::size_t i = 0; i < d; ++i) {
            sum[i] += e[i];
            sq += e[i] * e[i];
        }
        f.norm_sum += detail::pow_norm(sq, p);
        if (k + 1 < traj.size()) {
            double dt = traj[k + 1].t - traj[k].t;
            if (!(dt > 0)) throw ConfigError("trajectory times must be strictly increasing");
            const auto& en = traj[k + 1].eps;
            for (std::size_t i = 0; i < d; ++i) dsum[i] += (en[i] - e[i]) / dt;
        }
    }
    auto sq = [](const std::vector<double>& v) { return std::inner_product(v.begin(), v.end(), v.begin(), 0.0); };
    f.sum_norm = detail::pow_norm(sq(sum), p);
    f.derivative_norm = detail::pow_norm(sq(dsum), p);
    return f;
}

/// a = alpha ||sum eps||^p + beta ||sum d eps/dt||^p + gamma sum ||eps||^p
inline double unified_certificate(const Trajectory& traj, const CertificateMethod& m)
{
    if (!m.is_family()) throw ConfigError(m.tag + " is not a trajectory certificate");
    if (m.beta != 0 && traj.size() < 2) throw ConfigError("derivative term needs at least 2 trajectory points");
    FamilyTerms f = family_terms(traj, m.p);
    return (m.alpha * f.sum_norm + m.beta * f.derivative_norm) + m.gamma * f.norm_sum;
}

//---------------------------------------------------------------------------//
/*!
 * All requested certificates of one input from a single probability-flow
 * trajectory of the joint field (x, y_pred). The JLBC value equals
 * certify_jlbc with the same seed and sample id.
 */
inline std::vector<CertificateRecord> certify_sample(const Model& regressor, const Denoiser& den,
                                                     const Tensor<double>& x,
                                                     const std::vector<CertificateMethod>& methods,
                                                     const SolverConfig& cfg, std::uint64_t seed,
                                                     std::size_t sample_id = 0,
                                                     const std::optional<Tensor<double>>& truth = std::nullopt,
                                                     const std::string& dataset = "")
{
    Tensor<double> y_pred = regressor.predict(x);
    SolverConfig c = cfg;
    c.keep_trajectory = std::any_of(methods.begin(), methods.end(), [](const auto& m) { return m.is_family(); });
    auto res = log_likelihood(den, joint_field(regressor, x, y_pred), c, sample_stream(seed, sample_id));
    std::optional<double> err, rel;
    if (truth) std::tie(err, rel) = prediction_error(y_pred, *truth);

    std::vector<CertificateRecord> out;
    for (const auto& m : methods) {
        if (m.tag == "OODC") throw ConfigError("OODC certificates come from a trained classifier");
        CertificateRecord r;
        r.sample_id = sample_id;
        r.dataset = dataset;
        r.method = m.tag;
        r.certificate = m.is_family() ? unified_certificate(res.trajectory, m) : res.log_likelihood;
        r.error = err;
        r.relative_error = rel;
        out.push_back(std::move(r));
    }
    return out;
}

inline CertificateRecord certify_family(const Model& regressor, const Denoiser& den, const Tensor<double>& x,
                                        const CertificateMethod& method, const SolverConfig& cfg, std::uint64_t seed,
                                        std::size_t sample_id = 0,
                                        const std::optional<Tensor<double>>& truth = std::nullopt,
                                        const std::string& dataset = "")
{
    return certify_sample(regressor, den, x, {method}, cfg, seed, sample_id, truth, dataset).front();
}

//---------------------------------------------------------------------------//
// Classification baseline

struct OodcSplit {
    std::vector<std::size_t> train, validation;
};

/// Seeded permutation; the last floor(0.2 M) indices form the validation set.
inline OodcSplit oodc_split(std::size_t m, std::uint64_t seed)
{
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = m; i > 1; --i) {
        auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
        std::swap(order[i - 1], order[j]);
    }
    std::size_t nval = m / 5;
    OodcSplit s;
    s.train.assign(order.begin(), order.end() - static_cast<std::ptrdiff_t>(nval));
    s.validation.assign(order.end() - static_cast<std::ptrdiff_t>(nval), order.end());
    return s;
}

/// Flattened normalized (x, y_pred) features, one row per sample.
inline Tensor<double> oodc_features(const Tensor<double>& inputs, const Tensor<double>& preds, const Normalization& n)
{
    if (inputs.rank() < 1 || preds.rank() < 1 || inputs.dim(0) != preds.dim(0)) {
        throw ShapeError("oodc: inputs and predictions need equal leading dimension");
    }
    std::size_t m = inputs.dim(0), dx = inputs.size() / std::max<std::size_t>(m, 1),
                dy = preds.size() / std::max<std::size_t>(m, 1);
    Tensor<double> nx = n.norm_x(inputs), ny = n.norm_y(preds);
    Tensor<double> f({m, dx + dy});
    for (std::size_t i = 0; i < m; ++i) {
        std::copy(nx.ptr() + i * dx, nx.ptr() + (i + 1) * dx, f.ptr() + i * (dx + dy));
        std::copy(ny.ptr() + i * dy, ny.ptr() + (i + 1) * dy, f.ptr() + i * (dx + dy) + dx);
    }
    return f;
}

/// P(OOD) for each row of a feature matrix.
inline std::vector<double> oodc_probabilities(const Model& clf, const Tensor<double>& features)
{
    Tensor<double> logits = clf.apply(features);
    std::vector<double> p(logits.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = 1.0 / (1.0 + std::exp(-logits[i]));
    return p;
}

inline double oodc_accuracy(const Model& clf, const Tensor<double>& features, const std::vector<int>& labels,
                            const std::vector<std::size_t>& idx)
{
    if (idx.empty()) return 0;
    auto p = oodc_probabilities(clf, gather_rows<double>(features, idx));
    std::size_t ok = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) ok += (p[k] >= 0.5) == (labels[idx[k]] == 1);
    return static_cast<double>(ok) / static_cast<double>(idx.size());
}

/*!
 * Binary classifier over concatenated (x, y_pred), label 1 = OOD, trained
 * with the logistic loss on a 80/20 split of the M labeled samples.
 */
inline Checkpoint oodc_train(const Tensor<double>& inputs, const Tensor<double>& preds, const std::vector<int>& labels,
                             ModelSpec spec, TrainConfig cfg, const Normalization& norm)
{
    Tensor<double> feats = oodc_features(inputs, preds, norm);
    std::size_t m = feats.dim(0);
    if (labels.size() != m) throw ConfigError("oodc: one label per sample required");
    for (int l : labels)
        if (l != 0 && l != 1) throw ConfigError("oodc: labels must be 0 (ID) or 1 (OOD)");
    OodcSplit split = oodc_split(m, cfg.seed);
    std::size_t pos = 0;
    for (std::size_t i : split.train) pos += labels[i] == 1;
    if (pos == 0 || pos == split.train.size()) {
        throw ConfigError("oodc: training split must contain both ID and OOD samples");
    }
    Tensor<double> train_x = gather_rows<double>(feats, split.train);
    std::vector<double> train_y;
    for (std::size_t i : split.train) train_y.push_back(labels[i]);

    spec.arch = "mlp";
    spec.input_shape = {feats.dim(1)};
    spec.output_shape = {1};
    spec.conditioned = false;
    spec.validate();
    cfg.batch_size = std::min(cfg.batch_size, split.train.size());

    const Tensor<double>& xs = train_x;
    const std::vector<double>& ys = train_y;
    auto build = [&](auto tag) {
        using T = typename decltype(tag)::type;
        return [&](const ad::VarMap<T>& p, std::span<const std::size_t> idx, Rng&) {
                Tensor<T> y({idx.size(), 1});
                for (std::size_t k = 0; k < idx.size(); ++k) y[k] = static_cast<T>(ys[idx[k]]);
                auto logit = forward<T>(spec, p, ad::constant(gather_rows<T>(xs, idx)));
                return ad::mean(ad::sub(ad::softplus(logit), ad::mul(ad::constant(y), logit)));
        };
    };
    json meta{{"kind", "oodc"}, {"normalization", norm}, {"train_size", split.train.size()},
              {"validation_size", split.validation.size()}};
    Checkpoint ck = train_to_checkpoint(spec, cfg, split.train.size(), build, meta);
    Model clf(spec, ck.inference_params());
    ck.meta["train_accuracy"] = oodc_accuracy(clf, feats, labels, split.train);
    ck.meta["validation_accuracy"] = oodc_accuracy(clf, feats, labels, split.validation);
    return ck;
}

/// OODC record: certificate = P(ID), so larger means more in-distribution.
inline CertificateRecord certify_oodc(const Checkpoint& clf_ck, const Model& regressor, const Tensor<double>& x,
                                      std::size_t sample_id = 0,
                                      const std::optional<Tensor<double>>& truth = std::nullopt,
                                      const std::string& dataset = "")
{
    Model clf(clf_ck);
    Tensor<double> y_pred = regressor.predict(x);
    Shape xs = x.shape(), ys = y_pred.shape();
    xs.insert(xs.begin(), 1);
    ys.insert(ys.begin(), 1);
    auto p = oodc_probabilities(clf, oodc_features(x.reshaped(xs), y_pred.reshaped(ys), clf.normalization()));
    CertificateRecord r;
    r.sample_id = sample_id;
    r.dataset = dataset;
    r.method = "OODC";
    r.certificate = 1.0 - p[0];
    if (truth) std::tie(r.error, r.relative_error) = prediction_error(y_pred, *truth);
    return r;
}

//---------------------------------------------------------------------------//
// Label and segmentation transforms

/// One categorical draw per pixel from softmax(logits / T); output [1, s, s]
/// holds class indices.
inline Tensor<double> perturb_labels(std::span<const double> logits, std::size_t resolution, double temperature,
                                     std::uint64_t seed)
{
    if (logits.size() < 2) throw ConfigError("perturb_labels needs at least 2 classes");
    if (!(temperature > 0)) throw ConfigError("perturb_labels: temperature must be positive");
    for (double l : logits)
        if (!std::isfinite(l)) throw NumericError("perturb_labels: non-finite logit");
    double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> cdf(logits.size());
    double acc = 0;
    for (std::size_t m = 0; m < logits.size(); ++m) {
        acc += std::exp((logits[m] - mx) / temperature);
        cdf[m] = acc;
    }
    for (double& c : cdf) c /= acc;
    Tensor<double> out({1, resolution, resolution});
    Rng rng(seed);
    for (std::size_t i = 0; i < out.size(); ++i) {
        double u = rng.split(i).uniform();
        auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        out[i] = static_cast<double>(std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1));
    }
    return out;
}

/// Non-semantic pixels (mask == 0) replaced by N(0, variance) draws.
inline Tensor<double> mask_noise(const Tensor<double>& field, const Tensor<double>& semantic_mask, std::uint64_t seed,
                                 double variance = 0.025, bool enabled = true)
{
    if (field.shape() != semantic_mask.shape()) throw ShapeError("mask_noise: mask shape does not match field");
    if (!(variance >= 0)) throw ConfigError("mask_noise: variance must be non-negative");
    Tensor<double> out = field;
    if (!enabled) return out;
    double sd = std::sqrt(variance);
    Rng rng(seed);
    for (std::size_t i = 0; i < out.size(); ++i)
        if (semantic_mask[i] == 0) out[i] = rng.split(i).normal(0.0, sd);
    return out;
}

}  // namespace oodcert
