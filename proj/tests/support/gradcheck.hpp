// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "oodcert/models.hpp"
#include "oodcert/ops.hpp"

namespace oodcert::testing {

using VarFn = std::function<ad::Var<double>(const ad::VarMap<double>&)>;

struct GradCase {
    std::string name;
    ParamSet<double> at;
    VarFn fn;
};

struct GradResult {
    double rel_error = 0;  // worst tensor of ||g_ad - g_fd|| / (||g_ad|| + ||g_fd||)
    std::string worst;
};

/// Central-difference check of the full Jacobian, contracted with a fixed
/// random cotangent so every output element contributes.
inline GradResult check_gradient(const VarFn& fn, const ParamSet<double>& at, double h = 1e-6)
{
    Tensor<double> probe_shape = fn(as_constants(at)).value();
    Tensor<double> w(probe_shape.shape());
    Rng rng(4242);
    for (double& v : w.data()) v = rng.normal();
    auto loss = [&](const ad::VarMap<double>& p) { return ad::sum(ad::mul(fn(p), ad::constant(w))); };
    auto eval = [&](const ParamSet<double>& ps) { return loss(as_constants(ps)).value().item(); };

    auto [val, grads] = ad::value_and_grad<double>(loss, at);
    (void)val;
    GradResult res;
    for (const auto& [name, t] : at) {
        const Tensor<double>& ga = grads.at(name);
        double diff = 0, na = 0, nf = 0;
        for (std::size_t i = 0; i < t.size(); ++i) {
            ParamSet<double> plus = at, minus = at;
            plus.at(name)[i] += h;
            minus.at(name)[i] -= h;
            double fd = (eval(plus) - eval(minus)) / (2 * h);
            diff += (ga[i] - fd) * (ga[i] - fd);
            na += ga[i] * ga[i];
            nf += fd * fd;
        }
        double denom = std::sqrt(na) + std::sqrt(nf);
        double rel = denom > 0 ? std::sqrt(diff) / denom : 0;
        if (rel >= res.rel_error) {
            res.rel_error = rel;
            res.worst = name;
        }
    }
    return res;
}

/// Values drawn away from zero so kinks (relu, abs, max) are not straddled.
inline Tensor<double> away_from_zero(const Shape& s, std::uint64_t seed, double lo = 0.2, double hi = 1.5)
{
    Tensor<double> t(s);
    Rng rng(seed);
    for (double& v : t.data()) v = (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(lo, hi);
    return t;
}

inline Tensor<double> positive(const Shape& s, std::uint64_t seed)
{
    Tensor<double> t(s);
    Rng rng(seed);
    for (double& v : t.data()) v = rng.uniform(0.5, 2.0);
    return t;
}

inline Tensor<double> gaussian(const Shape& s, std::uint64_t seed)
{
    Tensor<double> t(s);
    Rng rng(seed);
    for (double& v : t.data()) v = rng.normal();
    return t;
}

/// Strictly distinct values, so max pooling has no ties.
inline Tensor<double> distinct(const Shape& s, std::uint64_t seed)
{
    Tensor<double> t(s);
    std::vector<double> v(t.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.1 * static_cast<double>(i) - 1.0;
    Rng rng(seed);
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    for (std::size_t i = 0; i < v.size(); ++i) t[i] = v[i];
    return t;
}

inline const ad::Var<double>& P(const ad::VarMap<double>& p, const char* k)
{
    return p.at(k);
}

/// Every differentiable primitive, plus both model families end to end.
inline std::vector<GradCase> primitive_cases()
{
    using namespace ad;
    std::vector<GradCase> c;
    Shape s{3, 4};
    c.push_back({"add", {{"a", gaussian(s, 1)}, {"b", gaussian(s, 2)}}, [](auto& p) { return add(P(p, "a"), P(p, "b")); }});
    c.push_back({"sub", {{"a", gaussian(s, 3)}, {"b", gaussian(s, 4)}}, [](auto& p) { return sub(P(p, "a"), P(p, "b")); }});
    c.push_back({"mul", {{"a", gaussian(s, 5)}, {"b", gaussian(s, 6)}}, [](auto& p) { return mul(P(p, "a"), P(p, "b")); }});
    c.push_back({"div", {{"a", gaussian(s, 7)}, {"b", positive(s, 8)}}, [](auto& p) { return div(P(p, "a"), P(p, "b")); }});
    c.push_back({"scale", {{"a", gaussian(s, 9)}}, [](auto& p) { return scale(P(p, "a"), 1.7); }});
    c.push_back({"add_scalar", {{"a", gaussian(s, 10)}}, [](auto& p) { return add_scalar(P(p, "a"), -0.3); }});
    c.push_back({"neg", {{"a", gaussian(s, 11)}}, [](auto& p) { return neg(P(p, "a")); }});
    c.push_back({"relu", {{"a", away_from_zero(s, 12)}}, [](auto& p) { return relu(P(p, "a")); }});
    c.push_back({"tanh", {{"a", gaussian(s, 13)}}, [](auto& p) { return tanh(P(p, "a")); }});
    c.push_back({"silu", {{"a", gaussian(s, 14)}}, [](auto& p) { return silu(P(p, "a")); }});
    c.push_back({"softplus", {{"a", gaussian(s, 15)}}, [](auto& p) { return softplus(P(p, "a")); }});
    c.push_back({"exp", {{"a", gaussian(s, 16)}}, [](auto& p) { return exp(P(p, "a")); }});
    c.push_back({"log", {{"a", positive(s, 17)}}, [](auto& p) { return log(P(p, "a")); }});
    c.push_back({"abs", {{"a", away_from_zero(s, 18)}}, [](auto& p) { return abs(P(p, "a")); }});
    c.push_back({"square", {{"a", gaussian(s, 19)}}, [](auto& p) { return square(P(p, "a")); }});
    c.push_back({"sum", {{"a", gaussian(s, 20)}}, [](auto& p) { return sum(P(p, "a")); }});
    c.push_back({"mean", {{"a", gaussian(s, 21)}}, [](auto& p) { return mean(P(p, "a")); }});
    c.push_back({"reshape", {{"a", gaussian(s, 22)}}, [](auto& p) { return square(reshape(P(p, "a"), Shape{2, 6})); }});
    c.push_back({"concat_channels",
                 {{"a", gaussian({2, 2, 3, 3}, 23)}, {"b", gaussian({2, 1, 3, 3}, 24)}},
                 [](auto& p) { return concat_channels(P(p, "a"), P(p, "b")); }});
    c.push_back({"add_rowvec", {{"a", gaussian({2, 3, 4}, 25)}, {"b", gaussian({4}, 26)}},
                 [](auto& p) { return add_rowvec(P(p, "a"), P(p, "b")); }});
    c.push_back({"add_channels", {{"a", gaussian({2, 3, 4, 4}, 27)}, {"e", gaussian({2, 3}, 28)}},
                 [](auto& p) { return add_channels(P(p, "a"), P(p, "e")); }});
    c.push_back({"matmul", {{"a", gaussian({3, 5}, 29)}, {"b", gaussian({5, 4}, 30)}},
                 [](auto& p) { return matmul(P(p, "a"), P(p, "b")); }});
    c.push_back({"affine", {{"x", gaussian({3, 5}, 31)}, {"w", gaussian({5, 2}, 32)}, {"b", gaussian({2}, 33)}},
                 [](auto& p) { return affine(P(p, "x"), P(p, "w"), P(p, "b")); }});
    c.push_back({"conv2d_same",
                 {{"x", gaussian({2, 2, 5, 5}, 34)}, {"w", gaussian({3, 2, 3, 3}, 35)}, {"b", gaussian({3}, 36)}},
                 [](auto& p) { return conv2d(P(p, "x"), P(p, "w"), P(p, "b"), Padding::same); }});
    c.push_back({"conv2d_valid",
                 {{"x", gaussian({1, 2, 5, 4}, 37)}, {"w", gaussian({2, 2, 3, 3}, 38)}, {"b", gaussian({2}, 39)}},
                 [](auto& p) { return conv2d(P(p, "x"), P(p, "w"), P(p, "b"), Padding::valid); }});
    c.push_back({"avg_pool2", {{"x", gaussian({2, 2, 4, 4}, 40)}}, [](auto& p) { return avg_pool2(P(p, "x")); }});
    c.push_back({"max_pool2", {{"x", distinct({2, 2, 4, 4}, 41)}}, [](auto& p) { return max_pool2(P(p, "x")); }});
    c.push_back({"upsample2", {{"x", gaussian({2, 2, 3, 3}, 42)}}, [](auto& p) { return upsample2(P(p, "x")); }});
    c.push_back({"softmax", {{"x", gaussian({3, 5}, 43)}}, [](auto& p) { return softmax(P(p, "x")); }});
    c.push_back({"layer_norm", {{"x", gaussian({3, 6}, 44)}, {"g", gaussian({6}, 45)}, {"b", gaussian({6}, 46)}},
                 [](auto& p) { return layer_norm(P(p, "x"), P(p, "g"), P(p, "b")); }});

    ModelSpec mlp;
    mlp.arch = "mlp";
    mlp.widths = {6, 5};
    mlp.activation = "tanh";
    mlp.input_shape = {2, 3};
    mlp.output_shape = {4};
    mlp.conditioned = true;
    mlp.embed_freqs = 2;
    auto mp = init_params(mlp, 7);
    mp["x"] = gaussian({3, 2, 3}, 47);
    c.push_back({"mlp_model", mp, [mlp](auto& p) {
                     Tensor<double> cond({3}, {0.1, -0.4, 0.7});
                     return forward<double>(mlp, p, p.at("x"), cond);
                 }});

    ModelSpec conv;
    conv.arch = "conv";
    conv.widths = {2, 3};
    conv.activation = "silu";
    conv.input_shape = {1, 4, 4};
    conv.output_shape = {1, 4, 4};
    conv.conditioned = true;
    conv.embed_freqs = 1;
    auto cp = init_params(conv, 8);
    cp["x"] = gaussian({2, 1, 4, 4}, 48);
    c.push_back({"conv_model", cp, [conv](auto& p) {
                     Tensor<double> cond({2}, {0.3, -0.2});
                     return forward<double>(conv, p, p.at("x"), cond);
                 }});
    return c;
}

}  // namespace oodcert::testing
