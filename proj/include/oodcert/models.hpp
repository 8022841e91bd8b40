// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oodcert/checkpoint.hpp"
#include "oodcert/ops.hpp"
#include "oodcert/rng.hpp"

namespace oodcert {

//---------------------------------------------------------------------------//
/*!
 * Architecture description.
 *
 * "mlp": flattens the input, applies one dense layer per entry of widths,
 * then a linear output layer. Empty widths give a single affine map.
 *
 * "conv": encoder-decoder with one level per entry of widths (channel
 * count), two 3x3 convolutions per level, 2x2 average pooling between
 * levels, nearest upsampling with skip concatenation on the way up, and a
 * 1x1 output convolution. Input and output are [C, H, W] with equal H, W.
 *
 * When conditioned, a scalar per sample (log-noise or lead time) is lifted
 * to Fourier features and a learned projection is added per channel after
 * the first layer of every block.
 */
struct ModelSpec {
    std::string arch = "mlp";
    std::vector<std::size_t> widths;
    std::string activation = "silu";
    Shape input_shape;
    Shape output_shape;
    bool conditioned = false;
    std::size_t embed_freqs = 4;
    bool zero_final = false;

    std::size_t embed_dim() const { return 1 + 2 * embed_freqs; }

    void validate() const
    {
        if (input_shape.empty() || output_shape.empty()) throw ConfigError("model: empty input/output shape");
        if (activation != "silu" && activation != "tanh" && activation != "relu") {
            throw ConfigError("model: unknown activation '" + activation + "'");
        }
        if (arch == "mlp") return;
        if (arch != "conv") throw ConfigError("model: unknown architecture '" + arch + "'");
        if (widths.empty()) throw ConfigError("conv model needs at least one level");
        if (input_shape.size() != 3 || output_shape.size() != 3 || input_shape[1] != output_shape[1]
            || input_shape[2] != output_shape[2]) {
            throw ConfigError("conv model needs [C,H,W] input/output with matching H, W");
        }
        std::size_t div = std::size_t{1} << (widths.size() - 1);
        if (input_shape[1] % div || input_shape[2] % div) {
            throw ConfigError("conv model: grid not divisible by 2^(levels-1)");
        }
    }
};

inline void to_json(json& j, const ModelSpec& s)
{
    j = json{{"arch", s.arch},
             {"widths", s.widths},
             {"activation", s.activation},
             {"input_shape", s.input_shape},
             {"output_shape", s.output_shape},
             {"conditioned", s.conditioned},
             {"embed_freqs", s.embed_freqs},
             {"zero_final", s.zero_final}};
}

inline void from_json(const json& j, ModelSpec& s)
{
    j.at("arch").get_to(s.arch);
    j.at("widths").get_to(s.widths);
    j.at("activation").get_to(s.activation);
    j.at("input_shape").get_to(s.input_shape);
    j.at("output_shape").get_to(s.output_shape);
    j.at("conditioned").get_to(s.conditioned);
    s.embed_freqs = j.value("embed_freqs", std::size_t{4});
    s.zero_final = j.value("zero_final", false);
}

/// Per-dataset affine maps to zero mean / unit variance, one for inputs and
/// one for outputs.
struct Normalization {
    double x_mean = 0, x_std = 1, y_mean = 0, y_std = 1;

    template<class T>
    Tensor<T> norm_x(Tensor<T> t) const
    {
        for (T& v : t.data()) v = static_cast<T>((v - x_mean) / x_std);
        return t;
    }
    template<class T>
    Tensor<T> norm_y(Tensor<T> t) const
    {
        for (T& v : t.data()) v = static_cast<T>((v - y_mean) / y_std);
        return t;
    }
    template<class T>
    Tensor<T> denorm_y(Tensor<T> t) const
    {
        for (T& v : t.data()) v = static_cast<T>(v * y_std + y_mean);
        return t;
    }
};

inline void to_json(json& j, const Normalization& n)
{
    j = json{{"x_mean", n.x_mean}, {"x_std", n.x_std}, {"y_mean", n.y_mean}, {"y_std", n.y_std}};
}

inline void from_json(const json& j, Normalization& n)
{
    j.at("x_mean").get_to(n.x_mean);
    j.at("x_std").get_to(n.x_std);
    j.at("y_mean").get_to(n.y_mean);
    j.at("y_std").get_to(n.y_std);
}

namespace detail {

inline void add_dense(ParamSet<double>& p, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                      bool zero = false)
{
    Tensor<double> w({in, out});
    double s = 1.0 / std::sqrt(static_cast<double>(in));
    if (!zero)
        for (double& v : w.data()) v = s * rng.normal();
    p.emplace(name + ".w", std::move(w));
    p.emplace(name + ".b", Tensor<double>({out}));
}

inline void add_conv(ParamSet<double>& p, const std::string& name, std::size_t in, std::size_t out,
                     std::size_t k, Rng& rng, bool zero = false)
{
    Tensor<double> w({out, in, k, k});
    double s = 1.0 / std::sqrt(static_cast<double>(in * k * k));
    if (!zero)
        for (double& v : w.data()) v = s * rng.normal();
    p.emplace(name + ".w", std::move(w));
    p.emplace(name + ".b", Tensor<double>({out}));
}

inline std::string level(const char* prefix, std::size_t i)
{
    return prefix + std::to_string(i);
}

}  // namespace detail

/// Freshly initialized parameters: weights ~ N(0, 1/fan_in), zero biases.
inline ParamSet<double> init_params(const ModelSpec& spec, std::uint64_t seed)
{
    spec.validate();
    Rng rng(seed);
    ParamSet<double> p;
    std::size_t e = spec.embed_dim();
    if (spec.arch == "mlp") {
        std::size_t in = shape_size(spec.input_shape);
        for (std::size_t i = 0; i < spec.widths.size(); ++i) {
            std::string name = oodcert::detail::level("mlp.h", i);
            detail::add_dense(p, name, in, spec.widths[i], rng);
            if (spec.conditioned) detail::add_dense(p, name + ".emb", e, spec.widths[i], rng);
            in = spec.widths[i];
        }
        detail::add_dense(p, "mlp.out", in, shape_size(spec.output_shape), rng, spec.zero_final);
        return p;
    }

    const auto& ch = spec.widths;
    std::size_t levels = ch.size();
    std::size_t in = spec.input_shape[0];
    for (std::size_t i = 0; i < levels; ++i) {
        std::string name = oodcert::detail::level("enc", i);
        detail::add_conv(p, name + ".a", in, ch[i], 3, rng);
        detail::add_conv(p, name + ".b", ch[i], ch[i], 3, rng);
        if (spec.conditioned) detail::add_dense(p, name + ".emb", e, ch[i], rng);
        in = ch[i];
    }
    for (std::size_t i = levels - 1; i-- > 0;) {
        std::string name = oodcert::detail::level("dec", i);
        detail::add_conv(p, name + ".a", ch[i + 1] + ch[i], ch[i], 3, rng);
        detail::add_conv(p, name + ".b", ch[i], ch[i], 3, rng);
        if (spec.conditioned) detail::add_dense(p, name + ".emb", e, ch[i], rng);
    }
    detail::add_conv(p, "out", ch[0], spec.output_shape[0], 1, rng, spec.zero_final);
    return p;
}

inline std::size_t param_count(const ParamSet<double>& p)
{
    std::size_t n = 0;
    for (const auto& [_, t] : p) n += t.size();
    return n;
}

/// Fourier features [c, sin(2^k c), cos(2^k c)] of one scalar per sample.
template<class T>
Tensor<T> fourier_features(std::span<const T> cond, std::size_t freqs)
{
    std::size_t e = 1 + 2 * freqs;
    Tensor<T> f({cond.size(), e});
    for (std::size_t i = 0; i < cond.size(); ++i) {
        T c = cond[i];
        f[i * e] = c;
        for (std::size_t k = 0; k < freqs; ++k) {
            T w = static_cast<T>(std::ldexp(1.0, static_cast<int>(k)));
            f[i * e + 1 + 2 * k] = std::sin(w * c);
            f[i * e + 2 + 2 * k] = std::cos(w * c);
        }
    }
    return f;
}

namespace detail {

template<class T>
const ad::Var<T>& param(const ad::VarMap<T>& p, const std::string& name)
{
    auto it = p.find(name);
    if (it == p.end()) throw ConfigError("model parameter '" + name + "' missing");
    return it->second;
}

template<class T>
ad::Var<T> dense(const ad::VarMap<T>& p, const std::string& name, const ad::Var<T>& x)
{
    return ad::affine(x, param(p, name + ".w"), param(p, name + ".b"));
}

template<class T>
ad::Var<T> conv(const ad::VarMap<T>& p, const std::string& name, const ad::Var<T>& x)
{
    return ad::conv2d(x, param(p, name + ".w"), param(p, name + ".b"), ad::Padding::same);
}

}  // namespace detail

/// Forward pass on a batch x[B, ...input_shape]; cond holds one scalar per
/// sample and is required exactly when the spec is conditioned.
template<class T>
ad::Var<T> forward(const ModelSpec& spec, const ad::VarMap<T>& p, const ad::Var<T>& x,
                   const std::optional<Tensor<T>>& cond = std::nullopt)
{
    using namespace ad;
    const Shape& xs = x.shape();
    if (xs.size() != spec.input_shape.size() + 1
        || !std::equal(spec.input_shape.begin(), spec.input_shape.end(), xs.begin() + 1)) {
        throw ShapeError("model input " + shape_str(xs) + " does not match spec " + shape_str(spec.input_shape));
    }
    std::size_t batch = xs[0];
    if (spec.conditioned != cond.has_value()) {
        throw ConfigError(spec.conditioned ? "conditioned model needs a conditioning scalar"
                                           : "unconditioned model given a conditioning scalar");
    }
    std::optional<Var<T>> emb;
    if (cond) {
        if (cond->size() != batch) throw ShapeError("conditioning needs one scalar per sample");
        emb = constant(fourier_features<T>(cond->data(), spec.embed_freqs));
    }

    Shape out_shape = spec.output_shape;
    out_shape.insert(out_shape.begin(), batch);

    if (spec.arch == "mlp") {
        Var<T> h = reshape(x, Shape{batch, shape_size(spec.input_shape)});
        for (std::size_t i = 0; i < spec.widths.size(); ++i) {
            std::string name = oodcert::detail::level("mlp.h", i);
            h = oodcert::detail::dense(p, name, h);
            if (emb) h = add(h, oodcert::detail::dense(p, name + ".emb", *emb));
            h = activation(spec.activation, h);
        }
        return reshape(oodcert::detail::dense(p, "mlp.out", h), out_shape);
    }

    std::size_t levels = spec.widths.size();
    std::vector<Var<T>> skips;
    Var<T> h = x;
    for (std::size_t i = 0; i < levels; ++i) {
        std::string name = oodcert::detail::level("enc", i);
        h = oodcert::detail::conv(p, name + ".a", h);
        if (emb) h = add_channels(h, oodcert::detail::dense(p, name + ".emb", *emb));
        h = activation(spec.activation, h);
        h = activation(spec.activation, oodcert::detail::conv(p, name + ".b", h));
        if (i + 1 < levels) {
            skips.push_back(h);
            h = avg_pool2(h);
        }
    }
    for (std::size_t i = levels - 1; i-- > 0;) {
        std::string name = oodcert::detail::level("dec", i);
        h = concat_channels(upsample2(h), skips[i]);
        h = oodcert::detail::conv(p, name + ".a", h);
        if (emb) h = add_channels(h, oodcert::detail::dense(p, name + ".emb", *emb));
        h = activation(spec.activation, h);
        h = activation(spec.activation, oodcert::detail::conv(p, name + ".b", h));
    }
    return reshape(oodcert::detail::conv(p, "out", h), out_shape);
}

template<class T>
ad::VarMap<T> as_constants(const ParamSet<T>& p)
{
    ad::VarMap<T> out;
    for (const auto& [name, t] : p) out.emplace(name, ad::constant(t));
    return out;
}

//---------------------------------------------------------------------------//
/*!
 * Inference wrapper around a checkpoint.
 *
 * Inputs and outputs are in the normalized space unless noted. The object
 * is immutable after construction and may be shared across threads.
 */
class Model {
  public:
    explicit Model(const Checkpoint& ck)
        : spec_(ck.meta.at("model_spec").get<ModelSpec>()),
          params_(as_constants(ck.inference_params()))
    {
        spec_.validate();
        if (ck.meta.contains("normalization")) norm_ = ck.meta.at("normalization").get<Normalization>();
    }

    Model(ModelSpec spec, const ParamSet<double>& params, Normalization norm = {})
        : spec_(std::move(spec)), params_(as_constants(params)), norm_(norm)
    {
        spec_.validate();
    }

    const ModelSpec& spec() const { return spec_; }
    const Normalization& normalization() const { return norm_; }

    /// Normalized-space forward on x[B, ...input_shape].
    Tensor<double> apply(const Tensor<double>& x, const std::optional<Tensor<double>>& cond = std::nullopt) const
    {
        auto y = forward<double>(spec_, params_, ad::constant(x), cond).value();
        if (!y.all_finite()) throw NumericError("model produced non-finite output");
        return y;
    }

    /// Raw-space prediction for a single field.
    Tensor<double> predict(const Tensor<double>& x, std::optional<double> cond = std::nullopt) const
    {
        if (x.shape() != spec_.input_shape) {
            throw ShapeError("predict: input " + shape_str(x.shape()) + " expected " + shape_str(spec_.input_shape));
        }
        Shape bs = x.shape();
        bs.insert(bs.begin(), 1);
        std::optional<Tensor<double>> c;
        if (cond) c = Tensor<double>({1}, {*cond});
        auto y = apply(norm_.norm_x(x).reshaped(bs), c);
        return norm_.denorm_y(y.reshaped(spec_.output_shape));
    }

  private:
    ModelSpec spec_;
    ad::VarMap<double> params_;
    Normalization norm_;
};

/// Deterministic forward pass of a regression checkpoint on one raw input.
inline Tensor<double> predict(const Checkpoint& ck, const Tensor<double>& x, std::optional<double> cond = std::nullopt)
{
    return Model(ck).predict(x, cond);
}

}  // namespace oodcert
