// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "oodcert/dataset.hpp"
#include "oodcert/optim.hpp"

namespace oodcert {

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 64;
    std::string lr_schedule = "cosine";
    AdamHyper adam;
    double ema_decay = 0.999;
    std::uint64_t seed = 0;
    std::string precision = "f64";
    std::string loss = "l1";

    void validate(std::size_t dataset_size) const
    {
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (batch_size < 1 || batch_size > dataset_size) {
            throw ConfigError("train: batch size " + std::to_string(batch_size) + " must lie in [1, "
                              + std::to_string(dataset_size) + "]");
        }
        if (precision != "f64" && precision != "f32") throw ConfigError("train: precision must be f32 or f64");
        if (loss != "l1" && loss != "l2") throw ConfigError("train: loss must be l1 or l2");
        if (lr_schedule != "constant" && lr_schedule != "cosine") throw ConfigError("train: unknown lr schedule");
        if (!(ema_decay >= 0 && ema_decay < 1)) throw ConfigError("train: ema decay must lie in [0, 1)");
    }
};

inline void to_json(json& j, const TrainConfig& c)
{
    j = json{{"epochs", c.epochs},
             {"batch_size", c.batch_size},
             {"lr_schedule", c.lr_schedule},
             {"lr", c.adam.lr},
             {"beta1", c.adam.beta1},
             {"beta2", c.adam.beta2},
             {"eps", c.adam.eps},
             {"weight_decay", c.adam.weight_decay},
             {"ema_decay", c.ema_decay},
             {"seed", c.seed},
             {"precision", c.precision},
             {"loss", c.loss}};
}

inline void from_json(const json& j, TrainConfig& c)
{
    j.at("epochs").get_to(c.epochs);
    j.at("batch_size").get_to(c.batch_size);
    j.at("lr_schedule").get_to(c.lr_schedule);
    j.at("lr").get_to(c.adam.lr);
    j.at("beta1").get_to(c.adam.beta1);
    j.at("beta2").get_to(c.adam.beta2);
    j.at("eps").get_to(c.adam.eps);
    j.at("weight_decay").get_to(c.adam.weight_decay);
    j.at("ema_decay").get_to(c.ema_decay);
    j.at("seed").get_to(c.seed);
    j.at("precision").get_to(c.precision);
    j.at("loss").get_to(c.loss);
}

template<class T>
struct TrainOutcome {
    ParamSet<T> params;
    ParamSet<T> ema;
    std::vector<double> loss_curve;  // mean minibatch loss per epoch
};

/// Gather rows idx of a [N, ...] tensor into a [len(idx), ...] batch.
template<class T>
Tensor<T> gather_rows(const Tensor<double>& all, std::span<const std::size_t> idx)
{
    std::size_t stride = all.size() / all.dim(0);
    Shape s = all.shape();
    s[0] = idx.size();
    Tensor<T> out(s);
    for (std::size_t k = 0; k < idx.size(); ++k)
        for (std::size_t j = 0; j < stride; ++j) out[k * stride + j] = static_cast<T>(all[idx[k] * stride + j]);
    return out;
}

//---------------------------------------------------------------------------//
/*!
 * Minibatch training loop.
 *
 * loss_fn(params, batch_indices, rng) returns a scalar Var. Each epoch
 * shuffles with its own stream, each step gets its own stream for noise,
 * so results depend only on the seed. The EMA decay is warmed up as
 * min(decay, (1 + step) / (10 + step)).
 */
template<class T, class LossFn>
TrainOutcome<T> train_loop(ParamSet<T> params, const TrainConfig& cfg, std::size_t n, LossFn&& loss_fn)
{
    cfg.validate(n);
    Rng root(cfg.seed);
    OptState<T> state;
    state.hyper = cfg.adam;
    TrainOutcome<T> out;
    out.ema = params;

    std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    std::uint64_t total = cfg.epochs * steps_per_epoch;
    std::vector<std::size_t> order(n);
    std::uint64_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle = root.split(2 * epoch);
        for (std::size_t i = n; i > 1; --i) {
            auto j = static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(order[i - 1], order[j]);
        }
        double epoch_loss = 0;
        for (std::size_t b = 0; b < steps_per_epoch; ++b) {
            std::size_t lo = b * cfg.batch_size, hi = std::min(n, lo + cfg.batch_size);
            std::span<const std::size_t> idx(order.data() + lo, hi - lo);
            Rng noise = root.split(2 * epoch + 1).split(b);
            std::pair<T, ParamSet<T>> vg;
            try {
                vg = ad::value_and_grad<T>([&](const ad::VarMap<T>& p) { return loss_fn(p, idx, noise); }, params);
            } catch (const NumericError& e) {
                throw NumericError(std::string("training diverged at epoch ") + std::to_string(epoch) + ": "
                                   + e.what());
            }
            if (!std::isfinite(static_cast<double>(vg.first))) {
                throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": loss is NaN");
            }
            adam_step(params, vg.second, state, scheduled_lr(cfg.lr_schedule, cfg.adam.lr, step, total));
            double d = std::min(cfg.ema_decay, (1.0 + static_cast<double>(step)) / (10.0 + static_cast<double>(step)));
            out.ema = ema_update(out.ema, params, d);
            epoch_loss += static_cast<double>(vg.first) * static_cast<double>(hi - lo);
            ++step;
        }
        out.loss_curve.push_back(epoch_loss / static_cast<double>(n));
    }
    out.params = std::move(params);
    return out;
}

/// Runs train_loop in the configured precision and packs a checkpoint.
template<class LossBuilder>
Checkpoint train_to_checkpoint(const ModelSpec& spec, const TrainConfig& cfg, std::size_t n, LossBuilder&& build,
                               json meta)
{
    auto init = init_params(spec, cfg.seed ^ 0x5eedull);
    Checkpoint ck;
    auto finish = [&](auto&& outcome) {
        ck.params = cast_params<double>(outcome.params);
        ck.ema = cast_params<double>(outcome.ema);
        meta["loss_curve"] = outcome.loss_curve;
    };
    if (cfg.precision == "f32") {
        finish(train_loop<float>(cast_params<float>(init), cfg, n, build(std::type_identity<float>{})));
        ck.dtype = "f32";
    } else {
        finish(train_loop<double>(init, cfg, n, build(std::type_identity<double>{})));
    }
    meta["model_spec"] = spec;
    meta["train_config"] = cfg;
    ck.meta = std::move(meta);
    return ck;
}

/// Fit a regression model on normalized (x, y) pairs with the L1 (default)
/// or squared loss. When \p lead_times is given the model is conditioned on
/// one scalar per sample.
inline Checkpoint train_regressor(ModelSpec spec, const Dataset& data, const TrainConfig& cfg,
                                  const std::vector<double>* lead_times = nullptr)
{
    spec.input_shape = data.input_shape();
    spec.output_shape = data.output_shape();
    spec.conditioned = lead_times != nullptr;
    spec.validate();
    if (lead_times && lead_times->size() != data.size()) throw ConfigError("one lead time per sample required");
    Tensor<double> xs = data.norm.norm_x(data.inputs);
    Tensor<double> ys = data.norm.norm_y(data.outputs);
    bool l1 = cfg.loss == "l1";

    const std::vector<double>* lead = lead_times;
    auto build = [&](auto tag) {
        using T = typename decltype(tag)::type;
        return [&](const ad::VarMap<T>& p, std::span<const std::size_t> idx, Rng&) {
                std::optional<Tensor<T>> cond;
                if (lead) {
                    Tensor<T> c({idx.size()});
                    for (std::size_t k = 0; k < idx.size(); ++k) c[k] = static_cast<T>((*lead)[idx[k]]);
                    cond = std::move(c);
                }
                auto pred = forward<T>(spec, p, ad::constant(gather_rows<T>(xs, idx)), cond);
                auto diff = ad::sub(pred, ad::constant(gather_rows<T>(ys, idx)));
                return ad::mean(l1 ? ad::abs(diff) : ad::square(diff));
        };
    };
    json meta{{"kind", "regressor"}, {"normalization", data.norm}, {"dataset", data.tag}};
    return train_to_checkpoint(spec, cfg, data.size(), build, std::move(meta));
}

}  // namespace oodcert
