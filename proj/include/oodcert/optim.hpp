// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "oodcert/autodiff.hpp"

namespace oodcert {

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

template<class T>
struct OptState {
    AdamHyper hyper;
    ParamSet<T> m;
    ParamSet<T> v;
    std::uint64_t step = 0;
};

/// Adam with decoupled weight decay (AdamW) and bias-corrected moments.
/// Moments are created on the first step. \p lr overrides hyper.lr when
/// positive, which is how schedules feed in.
template<class T>
void adam_step(ParamSet<T>& params, const ParamSet<T>& grads, OptState<T>& state, double lr = -1)
{
    const AdamHyper& h = state.hyper;
    if (lr < 0) lr = h.lr;
    if (grads.size() != params.size()) throw ShapeError("adam_step: parameter/gradient sets differ");
    ++state.step;
    double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
    for (auto& [name, p] : params) {
        auto git = grads.find(name);
        if (git == grads.end() || git->second.shape() != p.shape()) {
            throw ShapeError("adam_step: gradient shape mismatch for " + name);
        }
        const Tensor<T>& g = git->second;
        auto& m = state.m.try_emplace(name, p.shape()).first->second;
        auto& v = state.v.try_emplace(name, p.shape()).first->second;
        if (m.shape() != p.shape()) throw ShapeError("adam_step: moment shape mismatch for " + name);
        for (std::size_t i = 0; i < p.size(); ++i) {
            double gi = g[i];
            double mi = h.beta1 * m[i] + (1 - h.beta1) * gi;
            double vi = h.beta2 * v[i] + (1 - h.beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            double update = (mi / bc1) / (std::sqrt(vi / bc2) + h.eps);
            double pi = p[i];
            pi -= lr * (update + h.weight_decay * pi);
            p[i] = static_cast<T>(pi);
        }
    }
}

/// shadow <- decay * shadow + (1 - decay) * params. Accepts the closed
/// endpoints 0 and 1 as the identity cases; anything else outside (0, 1)
/// is rejected.
template<class T>
ParamSet<T> ema_update(const ParamSet<T>& shadow, const ParamSet<T>& params, double decay)
{
    if (!(decay >= 0.0 && decay <= 1.0)) throw ConfigError("ema decay must lie in [0, 1]");
    ParamSet<T> out;
    for (const auto& [name, p] : params) {
        auto it = shadow.find(name);
        if (it == shadow.end() || it->second.shape() != p.shape()) {
            throw ShapeError("ema_update: shadow missing or misshaped for " + name);
        }
        Tensor<T> s = it->second;
        for (std::size_t i = 0; i < s.size(); ++i) {
            s[i] = static_cast<T>(decay * s[i] + (1.0 - decay) * p[i]);
        }
        out.emplace(name, std::move(s));
    }
    return out;
}

/// Learning rate at \p step of \p total under a constant or cosine schedule.
inline double scheduled_lr(const std::string& schedule, double base, std::uint64_t step, std::uint64_t total)
{
    if (schedule == "constant") return base;
    if (schedule == "cosine") {
        double frac = total ? static_cast<double>(step) / static_cast<double>(total) : 1.0;
        return base * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(frac, 1.0)));
    }
    throw ConfigError("unknown lr schedule '" + schedule + "'");
}

template<class U, class T>
ParamSet<U> cast_params(const ParamSet<T>& p)
{
    ParamSet<U> out;
    for (const auto& [name, t] : p) out.emplace(name, t.template cast<U>());
    return out;
}

}  // namespace oodcert
