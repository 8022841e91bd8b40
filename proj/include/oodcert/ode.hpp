// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "oodcert/error.hpp"

namespace oodcert::ode {

enum class Method { rk38, rk45_fixed };

inline Method parse_method(const std::string& s)
{
    if (s == "rk38") return Method::rk38;
    if (s == "rk45-fixed") return Method::rk45_fixed;
    throw ConfigError("unknown ODE method '" + s + "' (expected rk38 or rk45-fixed)");
}

inline std::string method_name(Method m)
{
    return m == Method::rk38 ? "rk38" : "rk45-fixed";
}

using State = std::vector<double>;

namespace detail {

/// out = y + h * sum_i c_i k_i
inline void combine(State& out, const State& y, double h, std::initializer_list<std::pair<double, const State*>> terms)
{
    out = y;
    for (auto [c, k] : terms) {
        if (c == 0.0) continue;
        double hc = h * c;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += hc * (*k)[i];
    }
}

inline void check_finite(const State& y, double t)
{
    for (double v : y)
        if (!std::isfinite(v)) throw NumericError("ODE state became non-finite at t=" + std::to_string(t));
}

}  // namespace detail

//---------------------------------------------------------------------------//
/*!
 * Fixed-step explicit Runge-Kutta integration from t0 to t1 (either
 * direction) in \p steps uniform steps.
 *
 * rhs(t, y) returns dy/dt. observe(k, t_k, y_k, f_k) is called at the start
 * of every step with the first-stage slope f_k = rhs(t_k, y_k), and once
 * more at t1 with k = steps and an empty slope.
 *
 * rk38 is Kutta's 3/8 rule; rk45-fixed advances with the fifth-order
 * Dormand-Prince weights and no error control.
 */
template<class Rhs, class Observer>
State integrate(Method method, Rhs&& rhs, State y, double t0, double t1, std::size_t steps, Observer&& observe)
{
    if (steps < 1) throw ConfigError("ODE integration needs at least one step");
    double h = (t1 - t0) / static_cast<double>(steps);
    State k1, k2, k3, k4, k5, k6, w;
    for (std::size_t n = 0; n < steps; ++n) {
        double t = t0 + static_cast<double>(n) * h;
        k1 = rhs(t, y);
        observe(n, t, static_cast<const State&>(y), static_cast<const State&>(k1));
        if (method == Method::rk38) {
            detail::combine(w, y, h, {{1.0 / 3, &k1}});
            k2 = rhs(t + h / 3, w);
            detail::combine(w, y, h, {{-1.0 / 3, &k1}, {1.0, &k2}});
            k3 = rhs(t + 2 * h / 3, w);
            detail::combine(w, y, h, {{1.0, &k1}, {-1.0, &k2}, {1.0, &k3}});
            k4 = rhs(t + h, w);
            detail::combine(y, State(y), h, {{1.0 / 8, &k1}, {3.0 / 8, &k2}, {3.0 / 8, &k3}, {1.0 / 8, &k4}});
        } else {
            detail::combine(w, y, h, {{1.0 / 5, &k1}});
            k2 = rhs(t + h / 5, w);
            detail::combine(w, y, h, {{3.0 / 40, &k1}, {9.0 / 40, &k2}});
            k3 = rhs(t + 3 * h / 10, w);
            detail::combine(w, y, h, {{44.0 / 45, &k1}, {-56.0 / 15, &k2}, {32.0 / 9, &k3}});
            k4 = rhs(t + 4 * h / 5, w);
            detail::combine(w, y, h,
                            {{19372.0 / 6561, &k1}, {-25360.0 / 2187, &k2}, {64448.0 / 6561, &k3}, {-212.0 / 729, &k4}});
            k5 = rhs(t + 8 * h / 9, w);
            detail::combine(w, y, h,
                            {{9017.0 / 3168, &k1},
                             {-355.0 / 33, &k2},
                             {46732.0 / 5247, &k3},
                             {49.0 / 176, &k4},
                             {-5103.0 / 18656, &k5}});
            k6 = rhs(t + h, w);
            detail::combine(y, State(y), h,
                            {{35.0 / 384, &k1},
                             {500.0 / 1113, &k3},
                             {125.0 / 192, &k4},
                             {-2187.0 / 6784, &k5},
                             {11.0 / 84, &k6}});
        }
        detail::check_finite(y, t + h);
    }
    observe(steps, t1, static_cast<const State&>(y), State{});
    return y;
}

template<class Rhs>
State integrate(Method method, Rhs&& rhs, State y, double t0, double t1, std::size_t steps)
{
    return integrate(method, std::forward<Rhs>(rhs), std::move(y), t0, t1, steps,
                     [](std::size_t, double, const State&, const State&) {});
}

}  // namespace oodcert::ode
