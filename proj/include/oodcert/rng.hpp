// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace oodcert {

//---------------------------------------------------------------------------//
/*!
 * Counter-based random stream.
 *
 * Every draw is a pure function of (key, counter), so a stream can be
 * recreated at any position and child streams can be derived for samples,
 * epochs or probes without sharing state. The mixing function is the
 * SplitMix64 finalizer applied to a Weyl sequence offset by the key.
 */
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : key_(mix(seed ^ 0x6a09e667f3bcc909ull)) {}

    /// Independent child stream identified by \p id.
    [[nodiscard]] Rng split(std::uint64_t id) const
    {
        Rng child(0);
        child.key_ = mix(key_ ^ mix(id + 0x9e3779b97f4a7c15ull));
        return child;
    }

    /// Draw at an explicit counter position, without advancing.
    [[nodiscard]] std::uint64_t at(std::uint64_t counter) const
    {
        return mix(key_ + (counter + 1) * 0x9e3779b97f4a7c15ull);
    }

    std::uint64_t next_u64() { return at(counter_++); }

    /// Uniform on [0, 1) with 53 bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer on the closed range [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi)
    {
        auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next_u64() % span);
    }

    /// Standard normal via Box-Muller; both values of a pair are used.
    double normal()
    {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        // u1 in (0, 1]
        double r = std::sqrt(-2.0 * std::log(1.0 - u1));
        double phi = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(phi);
        has_spare_ = true;
        return r * std::cos(phi);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// +1 or -1 with equal probability.
    double rademacher() { return (next_u64() >> 63) ? 1.0 : -1.0; }

    std::uint64_t counter() const { return counter_; }

  private:
    static std::uint64_t mix(std::uint64_t z)
    {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0;
    bool has_spare_ = false;
};

}  // namespace oodcert
