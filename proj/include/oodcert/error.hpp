// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace oodcert {

/// Invalid configuration, missing inputs, or incompatible shapes.
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Shape mismatch between operands. A ConfigError so the CLI maps it to the
/// same exit code.
class ShapeError : public ConfigError {
  public:
    using ConfigError::ConfigError;
};

/// Non-finite values, divergent training, or integration failure.
class NumericError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool cond, const std::string& what)
{
    if (!cond) throw ConfigError(what);
}

}  // namespace detail
}  // namespace oodcert
