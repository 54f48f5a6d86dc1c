// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace galore {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class DimensionError : public Error {
public:
  using Error::Error;
};

/// A parameter is outside its documented domain.
class ParameterError : public Error {
public:
  using Error::Error;
};

/// An iterative routine exhausted its iteration budget.
class ConvergenceError : public Error {
public:
  using Error::Error;
};

/// Non-finite values reached a numeric routine.
class NumericError : public Error {
public:
  explicit NumericError(const std::string &what, std::size_t step = 0)
      : Error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

private:
  std::size_t step_;
};

/// Simulated ranks disagree on shapes or schedule.
class ProtocolError : public Error {
public:
  using Error::Error;
};

/// Malformed experiment configuration.
class ConfigError : public Error {
public:
  using Error::Error;
};

} // namespace galore
