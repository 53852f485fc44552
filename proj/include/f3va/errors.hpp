#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace f3va {

/// Caller passed arguments that violate an operation's preconditions.
class RejectedInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A configuration (world parameters, run config, checkpoint layout) is invalid.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent data files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An operation was invoked in the wrong state (e.g. backward before forward).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Non-finite values appeared during integration or training.
class NumericalDivergence : public std::runtime_error {
 public:
  NumericalDivergence(const std::string& what, std::size_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace f3va
