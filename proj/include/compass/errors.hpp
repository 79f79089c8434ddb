#pragma once

#include <stdexcept>
#include <string>

namespace compass {

/// Base of every error raised by the library. The CLI maps ConfigError to
/// exit code 2 and everything else to 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Out-of-range or malformed configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Well-formed but unusable input data (duplicate points, shape mismatch, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition (planner bug, backward before
/// forward, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Numerical breakdown: failed factorization, non-finite values.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace compass
