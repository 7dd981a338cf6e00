#pragma once

#include <stdexcept>
#include <string>

namespace mmcl {

// Invalid configuration: non-SPD covariance, unsatisfiable thresholds,
// unknown config keys, missing spec/mixer linkage.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad call arguments: empty batches, mismatched shapes, out-of-range counts.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values, failed factorizations, singular solves.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operation invoked in the wrong state (backward without a forward cache,
// Adam step on an uninitialized optimizer).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A bounded retry loop ran out of attempts.
class ResourceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mmcl
