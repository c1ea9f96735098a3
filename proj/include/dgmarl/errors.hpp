#pragma once

#include <stdexcept>
#include <string>

namespace dgmarl {

/// Invalid configuration or incompatible shapes/dimensions.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// API misuse: out-of-range ids, empty inputs, non-scalar backward.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN/Inf encountered in a gradient, ratio or loss.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The communication graph violates the connectivity assumption.
class AssumptionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing, truncated or inconsistent checkpoint files.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dgmarl
