#pragma once

#include <stdexcept>
#include <string>

namespace advlab {

/// Tensor extents do not agree with what an operation requires.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A documented precondition of an operation was violated.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed on-disk data (dataset records, checkpoints, histories).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Run configuration failed schema validation.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace advlab
