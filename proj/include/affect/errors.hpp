#pragma once

#include <stdexcept>
#include <string>

namespace affect {

/// Tensor/layer dimension violations (mismatched extents, bad kernels, ...).
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Violated call contracts: non-scalar loss, class index out of range,
/// batch too small for a batch statistic, and the like.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Malformed input file content.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Unusable configuration values.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Missing or inconsistent dataset/checkpoint material.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite values where the math requires finite ones (NaN loss, ...).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace affect
