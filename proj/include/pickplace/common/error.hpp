#pragma once

#include <stdexcept>
#include <string>

namespace pickplace {

/// Invalid arguments when building a body, network or configuration object.
struct ConstructionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Raised when particle positions leave the sane range.
struct SimulationInstability : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Backward pass called with a cache that does not belong to the current parameters.
struct StaleCacheError : std::logic_error {
  using std::logic_error::logic_error;
};

/// NaN or infinite values in losses or gradients.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Corrupted, truncated or incompatible binary record.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace pickplace
