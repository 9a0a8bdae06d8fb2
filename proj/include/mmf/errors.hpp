#pragma once

#include <stdexcept>
#include <string>

namespace mmf {

// Invalid configuration or unusable CLI input. CLI exit code 1.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent data (manifests, blobs, labels). CLI exit code 2.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dimension/shape mismatch between operands.
struct ShapeError : DataError {
  explicit ShapeError(const std::string& msg) : DataError(msg) {}
};

// Numerical failure: divergence, NaN gradients, domain violations. CLI exit code 3.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mmf
