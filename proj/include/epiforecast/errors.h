#pragma once

#include <stdexcept>
#include <string>

namespace epi {

// Shape disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid hyperparameters, window sizes, unknown names.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or inconsistent input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/inf during training or an ill-posed numerical request.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Misuse of the tape (double backward, non-scalar root, detached root).
class AutogradError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace epi
