#pragma once

#include <stdexcept>
#include <string>

namespace padtts {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform for an op.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid user-supplied configuration, file contents or arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Invalid value supplied to an operation (out-of-range PAD, bad onehot...).
class ValueError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Malformed or truncated file.
class FormatError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Numerical failure during a run (NaN scores, non-finite activations).
class NumericError : public Error {
 public:
  using Error::Error;
};

// Stage schedule violated.
class StageError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

}  // namespace padtts
