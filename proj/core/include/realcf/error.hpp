#pragma once

#include <stdexcept>
#include <string>

namespace realcf {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration: shape mismatches, unknown names, bad hyperparameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Schema violations: missing columns, unknown features, bad categories.
class SchemaError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Malformed input files.
class ParseError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Non-finite values during evaluation.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Training diverged.
class TrainingError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace realcf
