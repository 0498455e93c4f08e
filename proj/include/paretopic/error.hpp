#pragma once

#include <stdexcept>
#include <string>

namespace paretopic {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad user input: invalid configuration values, inconsistent flags.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent data files (corpus, cache, checkpoint, topics).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Dimension mismatch between numeric operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or degenerate numerics encountered at runtime.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Network or remote-service failure.
class RemoteError : public Error {
 public:
  using Error::Error;
};

}  // namespace paretopic
