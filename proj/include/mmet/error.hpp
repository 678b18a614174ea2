#pragma once

#include <stdexcept>
#include <string>

namespace mmet {

// Base of every error raised by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Caller violated an operation's precondition.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Invalid run or model configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Missing, unreadable or malformed data on disk.
class DataError : public Error {
 public:
  using Error::Error;
};

// A kernel produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Training state is inconsistent (e.g. a parameter without a gradient).
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Retrieval evaluation could not score any query.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

}  // namespace mmet
