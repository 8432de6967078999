#pragma once

#include <stdexcept>
#include <string>

namespace semdiff {

// Exception hierarchy. The CLI maps each family onto a process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or index contract violated by the caller.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid parameter values (schedules, channel configs, coefficients, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Bad or missing configuration keys. Exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed, truncated or missing dataset / checkpoint files. Exit code 3.
class DataError : public Error {
 public:
  enum class Kind { kIo, kBadMagic, kTruncated, kDimOverflow, kBadLength, kFormat };

  DataError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

// Non-finite loss or similar numerical breakdown. Exit code 4.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace semdiff
