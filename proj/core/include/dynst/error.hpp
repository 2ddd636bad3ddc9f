#pragma once

#include <stdexcept>
#include <string>

namespace dynst {

// Base of every error thrown by the library. Callers that only care about
// "something went wrong in dynst" catch this; the CLI maps subclasses to
// exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor/matrix shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// A training schedule that cannot reach its target (overshoot, zero-size
// prune steps, ...). Raised before any training starts.
class ScheduleError : public Error {
 public:
  using Error::Error;
};

// Malformed configuration file or flag value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// File could not be opened, read, written, or decoded.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace dynst
