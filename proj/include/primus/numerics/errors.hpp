#pragma once

#include <stdexcept>
#include <string>

namespace primus {

// Root of every error thrown by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor dimensions inside a numerical op.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Data whose shape violates a module contract (volume dims, grids).
class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, divergent training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class DegenerateInputError : public DomainError {
 public:
  using DomainError::DomainError;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

// Malformed binary or JSON files.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace primus
