#pragma once

#include <stdexcept>
#include <string>

namespace driftalign {

// Base for every error raised by the library. Subclasses let callers (the CLI
// in particular) map failures onto exit codes without string matching.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A value violates a domain invariant (drift bound, grid, monotonicity).
class ConstraintError : public Error {
 public:
  using Error::Error;
};

// Malformed or unsupported file content.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Bad configuration or argument combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite values during training or inference.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace driftalign
