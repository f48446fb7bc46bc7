#pragma once

#include <stdexcept>
#include <string>

namespace cecg {

// Every error carries "module.operation: message" so the CLI can report where
// a run failed.
class Error : public std::runtime_error {
 public:
  Error(const std::string& where, const std::string& what)
      : std::runtime_error(where + ": " + what), where_(where) {}

  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

// Bad shapes, configs, band edges, malformed files. CLI exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated files and checkpoints.
class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// NaN/Inf in activations or losses. CLI exit code 2.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace cecg
