#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace dtwin {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes do not line up; the message names the graph node.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// API called in the wrong order (backward before forward, encoding before
// fitting, prediction on an untrained model, missing stage context).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameter or option value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of a function.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Non-finite values produced during training or optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

struct Diagnostic {
  std::size_t row = 0;  // 1-based data row, 0 when not row-specific
  std::string field;
  std::string message;
};

// One or more records failed validation.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<Diagnostic> diagnostics);

  const std::vector<Diagnostic>& diagnostics() const noexcept { return diagnostics_; }

 private:
  std::vector<Diagnostic> diagnostics_;
};

// Bundle file problems: bad magic, version mismatch, digest mismatch.
class BundleError : public Error {
 public:
  using Error::Error;
};

}  // namespace dtwin
