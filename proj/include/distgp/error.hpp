#pragma once

#include <stdexcept>
#include <string>

namespace distgp {

enum class ErrorKind {
  NotPositiveDefinite,
  ZeroDiagonal,
  ShapeMismatch,
  DimensionMismatch,
  NonScalarRoot,
  NonFinite,
  ZeroColumn,
  NonFiniteGradient,
  NonFiniteLoss,
  EmptyInput,
  ScanTooSmall,
  InvalidArgument,
  Config,
  Io,
};

const char* to_string(ErrorKind kind);

// Single exception type for the library; `kind()` lets callers (the CLI in
// particular) map failures onto exit codes without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace distgp
