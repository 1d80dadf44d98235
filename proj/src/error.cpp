#include "distgp/error.hpp"

namespace distgp {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorKind::ZeroDiagonal: return "ZeroDiagonal";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::NonScalarRoot: return "NonScalarRoot";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::ZeroColumn: return "ZeroColumn";
    case ErrorKind::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::ScanTooSmall: return "ScanTooSmall";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Config: return "ConfigError";
    case ErrorKind::Io: return "IoError";
  }
  return "Unknown";
}

}  // namespace distgp
