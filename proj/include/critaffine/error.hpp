#ifndef CRITAFFINE_ERROR_HPP
#define CRITAFFINE_ERROR_HPP

#include <stdexcept>
#include <string>

namespace critaffine {

/// Failure categories. Each maps onto one CLI exit code.
enum class ErrorKind {
  // validation (exit 2)
  NonCritical,
  Degenerate,
  MomentFailure,
  InvalidConfig,
  ConfigNotCoveredByG,
  NotInClass,
  LatticeZeroMismatch,
  DepthOverflow,
  // numerical (exit 3)
  QuadratureFailure,
  ExtrapolationDivergence,
  Truncated,
  NoPlateau,
  InconsistentEstimates,
  // data (exit 4)
  InsufficientSupport,
  // io (exit 1)
  Io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NonCritical: return "NonCritical";
    case ErrorKind::Degenerate: return "Degenerate";
    case ErrorKind::MomentFailure: return "MomentFailure";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::ConfigNotCoveredByG: return "ConfigNotCoveredByG";
    case ErrorKind::NotInClass: return "NotInClass";
    case ErrorKind::LatticeZeroMismatch: return "LatticeZeroMismatch";
    case ErrorKind::DepthOverflow: return "DepthOverflow";
    case ErrorKind::QuadratureFailure: return "QuadratureFailure";
    case ErrorKind::ExtrapolationDivergence: return "ExtrapolationDivergence";
    case ErrorKind::Truncated: return "Truncated";
    case ErrorKind::NoPlateau: return "NoPlateau";
    case ErrorKind::InconsistentEstimates: return "InconsistentEstimates";
    case ErrorKind::InsufficientSupport: return "InsufficientSupport";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NonCritical:
    case ErrorKind::Degenerate:
    case ErrorKind::MomentFailure:
    case ErrorKind::InvalidConfig:
    case ErrorKind::ConfigNotCoveredByG:
    case ErrorKind::NotInClass:
    case ErrorKind::LatticeZeroMismatch:
    case ErrorKind::DepthOverflow:
      return 2;
    case ErrorKind::QuadratureFailure:
    case ErrorKind::ExtrapolationDivergence:
    case ErrorKind::Truncated:
    case ErrorKind::NoPlateau:
    case ErrorKind::InconsistentEstimates:
      return 3;
    case ErrorKind::InsufficientSupport:
      return 4;
    case ErrorKind::Io:
      return 1;
  }
  return 1;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace critaffine

#endif  // CRITAFFINE_ERROR_HPP
