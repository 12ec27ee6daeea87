#pragma once

#include <stdexcept>
#include <string>

namespace dimerlab {

enum class Errc {
  InvalidSpec,
  TooLarge,
  BudgetExceeded,
  DimensionMismatch,
  NumericalFailure,
  PairingImpossible,
  NotClockwiseOdd,
  RatioNotUnit,
  NotLiquidPhase,
  NewtonDivergence,
  QuadratureNotConverged,
  CoincidentPoints,
  InsufficientStatistics,
  InvariantViolation
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::InvalidSpec: return "InvalidSpec";
    case Errc::TooLarge: return "TooLarge";
    case Errc::BudgetExceeded: return "BudgetExceeded";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::NumericalFailure: return "NumericalFailure";
    case Errc::PairingImpossible: return "PairingImpossible";
    case Errc::NotClockwiseOdd: return "NotClockwiseOdd";
    case Errc::RatioNotUnit: return "RatioNotUnit";
    case Errc::NotLiquidPhase: return "NotLiquidPhase";
    case Errc::NewtonDivergence: return "NewtonDivergence";
    case Errc::QuadratureNotConverged: return "QuadratureNotConverged";
    case Errc::CoincidentPoints: return "CoincidentPoints";
    case Errc::InsufficientStatistics: return "InsufficientStatistics";
    case Errc::InvariantViolation: return "InvariantViolation";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc c, const std::string& msg)
      : std::runtime_error(std::string(errc_name(c)) + ": " + msg), code_(c) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

}  // namespace dimerlab
