#pragma once

#include <stdexcept>
#include <string>

namespace uqe {

// Failure taxonomy shared by the library, the Monte Carlo harness (which
// tallies failures by kind), and the CLI (which maps kinds to exit codes).
enum class ErrorKind {
  invalid_input,         // bad data or configuration
  estimation_failure,    // non-convergence, separation, singular systems
  weak_intervention,     // |T1n| below the instability threshold
  degenerate_density,    // f_Y(y_tau) estimate too small to divide by
  degenerate_variance,   // nonpositive variance estimate
  extrapolation,         // evaluation outside the supported range
  quadrature_failure,    // root not bracketed / integral did not converge
  internal_consistency,  // a mathematical identity failed beyond tolerance
  unsupported_operation, // operation not defined for this model kind
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  static const char* kind_name(ErrorKind k) {
    switch (k) {
      case ErrorKind::invalid_input: return "invalid_input";
      case ErrorKind::estimation_failure: return "estimation_failure";
      case ErrorKind::weak_intervention: return "weak_intervention";
      case ErrorKind::degenerate_density: return "degenerate_density";
      case ErrorKind::degenerate_variance: return "degenerate_variance";
      case ErrorKind::extrapolation: return "extrapolation";
      case ErrorKind::quadrature_failure: return "quadrature_failure";
      case ErrorKind::internal_consistency: return "internal_consistency";
      case ErrorKind::unsupported_operation: return "unsupported_operation";
    }
    return "unknown";
  }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void throw_error(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw_error(kind, what);
}

}  // namespace uqe
