#pragma once

#include <cmath>
#include <utility>

#include "uqe/errors.hpp"

namespace uqe {

// Brent's method on [a,b]. Requires a sign change; throws quadrature_failure
// otherwise (callers bracket roots of CDF-like functions).
template <typename F>
double brent_root(F&& f, double a, double b, double tol = 1e-10,
                  int max_iter = 200) {
  double fa = f(a), fb = f(b);
  require(std::isfinite(fa) && std::isfinite(fb), ErrorKind::quadrature_failure,
          "brent_root: function not finite at bracket endpoints");
  if (fa == 0.0) return a;
  if (fb == 0.0) return b;
  require(fa * fb < 0.0, ErrorKind::quadrature_failure,
          "brent_root: root not bracketed");

  if (std::fabs(fa) < std::fabs(fb)) {
    std::swap(a, b);
    std::swap(fa, fb);
  }
  double c = a, fc = fa, d = b - a, s = b, fs = fb;
  bool mflag = true;

  for (int it = 0; it < max_iter; ++it) {
    if (fb == 0.0 || std::fabs(b - a) < tol) return b;
    if (fa != fc && fb != fc) {
      // inverse quadratic interpolation
      s = a * fb * fc / ((fa - fb) * (fa - fc)) +
          b * fa * fc / ((fb - fa) * (fb - fc)) +
          c * fa * fb / ((fc - fa) * (fc - fb));
    } else {
      // secant
      s = b - fb * (b - a) / (fb - fa);
    }
    const double lo = 0.25 * (3.0 * a + b);
    const bool out_of_range = (s < std::fmin(lo, b)) || (s > std::fmax(lo, b));
    if (out_of_range || (mflag && std::fabs(s - b) >= 0.5 * std::fabs(b - c)) ||
        (!mflag && std::fabs(s - b) >= 0.5 * std::fabs(c - d)) ||
        (mflag && std::fabs(b - c) < tol) ||
        (!mflag && std::fabs(c - d) < tol)) {
      s = 0.5 * (a + b);
      mflag = true;
    } else {
      mflag = false;
    }
    fs = f(s);
    d = c;
    c = b;
    fc = fb;
    if (fa * fs < 0.0) {
      b = s;
      fb = fs;
    } else {
      a = s;
      fa = fs;
    }
    if (std::fabs(fa) < std::fabs(fb)) {
      std::swap(a, b);
      std::swap(fa, fb);
    }
  }
  return b;
}

}  // namespace uqe
