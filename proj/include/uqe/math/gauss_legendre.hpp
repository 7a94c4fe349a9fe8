#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace uqe {

// Gauss-Legendre nodes/weights on [-1,1], computed once by Newton iteration
// on the Legendre recurrence. N=64 resolves Gaussian-scale integrands on
// panels of a few standard deviations to near machine precision.
template <int N = 64>
struct GaussLegendreRule {
  std::array<double, N> node{};
  std::array<double, N> weight{};

  GaussLegendreRule() {
    const int m = (N + 1) / 2;
    for (int i = 0; i < m; ++i) {
      // Chebyshev-like initial guess for the i-th positive root.
      double x = std::cos(M_PI * (i + 0.75) / (N + 0.5));
      double dp = 0.0;
      for (int it = 0; it < 100; ++it) {
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= N; ++k) {
          double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
          p0 = p1;
          p1 = p2;
        }
        dp = N * (x * p1 - p0) / (x * x - 1.0);
        double dx = p1 / dp;
        x -= dx;
        if (std::fabs(dx) < 1e-15) break;
      }
      node[i] = -x;
      node[N - 1 - i] = x;
      double w = 2.0 / ((1.0 - x * x) * dp * dp);
      weight[i] = w;
      weight[N - 1 - i] = w;
    }
  }
};

inline const GaussLegendreRule<64>& gl64() {
  static const GaussLegendreRule<64> rule;
  return rule;
}

// Composite Gauss-Legendre over [a,b] split into equal panels.
template <typename F>
double integrate(F&& f, double a, double b, int panels = 16) {
  if (a == b) return 0.0;
  const auto& rule = gl64();
  const double step = (b - a) / panels;
  double total = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double lo = a + p * step;
    const double mid = lo + 0.5 * step;
    const double half = 0.5 * step;
    double acc = 0.0;
    for (int i = 0; i < 64; ++i) {
      acc += rule.weight[i] * f(mid + half * rule.node[i]);
    }
    total += acc * half;
  }
  return total;
}

}  // namespace uqe
