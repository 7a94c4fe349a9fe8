#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "uqe/errors.hpp"
#include "uqe/math/normal.hpp"

namespace uqe {

using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Gaussian kernel: K = phi, K' = -u phi(u), K'' = (u^2 - 1) phi(u).
// ---------------------------------------------------------------------------
enum class KernelFamily { gaussian };

struct KernelSpec {
  KernelFamily family = KernelFamily::gaussian;

  double eval(double u, int order) const {
    require(order >= 0 && order <= 2, ErrorKind::invalid_input,
            "kernel_eval: order must be 0, 1 or 2");
    const double phi = normal_pdf(u);
    switch (order) {
      case 0: return phi;
      case 1: return -u * phi;
      default: return (u * u - 1.0) * phi;
    }
  }
};

inline double kernel_eval(const KernelSpec& spec, double u, int order) {
  return spec.eval(u, order);
}

// ---------------------------------------------------------------------------
// Empirical quantile: left-continuous generalized inverse of the ECDF,
// y_hat = inf{ y : #(Y_i <= y)/n >= tau }, i.e. the ceil(n*tau)-th order stat.
// ---------------------------------------------------------------------------
inline double empirical_quantile(const VectorXd& values, double tau) {
  const auto n = values.size();
  require(n >= 1, ErrorKind::invalid_input, "empirical_quantile: empty sample");
  require(tau > 0.0 && tau < 1.0, ErrorKind::invalid_input,
          "empirical_quantile: tau must lie in (0,1)");
  std::vector<double> v(values.data(), values.data() + n);
  const auto k = static_cast<std::ptrdiff_t>(
      std::ceil(static_cast<double>(n) * tau)) - 1;
  const auto kk = std::clamp<std::ptrdiff_t>(k, 0, n - 1);
  std::nth_element(v.begin(), v.begin() + kk, v.end());
  return v[static_cast<std::size_t>(kk)];
}

// ---------------------------------------------------------------------------
// Kernel density estimate f(y) = n^-1 sum K((Y_i - y)/h)/h and its derivative
// f'(y) = -(n h^2)^-1 sum K'((Y_i - y)/h).
// ---------------------------------------------------------------------------
inline double kde(const VectorXd& values, double y, double h,
                  const KernelSpec& spec = {}) {
  require(h > 0.0, ErrorKind::invalid_input, "kde: bandwidth must be positive");
  const auto n = values.size();
  require(n >= 1, ErrorKind::invalid_input, "kde: empty sample");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    acc += spec.eval((values[i] - y) / h, 0);
  }
  return acc / (static_cast<double>(n) * h);
}

inline double kde_derivative(const VectorXd& values, double y, double h,
                             const KernelSpec& spec = {}) {
  require(h > 0.0, ErrorKind::invalid_input,
          "kde_derivative: bandwidth must be positive");
  const auto n = values.size();
  require(n >= 1, ErrorKind::invalid_input, "kde_derivative: empty sample");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    acc += spec.eval((values[i] - y) / h, 1);
  }
  return -acc / (static_cast<double>(n) * h * h);
}

inline double sample_sd(const VectorXd& values) {
  const auto n = values.size();
  require(n >= 2, ErrorKind::invalid_input, "sample_sd: need n >= 2");
  const double mean = values.mean();
  const double ss = (values.array() - mean).square().sum();
  return std::sqrt(ss / static_cast<double>(n - 1));
}

// Silverman's rule of thumb, h = 1.06 * sd * n^(-1/5) (sd uses n-1).
inline double silverman(const VectorXd& values) {
  const double sd = sample_sd(values);
  require(sd > 0.0, ErrorKind::invalid_input,
          "silverman: sample has zero variance");
  return 1.06 * sd * std::pow(static_cast<double>(values.size()), -0.2);
}

enum class BandwidthKind { silverman, fixed };

struct BandwidthRule {
  BandwidthKind kind = BandwidthKind::silverman;
  double h = 0.0;  // used when fixed

  double resolve(const VectorXd& values) const {
    if (kind == BandwidthKind::fixed) {
      require(h > 0.0, ErrorKind::invalid_input,
              "bandwidth: fixed h must be positive");
      return h;
    }
    return silverman(values);
  }
};

// Influence value of the tau-quantile: (tau - 1{y_i <= y_tau}) / f(y_tau).
inline double quantile_influence(double y_i, double y_tau, double f_hat,
                                 double tau) {
  require(f_hat > 0.0, ErrorKind::invalid_input,
          "quantile_influence: density must be positive");
  const double ind = (y_i <= y_tau) ? 1.0 : 0.0;
  return (tau - ind) / f_hat;
}

}  // namespace uqe
