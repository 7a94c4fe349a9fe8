#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "uqe/errors.hpp"

namespace uqe {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Polynomial sieve basis over a coordinate vector. With interactions the
// basis is all monomials of total degree <= degree; without, it is the
// constant plus per-coordinate powers (no cross terms). The first basis
// function is always the constant.
struct BasisSpec {
  int degree = 3;
  bool interactions = true;
  double lambda = 0.0;  // ridge penalty, constant term exempt
};

class MonomialBasis {
 public:
  MonomialBasis() = default;

  // degree 0 (constant-only) is permitted here for degenerate projections;
  // estimation configs validate degree >= 1.
  MonomialBasis(const BasisSpec& spec, int dims) : spec_(spec), dims_(dims) {
    require(spec.degree >= 0, ErrorKind::invalid_input,
            "basis: degree must be nonnegative");
    require(dims >= 1, ErrorKind::invalid_input, "basis: needs a coordinate");
    std::vector<int> expo(static_cast<std::size_t>(dims), 0);
    if (spec.interactions) {
      enumerate_total_degree(expo, 0, spec.degree);
    } else {
      exponents_.push_back(expo);  // constant
      for (int j = 0; j < dims; ++j) {
        for (int k = 1; k <= spec.degree; ++k) {
          std::vector<int> e(static_cast<std::size_t>(dims), 0);
          e[static_cast<std::size_t>(j)] = k;
          exponents_.push_back(e);
        }
      }
    }
  }

  int dims() const { return dims_; }
  Eigen::Index size() const {
    return static_cast<Eigen::Index>(exponents_.size());
  }
  const BasisSpec& spec() const { return spec_; }

  VectorXd row(const VectorXd& w) const {
    check_dims(w);
    VectorXd out(size());
    for (Eigen::Index j = 0; j < size(); ++j) {
      out[j] = monomial(w, exponents_[static_cast<std::size_t>(j)]);
    }
    return out;
  }

  // d/dw_coord of every basis function at w.
  VectorXd drow(const VectorXd& w, int coord) const {
    check_dims(w);
    VectorXd out(size());
    for (Eigen::Index j = 0; j < size(); ++j) {
      const auto& e = exponents_[static_cast<std::size_t>(j)];
      const int k = e[static_cast<std::size_t>(coord)];
      if (k == 0) {
        out[j] = 0.0;
        continue;
      }
      auto de = e;
      de[static_cast<std::size_t>(coord)] = k - 1;
      out[j] = k * monomial(w, de);
    }
    return out;
  }

 private:
  static double monomial(const VectorXd& w, const std::vector<int>& e) {
    double v = 1.0;
    for (std::size_t j = 0; j < e.size(); ++j) {
      for (int k = 0; k < e[j]; ++k) v *= w[static_cast<Eigen::Index>(j)];
    }
    return v;
  }

  void check_dims(const VectorXd& w) const {
    require(w.size() == dims_, ErrorKind::invalid_input,
            "basis: coordinate dimension mismatch");
  }

  // All exponent tuples with sum <= budget, ordered by total degree so the
  // constant comes first and pure powers of the first coordinate precede
  // mixed terms of the same degree.
  void enumerate_total_degree(std::vector<int>& expo, int pos, int budget) {
    for (int total = 0; total <= budget; ++total) {
      emit_of_degree(expo, pos, total);
    }
  }

  void emit_of_degree(std::vector<int>& expo, int pos, int remaining) {
    if (pos == dims_ - 1) {
      expo[static_cast<std::size_t>(pos)] = remaining;
      exponents_.push_back(expo);
      return;
    }
    for (int k = remaining; k >= 0; --k) {
      expo[static_cast<std::size_t>(pos)] = k;
      emit_of_degree(expo, pos + 1, remaining - k);
    }
    expo[static_cast<std::size_t>(pos)] = 0;
  }

  BasisSpec spec_;
  int dims_ = 0;
  std::vector<std::vector<int>> exponents_;
};

// Basis row in (p, x); the first coordinate is the (generated) regressor p.
inline VectorXd design_row(const MonomialBasis& basis, double p,
                           const VectorXd& x) {
  VectorXd w(1 + x.size());
  w[0] = p;
  if (x.size() > 0) w.tail(x.size()) = x;
  return basis.row(w);
}

inline MonomialBasis make_pw_basis(const BasisSpec& spec, Eigen::Index dim_x) {
  return MonomialBasis(spec, static_cast<int>(1 + dim_x));
}

struct SeriesFit {
  MonomialBasis basis;
  VectorXd b;     // coefficients in the original (unscaled) parameterization
  MatrixXd gram;  // n^-1 Phi' Phi, retained for projections
};

namespace detail {

// Solve (G + lambda * Itilde) b = g with Itilde the identity minus the
// constant slot. Columns are rescaled by their root mean square before
// factorization (exactly equivalent to the unscaled system). SPD fast path,
// eigen decomposition as fallback; rank deficiency is an error, never a
// silent extra regularization.
inline VectorXd solve_penalized(const MatrixXd& gram, const VectorXd& g,
                                double lambda) {
  const Eigen::Index J = gram.rows();
  VectorXd scale(J);
  for (Eigen::Index j = 0; j < J; ++j) {
    scale[j] = (j == 0) ? 1.0 : std::sqrt(std::max(gram(j, j), 0.0));
    if (!(scale[j] > 0.0)) scale[j] = 1.0;
  }
  MatrixXd A = gram;
  VectorXd rhs = g;
  for (Eigen::Index i = 0; i < J; ++i) {
    for (Eigen::Index j = 0; j < J; ++j) A(i, j) /= scale[i] * scale[j];
    rhs[i] /= scale[i];
    if (i > 0) A(i, i) += lambda / (scale[i] * scale[i]);
  }
  Eigen::LLT<MatrixXd> llt(A);
  VectorXd c;
  if (llt.info() == Eigen::Success) {
    c = llt.solve(rhs);
  } else {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(A);
    require(es.info() == Eigen::Success, ErrorKind::estimation_failure,
            "series: eigen decomposition failed, J = " + std::to_string(J));
    const VectorXd& ev = es.eigenvalues();
    const double emax = ev[J - 1];
    require(emax > 0.0 && ev[0] >= 1e-12 * emax, ErrorKind::estimation_failure,
            "series: singular system, basis dimension J = " +
                std::to_string(J));
    c = es.eigenvectors() *
        (es.eigenvectors().transpose() * rhs).cwiseQuotient(ev);
  }
  return c.cwiseQuotient(scale);
}

}  // namespace detail

// Penalized least squares b = (n^-1 Phi'Phi + lambda*Itilde)^-1 n^-1 Phi't.
// With lambda = 0 this is exact least squares.
inline SeriesFit ridge_fit(const MonomialBasis& basis, const MatrixXd& rows,
                           const VectorXd& target, double lambda) {
  const Eigen::Index n = rows.rows(), J = rows.cols();
  require(n > 0 && target.size() == n, ErrorKind::invalid_input,
          "ridge_fit: rows/target mismatch");
  require(J == basis.size(), ErrorKind::invalid_input,
          "ridge_fit: rows do not match basis");
  require(lambda >= 0.0, ErrorKind::invalid_input,
          "ridge_fit: lambda must be nonnegative");
  require(10 * J <= n, ErrorKind::estimation_failure,
          "ridge_fit: basis dimension J = " + std::to_string(J) +
              " exceeds the n/10 guardrail (n = " + std::to_string(n) + ")");
  SeriesFit fit;
  fit.basis = basis;
  fit.gram = (rows.transpose() * rows) / static_cast<double>(n);
  const VectorXd g = (rows.transpose() * target) / static_cast<double>(n);
  fit.b = detail::solve_penalized(fit.gram, g, lambda);
  return fit;
}

inline double predict(const SeriesFit& fit, double p, const VectorXd& x) {
  return design_row(fit.basis, p, x).dot(fit.b);
}

// d/dz1 of the fitted function through the generated regressor:
// (d design_row / dp)' b  *  dp/dz1.
inline double dpredict_dz1(const SeriesFit& fit, double p, const VectorXd& x,
                           double dp_dz1) {
  VectorXd w(1 + x.size());
  w[0] = p;
  if (x.size() > 0) w.tail(x.size()) = x;
  return fit.basis.drow(w, 0).dot(fit.b) * dp_dz1;
}

// Series projection estimating nu(Wt_i) = E[d log f_W / d z1 | Wt_i]:
//   nu_hat_i = -phi(Wt_i)' (sum phi phi')^-1 sum dphi/dz1,
// where dphi/dz1 goes through the generated regressor (chain rule), i.e.
// drows are (d phi / dp) * dp_dz1 per observation.
inline VectorXd log_density_deriv_projection(const MatrixXd& rows,
                                             const MatrixXd& drows_dz1,
                                             double lambda) {
  const Eigen::Index n = rows.rows(), J = rows.cols();
  require(drows_dz1.rows() == n && drows_dz1.cols() == J,
          ErrorKind::invalid_input, "projection: row shapes differ");
  require(10 * J <= n, ErrorKind::estimation_failure,
          "projection: basis dimension J = " + std::to_string(J) +
              " exceeds the n/10 guardrail");
  const MatrixXd gram = (rows.transpose() * rows) / static_cast<double>(n);
  const VectorXd mean_d = drows_dz1.colwise().mean();
  const VectorXd c = detail::solve_penalized(gram, mean_d, lambda);
  return -(rows * c);
}

}  // namespace uqe
