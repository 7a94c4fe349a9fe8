#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "uqe/errors.hpp"

namespace uqe {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Observed sample (Y, D, Z, X). Column 1 of z is the intervention coordinate.
// x may have zero columns.
struct Dataset {
  VectorXd y;  // outcome
  VectorXd d;  // binary treatment
  MatrixXd z;  // instruments, n x d_Z with d_Z >= 1
  MatrixXd x;  // covariates, n x d_X (d_X may be 0)

  Eigen::Index n() const { return y.size(); }
  Eigen::Index dim_z() const { return z.cols(); }
  Eigen::Index dim_x() const { return x.cols(); }

  // Concatenated (z, x) row for observation i.
  VectorXd zx_row(Eigen::Index i) const {
    VectorXd out(dim_z() + dim_x());
    out.head(dim_z()) = z.row(i);
    if (dim_x() > 0) out.tail(dim_x()) = x.row(i);
    return out;
  }

  void validate() const {
    const auto m = n();
    require(m >= 1, ErrorKind::invalid_input, "dataset: empty");
    require(d.size() == m && z.rows() == m && (x.size() == 0 || x.rows() == m),
            ErrorKind::invalid_input, "dataset: column lengths differ");
    require(z.cols() >= 1, ErrorKind::invalid_input,
            "dataset: needs at least one instrument column z1");
    require(y.allFinite() && z.allFinite() && (x.size() == 0 || x.allFinite()),
            ErrorKind::invalid_input, "dataset: non-finite values");
    bool any0 = false, any1 = false;
    for (Eigen::Index i = 0; i < m; ++i) {
      const double di = d[i];
      require(di == 0.0 || di == 1.0, ErrorKind::invalid_input,
              "dataset: d must be 0/1 (row " + std::to_string(i + 1) + ")");
      any0 |= (di == 0.0);
      any1 |= (di == 1.0);
    }
    require(any0 && any1, ErrorKind::invalid_input,
            "dataset: treatment has no variation");
  }

  // Minimum-size rule given the number of model parameters to be fitted.
  void require_size_for(Eigen::Index n_params) const {
    const auto need = std::max<Eigen::Index>(10, n_params + 1);
    require(n() >= need, ErrorKind::invalid_input,
            "dataset: n = " + std::to_string(n()) + " below required " +
                std::to_string(need));
  }
};

}  // namespace uqe
