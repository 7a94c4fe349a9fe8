#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "uqe/dataset.hpp"
#include "uqe/errors.hpp"
#include "uqe/math/normal.hpp"
#include "uqe/series_model.hpp"

namespace uqe {

enum class PsKind { logit, probit, series };

inline const char* ps_kind_name(PsKind k) {
  switch (k) {
    case PsKind::logit: return "logit";
    case PsKind::probit: return "probit";
    case PsKind::series: return "series";
  }
  return "?";
}

namespace link {

// L, L' and L'' of the index for each parametric link.
inline double cdf(PsKind k, double t) {
  return k == PsKind::logit ? 1.0 / (1.0 + std::exp(-t)) : normal_cdf(t);
}

inline double pdf(PsKind k, double t) {
  if (k == PsKind::logit) {
    const double p = 1.0 / (1.0 + std::exp(-t));
    return p * (1.0 - p);
  }
  return normal_pdf(t);
}

inline double dpdf(PsKind k, double t) {
  if (k == PsKind::logit) {
    const double p = 1.0 / (1.0 + std::exp(-t));
    return p * (1.0 - p) * (1.0 - 2.0 * p);
  }
  return -t * normal_pdf(t);
}

}  // namespace link

inline constexpr double k_ps_clamp = 1e-6;  // series probability clamp

// Fitted propensity model. Parametric kinds hold the index coefficients
// alpha = (intercept, z..., x...); the series kind holds a monomial fit in
// the raw (z, x) coordinates with predictions clamped away from {0,1}.
struct PsModel {
  PsKind kind = PsKind::probit;

  // parametric
  VectorXd alpha;
  int iterations = 0;
  double grad_norm = 0.0;
  std::vector<double> loglik_path;  // log-likelihood after each accepted step

  // series
  MonomialBasis basis;
  VectorXd coef;
  double clamp_rate = 0.0;

  Eigen::Index dim_w() const {
    return kind == PsKind::series ? basis.dims() : alpha.size() - 1;
  }
};

namespace detail {

inline VectorXd with_intercept(const VectorXd& zx) {
  VectorXd w(zx.size() + 1);
  w[0] = 1.0;
  w.tail(zx.size()) = zx;
  return w;
}

struct MleState {
  double loglik = 0.0;
  VectorXd grad;
  MatrixXd hess;  // expected information (positive definite form)
};

inline MleState mle_state(const Dataset& data, PsKind kind,
                          const VectorXd& alpha, bool with_derivs) {
  const Eigen::Index n = data.n(), p = alpha.size();
  MleState st;
  st.grad = VectorXd::Zero(p);
  st.hess = MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    VectorXd w = with_intercept(data.zx_row(i));
    const double t = w.dot(alpha);
    const double P = std::clamp(link::cdf(kind, t), 1e-12, 1.0 - 1e-12);
    const double di = data.d[i];
    st.loglik += di * std::log(P) + (1.0 - di) * std::log(1.0 - P);
    if (with_derivs) {
      const double lam = link::pdf(kind, t);
      const double denom = P * (1.0 - P);
      st.grad.noalias() += w * (lam * (di - P) / denom);
      st.hess.noalias() += (lam * lam / denom) * (w * w.transpose());
    }
  }
  return st;
}

}  // namespace detail

// Bernoulli MLE via Newton-Raphson with the expected information and
// step-halving. Declares separation when the index norm diverges.
inline PsModel fit_mle(const Dataset& data, PsKind kind) {
  require(kind != PsKind::series, ErrorKind::invalid_input,
          "fit_mle: use fit_series_ps for the series propensity score");
  data.validate();
  const Eigen::Index p = 1 + data.dim_z() + data.dim_x();
  data.require_size_for(p);

  constexpr int max_iter = 100;
  constexpr double grad_tol = 1e-8;
  constexpr double sep_bound = 50.0;

  PsModel model;
  model.kind = kind;
  VectorXd alpha = VectorXd::Zero(p);
  auto st = detail::mle_state(data, kind, alpha, true);
  model.loglik_path.push_back(st.loglik);

  int it = 0;
  for (; it < max_iter; ++it) {
    if (st.grad.cwiseAbs().maxCoeff() <= grad_tol * data.n()) break;
    Eigen::LLT<MatrixXd> llt(st.hess);
    require(llt.info() == Eigen::Success, ErrorKind::estimation_failure,
            "fit_mle: singular information matrix at iteration " +
                std::to_string(it));
    const VectorXd step = llt.solve(st.grad);
    double scale = 1.0;
    bool improved = false;
    for (int half = 0; half < 40; ++half) {
      VectorXd cand = alpha + scale * step;
      auto cand_st = detail::mle_state(data, kind, cand, true);
      if (cand_st.loglik > st.loglik) {
        alpha = std::move(cand);
        st = std::move(cand_st);
        model.loglik_path.push_back(st.loglik);
        improved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!improved) break;  // likelihood at its floating-point plateau
    require(alpha.cwiseAbs().maxCoeff() <= sep_bound,
            ErrorKind::estimation_failure,
            "fit_mle: index diverged (possible separation) after " +
                std::to_string(it + 1) + " iterations");
  }
  // Mean-gradient tolerance; when step-halving can no longer raise the
  // likelihood the gradient may plateau slightly above it, which still pins
  // alpha to ~1e-7 for these concave models.
  const double gn = st.grad.cwiseAbs().maxCoeff() / data.n();
  require(gn <= 1e-5, ErrorKind::estimation_failure,
          "fit_mle: no convergence after " + std::to_string(it) +
              " iterations (mean gradient max-norm " + std::to_string(gn) +
              ")");
  model.alpha = alpha;
  model.iterations = it;
  model.grad_norm = gn;
  return model;
}

inline double propensity(const PsModel& model, const VectorXd& zx) {
  if (model.kind == PsKind::series) {
    const double raw = model.basis.row(zx).dot(model.coef);
    return std::clamp(raw, k_ps_clamp, 1.0 - k_ps_clamp);
  }
  return link::cdf(model.kind, detail::with_intercept(zx).dot(model.alpha));
}

inline double dP_dz1(const PsModel& model, const VectorXd& zx) {
  if (model.kind == PsKind::series) {
    return model.basis.drow(zx, 0).dot(model.coef);
  }
  const double t = detail::with_intercept(zx).dot(model.alpha);
  return link::pdf(model.kind, t) * model.alpha[1];
}

// Gradient in alpha of dP/dz1: L''(t) * wbar * a_z1 + L'(t) * e_z1.
inline VectorXd d2P_dz1_dalpha(const PsModel& model, const VectorXd& zx) {
  require(model.kind != PsKind::series, ErrorKind::unsupported_operation,
          "d2P_dz1_dalpha: not defined for the series propensity score");
  const VectorXd w = detail::with_intercept(zx);
  const double t = w.dot(model.alpha);
  VectorXd out = link::dpdf(model.kind, t) * model.alpha[1] * w;
  out[1] += link::pdf(model.kind, t);
  return out;
}

// Per-observation MLE influence values: (information)^-1 * score_i, with
// information = n^-1 sum L'^2 w w' / (P(1-P)) and
// score_i = L' w (d_i - P_i) / (P_i (1-P_i)).
inline MatrixXd mle_influence(const PsModel& model, const Dataset& data) {
  require(model.kind != PsKind::series, ErrorKind::unsupported_operation,
          "mle_influence: parametric models only");
  const Eigen::Index n = data.n(), p = model.alpha.size();
  auto st = detail::mle_state(data, model.kind, model.alpha, true);
  MatrixXd info = st.hess / static_cast<double>(n);
  Eigen::LLT<MatrixXd> llt(info);
  require(llt.info() == Eigen::Success, ErrorKind::estimation_failure,
          "mle_influence: singular information matrix");
  MatrixXd psi(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    VectorXd w = detail::with_intercept(data.zx_row(i));
    const double t = w.dot(model.alpha);
    const double P = std::clamp(link::cdf(model.kind, t), 1e-12, 1.0 - 1e-12);
    const double lam = link::pdf(model.kind, t);
    const VectorXd score = w * (lam * (data.d[i] - P) / (P * (1.0 - P)));
    psi.row(i) = llt.solve(score);
  }
  return psi;
}

// Nonparametric alternative: least-squares series projection of D on
// monomials of (z, x), predictions clamped to [1e-6, 1 - 1e-6].
inline PsModel fit_series_ps(const Dataset& data, const BasisSpec& basis) {
  data.validate();
  MonomialBasis mb(basis, static_cast<int>(data.dim_z() + data.dim_x()));
  const Eigen::Index n = data.n(), J = mb.size();
  require(J < n, ErrorKind::invalid_input,
          "fit_series_ps: basis dimension must be below n");
  data.require_size_for(J);
  MatrixXd rows(n, J);
  for (Eigen::Index i = 0; i < n; ++i) rows.row(i) = mb.row(data.zx_row(i));
  SeriesFit fit = ridge_fit(mb, rows, data.d, basis.lambda);

  PsModel model;
  model.kind = PsKind::series;
  model.basis = mb;
  model.coef = fit.b;
  Eigen::Index clamped = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double raw = rows.row(i).dot(fit.b);
    if (raw < k_ps_clamp || raw > 1.0 - k_ps_clamp) ++clamped;
  }
  model.clamp_rate = static_cast<double>(clamped) / static_cast<double>(n);
  return model;
}

}  // namespace uqe
