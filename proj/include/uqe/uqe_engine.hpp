#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "uqe/core_stats.hpp"
#include "uqe/dataset.hpp"
#include "uqe/errors.hpp"
#include "uqe/math/normal.hpp"
#include "uqe/propensity.hpp"
#include "uqe/series_model.hpp"

namespace uqe {

inline constexpr double k_weak_intervention_tol = 1e-6;
inline constexpr double k_degenerate_density_tol = 1e-4;

struct EstimationConfig {
  double tau = 0.5;
  BandwidthRule bandwidth{};
  PsKind link = PsKind::probit;
  BasisSpec basis{3, true, 0.0};
  double ci_level = 0.95;
  double fd_epsilon_factor = 1.0;

  void validate() const {
    require(tau > 0.0 && tau < 1.0, ErrorKind::invalid_input,
            "config: tau must lie in (0,1)");
    require(ci_level > 0.0 && ci_level < 1.0, ErrorKind::invalid_input,
            "config: ci_level must lie in (0,1)");
    require(basis.degree >= 1, ErrorKind::invalid_input,
            "config: basis degree must be >= 1");
    require(basis.lambda >= 0.0, ErrorKind::invalid_input,
            "config: lambda must be nonnegative");
    require(fd_epsilon_factor > 0.0, ErrorKind::invalid_input,
            "config: fd_epsilon_factor must be positive");
  }
};

// Per-observation influence pieces; psi_dP, psi_alpha_term, psi_dm and psi_m
// are centered at their own sample averages. psi_Q_tilde_scale is the
// estimated E[d f_{Y|Wt}(y_tau|Wt) / d z1] multiplying psi_Q.
struct InfluenceComponents {
  VectorXd psi_f;
  VectorXd psi_Q;
  VectorXd psi_dP;
  VectorXd psi_alpha_term;
  VectorXd psi_dm;
  VectorXd psi_m;
  double psi_Q_tilde_scale = 0.0;
};

struct UqeQuantities {
  double f_hat = 0.0;
  double f_prime = 0.0;
  double t1 = 0.0;
  double t2 = 0.0;
};

struct UqeEstimate {
  double y_tau = 0.0;
  double f_hat = 0.0;
  double f_prime = 0.0;
  double t1 = 0.0;
  double t2 = 0.0;
  double pi_hat = 0.0;
  double v_tau = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double h = 0.0;
  Eigen::Index n = 0;
  VectorXd influence;
  InfluenceComponents components;
  PsModel ps;
  SeriesFit fit;
};

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  double t2 = 0.0;
  double v2 = 0.0;
};

struct MeanEffectEstimate {
  double t1 = 0.0;
  double t2 = 0.0;
  double pi_hat = 0.0;
  double v = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  Eigen::Index n = 0;
  VectorXd influence;
  PsModel ps;
  SeriesFit fit;
};

// ---------------------------------------------------------------------------
// Series workspace: design rows in (P_hat, X) and their p-derivatives, plus
// the propensity values and z1-derivatives, shared by all indicator fits.
// ---------------------------------------------------------------------------
struct SeriesWorkspace {
  MonomialBasis basis;
  MatrixXd rows;      // phi(P_i, X_i)
  MatrixXd drows_dp;  // d phi / dp at (P_i, X_i)
  VectorXd p;         // P_hat_i
  VectorXd dp;        // d P_hat_i / d z1
};

inline SeriesWorkspace build_series_workspace(const Dataset& data,
                                              const PsModel& ps,
                                              const BasisSpec& basis) {
  SeriesWorkspace ws;
  ws.basis = make_pw_basis(basis, data.dim_x());
  const Eigen::Index n = data.n(), J = ws.basis.size();
  ws.rows.resize(n, J);
  ws.drows_dp.resize(n, J);
  ws.p.resize(n);
  ws.dp.resize(n);
  VectorXd w(1 + data.dim_x());
  for (Eigen::Index i = 0; i < n; ++i) {
    const VectorXd zx = data.zx_row(i);
    ws.p[i] = propensity(ps, zx);
    ws.dp[i] = dP_dz1(ps, zx);
    w[0] = ws.p[i];
    if (data.dim_x() > 0) w.tail(data.dim_x()) = data.x.row(i);
    ws.rows.row(i) = ws.basis.row(w);
    ws.drows_dp.row(i) = ws.basis.drow(w, 0);
  }
  return ws;
}

namespace detail {

inline SeriesFit fit_target(const SeriesWorkspace& ws, const VectorXd& target,
                            double lambda) {
  return ridge_fit(ws.basis, ws.rows, target, lambda);
}

inline VectorXd indicator_leq(const VectorXd& y, double cut) {
  VectorXd out(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) out[i] = y[i] <= cut ? 1.0 : 0.0;
  return out;
}

// Average z1-derivative of a fitted series function over the sample.
inline double average_dz1(const SeriesWorkspace& ws, const SeriesFit& fit) {
  return ((ws.drows_dp * fit.b).cwiseProduct(ws.dp)).mean();
}

inline void center(VectorXd& v) { v.array() -= v.mean(); }

}  // namespace detail

// T1n = n^-1 sum dP/dz1; errors out when the intervention is too weak for
// the downstream division.
inline double estimate_t1(const Dataset& data, const PsModel& ps) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    acc += dP_dz1(ps, data.zx_row(i));
  }
  const double t1 = acc / static_cast<double>(data.n());
  require(std::fabs(t1) >= k_weak_intervention_tol,
          ErrorKind::weak_intervention,
          "estimate_t1: |T1n| = " + std::to_string(std::fabs(t1)) +
              " too small; intervention does not move the propensity score");
  return t1;
}

// T2n at evaluation point y_eval: series regression of 1{Y <= y_eval} on
// phi(P_hat, X), averaged z1-derivative of the fit.
inline std::pair<double, SeriesFit> estimate_t2(const Dataset& data,
                                                const PsModel& ps,
                                                const EstimationConfig& config,
                                                double y_eval) {
  SeriesWorkspace ws = build_series_workspace(data, ps, config.basis);
  SeriesFit fit =
      detail::fit_target(ws, detail::indicator_leq(data.y, y_eval),
                         config.basis.lambda);
  return {detail::average_dz1(ws, fit), std::move(fit)};
}

// E_hat[d f_{Y|Wt}(y_tau | Wt) / d z1]: centered difference of the indicator
// fits at y_tau +/- eps, pushed through the z1 chain rule and averaged.
// Equals [T2n(y_tau + eps) - T2n(y_tau - eps)] / (2 eps).
inline double cond_density_deriv_mean(const SeriesWorkspace& ws,
                                      const VectorXd& y, double y_tau,
                                      double eps, double lambda) {
  require(eps > 0.0, ErrorKind::invalid_input,
          "cond_density_deriv_mean: eps must be positive");
  const SeriesFit up =
      detail::fit_target(ws, detail::indicator_leq(y, y_tau + eps), lambda);
  const SeriesFit dn =
      detail::fit_target(ws, detail::indicator_leq(y, y_tau - eps), lambda);
  return (detail::average_dz1(ws, up) - detail::average_dz1(ws, dn)) /
         (2.0 * eps);
}

inline VectorXd assemble_influence(const InfluenceComponents& c,
                                   const UqeQuantities& q) {
  const double c_f = q.t2 / (q.f_hat * q.f_hat * q.t1);
  const double c_t1 = q.t2 / (q.f_hat * q.t1 * q.t1);
  const double c_t2 = 1.0 / (q.f_hat * q.t1);
  return c_f * (c.psi_f + q.f_prime * c.psi_Q) +
         c_t1 * (c.psi_dP + c.psi_alpha_term) -
         c_t2 * (c.psi_dm + c.psi_m + c.psi_Q_tilde_scale * c.psi_Q);
}

// Plug-in variance V_hat = (h/n) sum psi_i^2.
inline double variance_estimate(const InfluenceComponents& components,
                                const UqeQuantities& quantities, double h,
                                Eigen::Index n) {
  require(components.psi_f.size() == n && components.psi_Q.size() == n &&
              components.psi_dP.size() == n &&
              components.psi_alpha_term.size() == n &&
              components.psi_dm.size() == n && components.psi_m.size() == n,
          ErrorKind::invalid_input,
          "variance_estimate: component lengths differ from n");
  const VectorXd psi = assemble_influence(components, quantities);
  return (h / static_cast<double>(n)) * psi.squaredNorm();
}

inline std::pair<double, double> confidence_interval(double pi_hat,
                                                     double v_tau,
                                                     Eigen::Index n, double h,
                                                     double level) {
  require(v_tau >= 0.0, ErrorKind::invalid_input,
          "confidence_interval: variance must be nonnegative");
  require(n > 0 && h > 0.0, ErrorKind::invalid_input,
          "confidence_interval: need nh > 0");
  const double half = normal_two_sided_critical(level) *
                      std::sqrt(v_tau / (static_cast<double>(n) * h));
  return {pi_hat - half, pi_hat + half};
}

namespace detail {

struct Pipeline {
  double y_tau = 0.0, h = 0.0, f_hat = 0.0, f_prime = 0.0;
  double t1 = 0.0, t2 = 0.0;
  PsModel ps;
  SeriesWorkspace ws;
  SeriesFit fit;
  InfluenceComponents comp;
};

// psi_alpha_term: parametric models contribute
//   [n^-1 sum d2P/dz1 dalpha]' psi_alpha_i;
// the series path contributes psi_Ps_i = -(D_i - P_i) nu_W(W_i) instead,
// where nu_W projects the W-basis z1-derivative (psi_dPs is psi_dP itself).
inline VectorXd alpha_stage_term(const Dataset& data, const PsModel& ps,
                                 const SeriesWorkspace& ws, double lambda) {
  const Eigen::Index n = data.n();
  VectorXd term(n);
  if (ps.kind == PsKind::series) {
    const Eigen::Index J = ps.basis.size();
    MatrixXd wrows(n, J), wdrows(n, J);
    for (Eigen::Index i = 0; i < n; ++i) {
      const VectorXd zx = data.zx_row(i);
      wrows.row(i) = ps.basis.row(zx);
      wdrows.row(i) = ps.basis.drow(zx, 0);
    }
    const VectorXd nu_w = log_density_deriv_projection(wrows, wdrows, lambda);
    for (Eigen::Index i = 0; i < n; ++i) {
      term[i] = -(data.d[i] - ws.p[i]) * nu_w[i];
    }
  } else {
    const MatrixXd psi_alpha = mle_influence(ps, data);
    VectorXd d2bar = VectorXd::Zero(ps.alpha.size());
    for (Eigen::Index i = 0; i < n; ++i) {
      d2bar += d2P_dz1_dalpha(ps, data.zx_row(i));
    }
    d2bar /= static_cast<double>(n);
    term = psi_alpha * d2bar;
  }
  center(term);
  return term;
}

inline Pipeline run_pipeline(const Dataset& data,
                             const EstimationConfig& config) {
  data.validate();
  config.validate();
  const Eigen::Index n = data.n();
  Pipeline pl;

  // stage 1: quantile, bandwidth, density and its derivative
  pl.y_tau = empirical_quantile(data.y, config.tau);
  pl.h = config.bandwidth.resolve(data.y);
  pl.f_hat = kde(data.y, pl.y_tau, pl.h);
  require(pl.f_hat > k_degenerate_density_tol, ErrorKind::degenerate_density,
          "estimate: f_hat(y_tau) = " + std::to_string(pl.f_hat) +
              " is numerically degenerate");
  pl.f_prime = kde_derivative(data.y, pl.y_tau, pl.h);

  // stage 2: propensity score
  pl.ps = (config.link == PsKind::series) ? fit_series_ps(data, config.basis)
                                          : fit_mle(data, config.link);

  // stage 3: series regression of the indicator on (P_hat, X)
  pl.ws = build_series_workspace(data, pl.ps, config.basis);
  pl.t1 = pl.ws.dp.mean();
  require(std::fabs(pl.t1) >= k_weak_intervention_tol,
          ErrorKind::weak_intervention,
          "estimate: |T1n| too small; intervention does not move the "
          "propensity score");
  const VectorXd ind = indicator_leq(data.y, pl.y_tau);
  pl.fit = fit_target(pl.ws, ind, config.basis.lambda);
  pl.t2 = average_dz1(pl.ws, pl.fit);

  // influence components
  InfluenceComponents& c = pl.comp;
  const KernelSpec kern;
  c.psi_f.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    c.psi_f[i] = kern.eval((data.y[i] - pl.y_tau) / pl.h, 0) / pl.h;
  }
  center(c.psi_f);
  c.psi_Q.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    c.psi_Q[i] = (config.tau - ind[i]) / pl.f_hat;
  }
  c.psi_dP = pl.ws.dp.array() - pl.t1;
  c.psi_dm = (pl.ws.drows_dp * pl.fit.b).cwiseProduct(pl.ws.dp).array() - pl.t2;
  center(c.psi_dm);
  const VectorXd m_hat = pl.ws.rows * pl.fit.b;
  const MatrixXd drows_dz1 = pl.ws.drows_dp.array().colwise() * pl.ws.dp.array();
  const VectorXd nu = log_density_deriv_projection(pl.ws.rows, drows_dz1,
                                                   config.basis.lambda);
  c.psi_m = -((ind - m_hat).cwiseProduct(nu));
  center(c.psi_m);
  c.psi_Q_tilde_scale = cond_density_deriv_mean(
      pl.ws, data.y, pl.y_tau, config.fd_epsilon_factor * pl.h,
      config.basis.lambda);
  c.psi_alpha_term = alpha_stage_term(data, pl.ps, pl.ws, config.basis.lambda);
  return pl;
}

}  // namespace detail

// The four-stage estimator Pi_hat = -T2n / (f_hat(y_tau) T1n) with plug-in
// variance and symmetric normal confidence interval.
inline UqeEstimate estimate_uqe(const Dataset& data,
                                const EstimationConfig& config) {
  auto pl = detail::run_pipeline(data, config);
  UqeEstimate est;
  est.y_tau = pl.y_tau;
  est.f_hat = pl.f_hat;
  est.f_prime = pl.f_prime;
  est.t1 = pl.t1;
  est.t2 = pl.t2;
  est.h = pl.h;
  est.n = data.n();
  est.pi_hat = -pl.t2 / (pl.f_hat * pl.t1);
  const UqeQuantities q{pl.f_hat, pl.f_prime, pl.t1, pl.t2};
  est.influence = assemble_influence(pl.comp, q);
  est.v_tau =
      (pl.h / static_cast<double>(est.n)) * est.influence.squaredNorm();
  std::tie(est.ci_lo, est.ci_hi) =
      confidence_interval(est.pi_hat, est.v_tau, est.n, est.h, config.ci_level);
  est.components = std::move(pl.comp);
  est.ps = std::move(pl.ps);
  est.fit = std::move(pl.fit);
  return est;
}

// Test of H0: T2 = 0 (equivalently Pi_tau = 0). The statistic needs no
// density or T1; f_hat enters only through psi_Q inside V2.
inline TestResult test_no_effect(const Dataset& data,
                                 const EstimationConfig& config) {
  auto pl = detail::run_pipeline(data, config);
  const VectorXd contrib = pl.comp.psi_dm + pl.comp.psi_m +
                           pl.comp.psi_Q_tilde_scale * pl.comp.psi_Q;
  const double v2 = contrib.squaredNorm() / static_cast<double>(data.n());
  require(v2 > 0.0, ErrorKind::degenerate_variance,
          "test_no_effect: variance estimate is not positive");
  TestResult res;
  res.t2 = pl.t2;
  res.v2 = v2;
  res.statistic =
      std::sqrt(static_cast<double>(data.n())) * pl.t2 / std::sqrt(v2);
  res.p_value = 2.0 * normal_sf(std::fabs(res.statistic));
  return res;
}

// Unconditional MTE_tau curve on a grid of propensity values, with X averaged
// out empirically at each grid point. Grid points must lie inside the range
// of the fitted propensity scores.
inline std::vector<double> mte_tau_curve(const Dataset& data,
                                         const PsModel& ps,
                                         const EstimationConfig& config,
                                         const std::vector<double>& u_grid) {
  data.validate();
  config.validate();
  const double y_tau = empirical_quantile(data.y, config.tau);
  const double h = config.bandwidth.resolve(data.y);
  const double f_hat = kde(data.y, y_tau, h);
  require(f_hat > k_degenerate_density_tol, ErrorKind::degenerate_density,
          "mte_tau_curve: degenerate density at y_tau");
  SeriesWorkspace ws = build_series_workspace(data, ps, config.basis);
  const SeriesFit fit = detail::fit_target(
      ws, detail::indicator_leq(data.y, y_tau), config.basis.lambda);
  const double p_lo = ws.p.minCoeff(), p_hi = ws.p.maxCoeff();

  const Eigen::Index n = data.n();
  std::vector<double> curve;
  curve.reserve(u_grid.size());
  VectorXd w(1 + data.dim_x());
  for (double u : u_grid) {
    require(u >= p_lo && u <= p_hi, ErrorKind::extrapolation,
            "mte_tau_curve: grid point " + std::to_string(u) +
                " outside fitted propensity range [" + std::to_string(p_lo) +
                ", " + std::to_string(p_hi) + "]");
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      w[0] = u;
      if (data.dim_x() > 0) w.tail(data.dim_x()) = data.x.row(i);
      acc += ws.basis.drow(w, 0).dot(fit.b);
    }
    curve.push_back(-(acc / static_cast<double>(n)) / f_hat);
  }
  return curve;
}

// Mean-functional variant: T2 from the series regression of Y itself, point
// estimate T2m / T1n, parametric-rate influence variance.
inline MeanEffectEstimate estimate_mean_effect(const Dataset& data,
                                               const EstimationConfig& config) {
  data.validate();
  config.validate();
  const Eigen::Index n = data.n();
  MeanEffectEstimate est;
  est.n = n;
  est.ps = (config.link == PsKind::series) ? fit_series_ps(data, config.basis)
                                           : fit_mle(data, config.link);
  SeriesWorkspace ws = build_series_workspace(data, est.ps, config.basis);
  est.t1 = ws.dp.mean();
  require(std::fabs(est.t1) >= k_weak_intervention_tol,
          ErrorKind::weak_intervention,
          "estimate_mean_effect: |T1n| too small");
  est.fit = detail::fit_target(ws, data.y, config.basis.lambda);
  est.t2 = detail::average_dz1(ws, est.fit);
  est.pi_hat = est.t2 / est.t1;

  VectorXd psi_dm =
      (ws.drows_dp * est.fit.b).cwiseProduct(ws.dp).array() - est.t2;
  detail::center(psi_dm);
  const VectorXd m_hat = ws.rows * est.fit.b;
  const MatrixXd drows_dz1 = ws.drows_dp.array().colwise() * ws.dp.array();
  const VectorXd nu =
      log_density_deriv_projection(ws.rows, drows_dz1, config.basis.lambda);
  VectorXd psi_m = -((data.y - m_hat).cwiseProduct(nu));
  detail::center(psi_m);
  VectorXd psi_dP = ws.dp.array() - est.t1;
  const VectorXd psi_a =
      detail::alpha_stage_term(data, est.ps, ws, config.basis.lambda);

  est.influence = (psi_dm + psi_m) / est.t1 -
                  (est.t2 / (est.t1 * est.t1)) * (psi_dP + psi_a);
  est.v = est.influence.squaredNorm() / static_cast<double>(n);
  const double half = normal_two_sided_critical(config.ci_level) *
                      std::sqrt(est.v / static_cast<double>(n));
  est.ci_lo = est.pi_hat - half;
  est.ci_hi = est.pi_hat + half;
  return est;
}

// Spec-level wrapper for the log-density-derivative projection on the
// (P_hat, X) basis.
inline VectorXd log_density_deriv_projection(const Dataset& data,
                                             const PsModel& ps,
                                             const BasisSpec& basis) {
  SeriesWorkspace ws = build_series_workspace(data, ps, basis);
  const MatrixXd drows_dz1 = ws.drows_dp.array().colwise() * ws.dp.array();
  return log_density_deriv_projection(ws.rows, drows_dz1, basis.lambda);
}

}  // namespace uqe
