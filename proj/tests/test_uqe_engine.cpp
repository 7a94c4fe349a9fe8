#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "uqe/dgp_oracle.hpp"
#include "uqe/math/gauss_legendre.hpp"
#include "uqe/uqe_engine.hpp"
#include "support/test_util.hpp"

using namespace uqe;
using Catch::Approx;

namespace {

Dataset sample(double beta, double rho, Eigen::Index n, std::uint64_t seed,
               DgpVariant variant = DgpVariant::plain) {
  return generate_sample(DgpSpec{variant, beta, rho, seed}, n);
}

EstimationConfig config_tau(double tau) {
  EstimationConfig cfg;
  cfg.tau = tau;
  return cfg;
}

}  // namespace

TEST_CASE("T1n matches E[phi(Z)] = 1/(2 sqrt(pi)) under the probit truth") {
  const Dataset data = sample(1.0, 0.5, 100'000, 301);
  const PsModel ps = fit_mle(data, PsKind::probit);
  const double t1 = estimate_t1(data, ps);
  CHECK(t1 == Approx(0.28209479177).margin(0.005));
}

TEST_CASE("T1n for a steeper index matches the quadrature value") {
  // truth alpha = (0, 2): T1 = E[2 phi(2Z)]
  PsModel ps;
  ps.kind = PsKind::probit;
  ps.alpha = VectorXd::Zero(2);
  ps.alpha[1] = 2.0;
  const Dataset data = sample(0.0, 0.0, 200'000, 303);
  const double t1 = estimate_t1(data, ps);
  const double truth = integrate(
      [](double z) { return 2.0 * normal_pdf(2.0 * z) * normal_pdf(z); },
      -8.0, 8.0, 16);
  CHECK(t1 == Approx(truth).margin(0.005));
}

TEST_CASE("weak intervention raises an error") {
  PsModel flat;
  flat.kind = PsKind::probit;
  flat.alpha = VectorXd::Zero(2);  // slope 0: P constant in z1
  const Dataset data = sample(0.0, 0.0, 500, 305);
  try {
    estimate_t1(data, flat);
    FAIL("expected weak_intervention");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::weak_intervention);
  }
}

TEST_CASE("T2n is near zero under the null and zero for a constant target") {
  const Dataset data = sample(0.0, 0.5, 10'000, 307);
  const EstimationConfig cfg = config_tau(0.5);
  const PsModel ps = fit_mle(data, cfg.link);
  const double y_tau = empirical_quantile(data.y, 0.5);
  const auto [t2, fit] = estimate_t2(data, ps, cfg, y_tau);
  const TestResult tr = test_no_effect(data, cfg);
  const double se = std::sqrt(tr.v2 / static_cast<double>(data.n()));
  CHECK(std::fabs(t2) <= 3.0 * se);

  // constant target: evaluation point below the sample minimum gives an
  // all-zero indicator, hence an exactly constant fit with zero derivative
  const auto [t2c, fitc] =
      estimate_t2(data, ps, cfg, data.y.minCoeff() - 1.0);
  CHECK(t2c == Approx(0.0).margin(1e-12));
}

TEST_CASE("T2n matches the oracle inversion -Pi f T1 at beta=1, rho=0") {
  const Dataset data = sample(1.0, 0.0, 10'000, 309);
  const EstimationConfig cfg = config_tau(0.5);
  const UqeEstimate est = estimate_uqe(data, cfg);
  const OracleResult oracle = true_uqe(DgpSpec{DgpVariant::plain, 1.0, 0.0, 0}, 0.5);
  const TestResult tr = test_no_effect(data, cfg);
  const double se_t2 = std::sqrt(tr.v2 / static_cast<double>(data.n()));
  const double target = -oracle.pi_tau * oracle.f_y_tau * est.t1;
  CHECK(est.t2 == Approx(target).margin(3.0 * se_t2 + 0.01));
}

TEST_CASE("estimator is consistent at beta=1, rho=0") {
  const Dataset data = sample(1.0, 0.0, 100'000, 311);
  const UqeEstimate est = estimate_uqe(data, config_tau(0.5));
  const OracleResult oracle = true_uqe(DgpSpec{DgpVariant::plain, 1.0, 0.0, 0}, 0.5);
  CHECK(std::fabs(est.pi_hat - oracle.pi_tau) <= 0.05);
}

TEST_CASE("null DGP: Pi_hat within three standard errors of zero") {
  for (std::uint64_t seed : {401, 402, 403}) {
    const Dataset data = sample(0.0, 0.7, 1000, seed);
    const UqeEstimate est = estimate_uqe(data, config_tau(0.5));
    const double se = std::sqrt(est.v_tau / (est.n * est.h));
    CHECK(std::fabs(est.pi_hat) <= 3.0 * se);
  }
}

TEST_CASE("exact algebra: pi f t1 + t2 = 0 and CI symmetry") {
  const Dataset data = sample(0.7, 0.3, 2000, 313);
  const UqeEstimate est = estimate_uqe(data, config_tau(0.35));
  CHECK(std::fabs(est.pi_hat * est.f_hat * est.t1 + est.t2) <=
        1e-12 * std::max(1.0, std::fabs(est.t2)));
  CHECK(est.ci_hi - est.pi_hat == Approx(est.pi_hat - est.ci_lo).margin(1e-12));
  const double half = normal_two_sided_critical(0.95) *
                      std::sqrt(est.v_tau / (est.n * est.h));
  CHECK(est.ci_hi - est.pi_hat == Approx(half).margin(1e-12));
}

TEST_CASE("location equivariance: shifting Y shifts y_tau, not Pi_hat") {
  const Dataset data = sample(1.0, 0.5, 1500, 317);
  const UqeEstimate base = estimate_uqe(data, config_tau(0.5));
  Dataset shifted = data;
  const double c = 11.25;
  shifted.y.array() += c;
  const UqeEstimate moved = estimate_uqe(shifted, config_tau(0.5));
  CHECK(moved.y_tau == Approx(base.y_tau + c).margin(1e-10));
  CHECK(moved.pi_hat == Approx(base.pi_hat).epsilon(1e-9));
  CHECK(moved.v_tau == Approx(base.v_tau).epsilon(1e-7));
}

TEST_CASE("influence components are centered") {
  const Dataset data = sample(0.5, 0.25, 3000, 319);
  const UqeEstimate est = estimate_uqe(data, config_tau(0.4));
  const auto& c = est.components;
  const double n = static_cast<double>(est.n);
  CHECK(std::fabs(c.psi_dP.mean()) <= 1e-12);
  CHECK(std::fabs(c.psi_dm.mean()) <= 1e-12);
  CHECK(std::fabs(c.psi_m.mean()) <= 1e-12);
  CHECK(std::fabs(c.psi_alpha_term.mean()) <= 1e-12);
  CHECK(std::fabs(c.psi_Q.mean()) <= 1.0 / (n * est.f_hat) + 1e-12);
  CHECK(std::fabs(c.psi_f.mean()) <= 1e-12);
}

TEST_CASE("variance estimate reduces to a single term and scales as a quadratic form") {
  const Dataset data = sample(0.5, 0.25, 1000, 323);
  const UqeEstimate est = estimate_uqe(data, config_tau(0.5));
  const UqeQuantities q{est.f_hat, est.f_prime, est.t1, est.t2};

  InfluenceComponents only_f = est.components;
  only_f.psi_Q.setZero();
  only_f.psi_dP.setZero();
  only_f.psi_alpha_term.setZero();
  only_f.psi_dm.setZero();
  only_f.psi_m.setZero();
  only_f.psi_Q_tilde_scale = 0.0;
  const double v77 = variance_estimate(only_f, q, est.h, est.n);
  const double c1 = est.t2 / (est.f_hat * est.f_hat * est.t1);
  const double expected =
      (est.h / static_cast<double>(est.n)) *
      (c1 * only_f.psi_f).squaredNorm();
  CHECK(v77 == Approx(expected).epsilon(1e-12));

  InfluenceComponents doubled = est.components;
  doubled.psi_f *= 2.0;
  doubled.psi_Q *= 2.0;
  doubled.psi_dP *= 2.0;
  doubled.psi_alpha_term *= 2.0;
  doubled.psi_dm *= 2.0;
  doubled.psi_m *= 2.0;
  const double v2x = variance_estimate(doubled, q, est.h, est.n);
  CHECK(v2x == Approx(4.0 * est.v_tau).epsilon(1e-10));
}

TEST_CASE("density-only variance approaches the small-bandwidth limit") {
  // (h/n) sum psi_f^2 -> f int K^2 as h -> 0, so zeroing all non-density
  // components leaves (T2^2/(f^3 T1^2)) int K^2
  const Dataset data = sample(1.0, 0.5, 100'000, 325);
  EstimationConfig cfg = config_tau(0.5);
  cfg.bandwidth = {BandwidthKind::fixed, 0.05};
  const UqeEstimate est = estimate_uqe(data, cfg);
  const double kernel_l2 = 0.28209479177;  // int K^2 for the Gaussian kernel
  const double h_sum = est.h * est.components.psi_f.squaredNorm() /
                       static_cast<double>(est.n);
  // centering subtracts h f^2 at finite bandwidth
  const double limit =
      est.f_hat * kernel_l2 - est.h * est.f_hat * est.f_hat;
  CHECK(h_sum == Approx(limit).epsilon(0.03));
}

TEST_CASE("confidence interval arithmetic and nesting") {
  const auto [lo, hi] = confidence_interval(0.0, 1.0, 100, 1.0, 0.95);
  CHECK(lo == Approx(-0.1959964).margin(1e-6));
  CHECK(hi == Approx(0.1959964).margin(1e-6));
  const auto [lo99, hi99] = confidence_interval(0.0, 1.0, 100, 1.0, 0.99);
  CHECK(lo99 < lo);
  CHECK(hi99 > hi);
  CHECK_THROWS_AS(confidence_interval(0.0, -1.0, 100, 1.0, 0.95), Error);
}

TEST_CASE("no-effect test is invariant to rescaling the outcome") {
  const Dataset data = sample(0.4, 0.5, 2000, 329);
  const EstimationConfig cfg = config_tau(0.3);
  const TestResult base = test_no_effect(data, cfg);
  Dataset scaled = data;
  scaled.y *= 7.25;
  const TestResult after = test_no_effect(scaled, cfg);
  CHECK(after.statistic == Approx(base.statistic).epsilon(1e-8));
  CHECK((std::fabs(after.statistic) > 1.959964) ==
        (std::fabs(base.statistic) > 1.959964));
}

TEST_CASE("conditional-density derivative mean vanishes when Y is independent") {
  // independent outcome: Y ~ N(0,1) regardless of (D, Z)
  Dataset data = sample(0.0, 0.0, 20'000, 331);
  Rng rng(332);
  for (Eigen::Index i = 0; i < data.n(); ++i) data.y[i] = rng.normal();
  const EstimationConfig cfg = config_tau(0.5);
  const PsModel ps = fit_mle(data, cfg.link);
  SeriesWorkspace ws = build_series_workspace(data, ps, cfg.basis);
  const double y_tau = empirical_quantile(data.y, 0.5);
  const double h = silverman(data.y);
  const double s = cond_density_deriv_mean(ws, data.y, y_tau, h, 0.0);
  CHECK(std::fabs(s) <= 0.05);
}

TEST_CASE("conditional-density derivative matches its quadrature value") {
  // population target for the plain design:
  // E[d f_{Y|Z}(y_tau | Z)/dz] = int phi(z)^2 [f_{U|V}(y-b|z) - f_{U|V}(y|z)]
  const double beta = 1.0, rho = 0.5, tau = 0.3;
  const OracleResult oracle =
      true_uqe(DgpSpec{DgpVariant::plain, beta, rho, 0}, tau);
  const double s = std::sqrt(1.0 - rho * rho);
  auto cpdf = [&](double a, double v) {
    return normal_pdf((a - rho * v) / s) / s;
  };
  const double target = integrate(
      [&](double z) {
        return normal_pdf(z) * normal_pdf(z) *
               (cpdf(oracle.y_tau - beta, z) - cpdf(oracle.y_tau, z));
      },
      -8.0, 8.0, 16);
  REQUIRE(target < -0.04);  // informative cell

  const Dataset data = sample(beta, rho, 100'000, 371);
  const EstimationConfig cfg = config_tau(tau);
  const PsModel ps = fit_mle(data, cfg.link);
  SeriesWorkspace ws = build_series_workspace(data, ps, cfg.basis);
  const double y_tau = empirical_quantile(data.y, tau);
  const double h = silverman(data.y);
  const double sq = cond_density_deriv_mean(ws, data.y, y_tau, h, 0.0);
  CHECK(sq < 0.0);
  CHECK(sq == Approx(target).margin(0.01));
}

TEST_CASE("conditional-density derivative stabilizes as eps shrinks") {
  const Dataset data = sample(1.0, 0.5, 100'000, 337);
  const EstimationConfig cfg = config_tau(0.5);
  const PsModel ps = fit_mle(data, cfg.link);
  SeriesWorkspace ws = build_series_workspace(data, ps, cfg.basis);
  const double y_tau = empirical_quantile(data.y, 0.5);
  const double h = silverman(data.y);
  const double s1 = cond_density_deriv_mean(ws, data.y, y_tau, h, 0.0);
  const double s2 = cond_density_deriv_mean(ws, data.y, y_tau, h / 2.0, 0.0);
  const double s4 = cond_density_deriv_mean(ws, data.y, y_tau, h / 4.0, 0.0);
  // centered differences converge at second order up to sampling noise
  CHECK(std::fabs(s2 - s4) <= 0.6 * std::fabs(s1 - s2) + 0.01);
}

TEST_CASE("MTE curve: flat under full independence, zero under the null") {
  {
    const Dataset data = sample(1.0, 0.0, 20'000, 341);
    const EstimationConfig cfg = config_tau(0.5);
    const PsModel ps = fit_mle(data, cfg.link);
    const std::vector<double> grid{0.2, 0.35, 0.5, 0.65, 0.8};
    const auto curve = mte_tau_curve(data, ps, cfg, grid);
    double lo = 1e300, hi = -1e300;
    for (double v : curve) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    CHECK(hi - lo <= 0.35);  // constant in u up to sampling noise
  }
  {
    const Dataset data = sample(0.0, 0.5, 20'000, 343);
    const EstimationConfig cfg = config_tau(0.5);
    const PsModel ps = fit_mle(data, cfg.link);
    const auto curve = mte_tau_curve(data, ps, cfg, {0.3, 0.5, 0.7});
    for (double v : curve) CHECK(std::fabs(v) <= 0.25);
  }
}

TEST_CASE("MTE curve averages back to Pi_hat under the estimated weight") {
  const Dataset data = sample(1.0, 0.5, 5000, 347);
  const EstimationConfig cfg = config_tau(0.5);
  const UqeEstimate est = estimate_uqe(data, cfg);
  // weighted average of the curve at the sample propensities with weights
  // dP_i / (n T1n) reproduces Pi_hat exactly
  std::vector<double> grid(static_cast<std::size_t>(data.n()));
  SeriesWorkspace ws = build_series_workspace(data, est.ps, cfg.basis);
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    grid[static_cast<std::size_t>(i)] = ws.p[i];
  }
  const auto curve = mte_tau_curve(data, est.ps, cfg, grid);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    acc += curve[static_cast<std::size_t>(i)] * ws.dp[i];
  }
  acc /= static_cast<double>(data.n()) * est.t1;
  CHECK(acc == Approx(est.pi_hat).epsilon(1e-9));
}

TEST_CASE("MTE curve refuses extrapolation") {
  const Dataset data = sample(1.0, 0.5, 2000, 349);
  const EstimationConfig cfg = config_tau(0.5);
  const PsModel ps = fit_mle(data, cfg.link);
  try {
    mte_tau_curve(data, ps, cfg, {1.5});
    FAIL("expected extrapolation error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::extrapolation);
  }
}

TEST_CASE("mean effect recovers beta and scales linearly") {
  const Dataset data = sample(1.0, 0.6, 20'000, 353);
  EstimationConfig cfg;
  const MeanEffectEstimate est = estimate_mean_effect(data, cfg);
  const double se = std::sqrt(est.v / static_cast<double>(est.n));
  CHECK(est.pi_hat == Approx(1.0).margin(3.0 * se + 0.02));

  Dataset doubled = data;
  doubled.y *= 2.0;
  const MeanEffectEstimate est2 = estimate_mean_effect(doubled, cfg);
  CHECK(est2.pi_hat == Approx(2.0 * est.pi_hat).epsilon(1e-10));

  const Dataset null_data = sample(0.0, 0.6, 20'000, 357);
  const MeanEffectEstimate est0 = estimate_mean_effect(null_data, cfg);
  const double se0 = std::sqrt(est0.v / static_cast<double>(est0.n));
  CHECK(std::fabs(est0.pi_hat) <= 3.0 * se0);
}

TEST_CASE("series-link pipeline produces a sane estimate with psi_Ps slot") {
  const Dataset data = sample(1.0, 0.0, 20'000, 359);
  EstimationConfig cfg = config_tau(0.5);
  cfg.link = PsKind::series;
  const UqeEstimate est = estimate_uqe(data, cfg);
  const OracleResult oracle = true_uqe(DgpSpec{DgpVariant::plain, 1.0, 0.0, 0}, 0.5);
  const double se = std::sqrt(est.v_tau / (est.n * est.h));
  CHECK(std::fabs(est.pi_hat - oracle.pi_tau) <= 4.0 * se + 0.1);
  CHECK(std::fabs(est.components.psi_alpha_term.mean()) <= 1e-12);
}

TEST_CASE("covariate-design pipeline tracks its oracle") {
  const Dataset data = sample(1.0, 0.3, 20'000, 363, DgpVariant::covariate);
  REQUIRE(data.dim_x() == 1);
  const EstimationConfig cfg = config_tau(0.5);
  const UqeEstimate est = estimate_uqe(data, cfg);
  const OracleResult oracle =
      true_uqe(DgpSpec{DgpVariant::covariate, 1.0, 0.3, 0}, 0.5);
  const double se = std::sqrt(est.v_tau / (est.n * est.h));
  CHECK(std::fabs(est.pi_hat - oracle.pi_tau) <= 4.0 * se + 0.05);

  // mean effect equals beta in this design as well
  const MeanEffectEstimate me = estimate_mean_effect(data, cfg);
  const double me_se = std::sqrt(me.v / static_cast<double>(me.n));
  CHECK(me.pi_hat == Approx(1.0).margin(4.0 * me_se + 0.05));
}

TEST_CASE("degenerate density raises an error") {
  // an isolated outlier becomes the quantile; with a wide fixed bandwidth
  // the kernel mass there falls below the degeneracy threshold
  Dataset data = sample(0.0, 0.0, 1000, 361);
  EstimationConfig cfg = config_tau(0.9995);  // quantile = the outlier
  data.y[0] = 1e6;
  cfg.bandwidth = {BandwidthKind::fixed, 5.0};
  try {
    estimate_uqe(data, cfg);
    FAIL("expected degenerate_density");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::degenerate_density);
  }
}

TEST_CASE("log-density projection wrapper has mean near zero for rich basis") {
  const Dataset data = sample(0.5, 0.5, 20'000, 367);
  EstimationConfig cfg;
  const PsModel ps = fit_mle(data, cfg.link);
  const VectorXd nu = log_density_deriv_projection(data, ps, cfg.basis);
  // projection of the Gaussian score: population mean is E[-Z] = 0
  const double sd = std::sqrt((nu.array() - nu.mean()).square().mean());
  CHECK(std::fabs(nu.mean()) <=
        3.0 * sd / std::sqrt(static_cast<double>(data.n())) + 0.02);
}
