#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "uqe/dgp_oracle.hpp"
#include "uqe/propensity.hpp"
#include "uqe/rng.hpp"

using namespace uqe;
using Catch::Approx;

namespace {

// d generated as 1{V <= Z} with independent standard normal V, Z, so that
// Pr(D=1|Z=z) = Phi(z) exactly: probit truth alpha = (0, 1).
Dataset probit_truth_sample(Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset data;
  data.y.resize(n);
  data.d.resize(n);
  data.z.resize(n, 1);
  data.x.resize(n, 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double v = rng.normal();
    const double z = rng.normal();
    data.z(i, 0) = z;
    data.d[i] = v <= z ? 1.0 : 0.0;
    data.y[i] = rng.normal();
  }
  return data;
}

PsModel make_parametric(PsKind kind, std::initializer_list<double> alpha) {
  PsModel m;
  m.kind = kind;
  m.alpha.resize(static_cast<Eigen::Index>(alpha.size()));
  Eigen::Index i = 0;
  for (double a : alpha) m.alpha[i++] = a;
  return m;
}

VectorXd point1(double z) {
  VectorXd v(1);
  v[0] = z;
  return v;
}

}  // namespace

TEST_CASE("probit MLE recovers the threshold-crossing truth") {
  const Dataset data = probit_truth_sample(100'000, 21);
  const PsModel m = fit_mle(data, PsKind::probit);
  CHECK(m.alpha[0] == Approx(0.0).margin(0.05));
  CHECK(m.alpha[1] == Approx(1.0).margin(0.05));
  CHECK(m.grad_norm <= 1e-8);
}

TEST_CASE("every accepted Newton step strictly raises the likelihood") {
  for (std::uint64_t seed : {121, 122, 123}) {
    const Dataset data = probit_truth_sample(3000, seed);
    for (PsKind kind : {PsKind::probit, PsKind::logit}) {
      const PsModel m = fit_mle(data, kind);
      REQUIRE(m.loglik_path.size() >= 2);
      for (std::size_t k = 1; k < m.loglik_path.size(); ++k) {
        CHECK(m.loglik_path[k] > m.loglik_path[k - 1]);
      }
    }
  }
}

TEST_CASE("MLE errors on degenerate treatment") {
  Dataset data = probit_truth_sample(200, 22);
  data.d.setOnes();
  CHECK_THROWS_AS(fit_mle(data, PsKind::probit), Error);
}

TEST_CASE("logit slope is near zero for an independent coin") {
  Rng rng(23);
  Dataset data = probit_truth_sample(10'000, 23);
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    data.d[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
  }
  const PsModel m = fit_mle(data, PsKind::logit);
  CHECK(m.alpha[1] == Approx(0.0).margin(0.1));
}

TEST_CASE("propensity point values") {
  const PsModel probit = make_parametric(PsKind::probit, {0.0, 1.0});
  const PsModel logit = make_parametric(PsKind::logit, {0.0, 1.0});
  CHECK(propensity(probit, point1(0.0)) == Approx(0.5).epsilon(1e-12));
  CHECK(propensity(logit, point1(0.0)) == Approx(0.5).epsilon(1e-12));
  CHECK(propensity(probit, point1(1.6449)) == Approx(0.95).margin(1e-4));
}

TEST_CASE("dP/dz1 point values and finite differences") {
  const PsModel probit = make_parametric(PsKind::probit, {0.0, 1.0});
  const PsModel logit = make_parametric(PsKind::logit, {0.0, 1.0});
  const PsModel probit2 = make_parametric(PsKind::probit, {0.0, 2.0});
  CHECK(dP_dz1(probit, point1(0.0)) == Approx(0.3989422804).epsilon(1e-9));
  CHECK(dP_dz1(logit, point1(0.0)) == Approx(0.25).epsilon(1e-12));
  CHECK(dP_dz1(probit2, point1(0.0)) == Approx(0.7978845608).epsilon(1e-9));

  Rng rng(29);
  for (int rep = 0; rep < 10; ++rep) {
    const PsModel m = make_parametric(rep % 2 ? PsKind::probit : PsKind::logit,
                                      {rng.normal(), 0.5 + rng.uniform()});
    const double z = 2.0 * rng.normal();
    const double eps = 1e-6;
    const double fd = (propensity(m, point1(z + eps)) -
                       propensity(m, point1(z - eps))) /
                      (2.0 * eps);
    CHECK(dP_dz1(m, point1(z)) == Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("d2P/dz1 dalpha analytic vs finite differences") {
  const PsModel probit = make_parametric(PsKind::probit, {0.0, 1.0});
  const VectorXd g0 = d2P_dz1_dalpha(probit, point1(0.0));
  CHECK(g0[0] == Approx(0.0).margin(1e-14));          // phi'(0) = 0
  CHECK(g0[1] == Approx(0.3989422804).epsilon(1e-9));  // product rule at z=0

  Rng rng(31);
  for (int rep = 0; rep < 10; ++rep) {
    PsModel m = make_parametric(rep % 2 ? PsKind::probit : PsKind::logit,
                                {rng.normal(), 0.5 + rng.uniform()});
    const VectorXd zx = point1(1.5 * rng.normal());
    const VectorXd analytic = d2P_dz1_dalpha(m, zx);
    for (Eigen::Index j = 0; j < m.alpha.size(); ++j) {
      const double eps = 1e-6;
      PsModel up = m, dn = m;
      up.alpha[j] += eps;
      dn.alpha[j] -= eps;
      const double fd = (dP_dz1(up, zx) - dP_dz1(dn, zx)) / (2.0 * eps);
      CHECK(analytic[j] == Approx(fd).margin(1e-6));
    }
  }
}

TEST_CASE("d2P/dz1 dalpha unsupported for series models") {
  const Dataset data = probit_truth_sample(500, 37);
  const PsModel m = fit_series_ps(data, BasisSpec{3, true, 0.0});
  CHECK_THROWS_AS(d2P_dz1_dalpha(m, point1(0.0)), Error);
  try {
    d2P_dz1_dalpha(m, point1(0.0));
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::unsupported_operation);
  }
}

TEST_CASE("MLE influence: centered, sandwich identity, jackknife") {
  const Dataset data = probit_truth_sample(10'000, 41);
  const PsModel m = fit_mle(data, PsKind::probit);
  const MatrixXd psi = mle_influence(m, data);
  const double n = static_cast<double>(data.n());

  // column means within 3 sd / sqrt(n) of zero
  for (Eigen::Index j = 0; j < psi.cols(); ++j) {
    const double mean = psi.col(j).mean();
    const double sd = std::sqrt((psi.col(j).array() - mean).square().sum() /
                                (n - 1.0));
    CHECK(std::fabs(mean) <= 3.0 * sd / std::sqrt(n));
  }

  // sandwich: n^-1 sum psi psi' close to the inverse information
  const Dataset big = probit_truth_sample(100'000, 43);
  const PsModel mb = fit_mle(big, PsKind::probit);
  const MatrixXd psib = mle_influence(mb, big);
  const MatrixXd outer =
      psib.transpose() * psib / static_cast<double>(big.n());
  const auto st = detail::mle_state(big, mb.kind, mb.alpha, true);
  const MatrixXd inv_info =
      (st.hess / static_cast<double>(big.n())).inverse();
  CHECK((outer - inv_info).norm() <= 0.1 * inv_info.norm());

  // jackknife: deleting observation i moves alpha by about -psi_i / n
  const Dataset small = probit_truth_sample(2000, 47);
  const PsModel ms = fit_mle(small, PsKind::probit);
  const MatrixXd psis = mle_influence(ms, small);
  for (Eigen::Index drop : {0, 500, 1999}) {
    Dataset reduced;
    const Eigen::Index nn = small.n() - 1;
    reduced.y.resize(nn);
    reduced.d.resize(nn);
    reduced.z.resize(nn, 1);
    reduced.x.resize(nn, 0);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < small.n(); ++i) {
      if (i == drop) continue;
      reduced.y[k] = small.y[i];
      reduced.d[k] = small.d[i];
      reduced.z(k, 0) = small.z(i, 0);
      ++k;
    }
    const PsModel mr = fit_mle(reduced, PsKind::probit);
    const VectorXd delta = mr.alpha - ms.alpha;
    const VectorXd approx = -psis.row(drop).transpose() /
                            static_cast<double>(small.n());
    CHECK((delta - approx).norm() <= 0.02 * approx.norm() + 5e-7);
  }
}

TEST_CASE("series propensity score") {
  const Dataset data = probit_truth_sample(100'000, 53);
  const PsModel m = fit_series_ps(data, BasisSpec{3, true, 0.0});
  CHECK(propensity(m, point1(0.0)) == Approx(0.5).margin(0.02));

  // T1n close to E[phi(Z)] = 1/(2 sqrt(pi))
  double t1 = 0.0;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    t1 += dP_dz1(m, data.zx_row(i));
  }
  t1 /= static_cast<double>(data.n());
  CHECK(t1 == Approx(0.2820947918).margin(0.01));
}

TEST_CASE("series PS with a constant-only basis returns the treatment mean") {
  const Dataset data = probit_truth_sample(400, 59);
  const PsModel m = fit_series_ps(data, BasisSpec{0, true, 0.0});
  const double mean_d = data.d.mean();
  CHECK(propensity(m, point1(-0.3)) == Approx(mean_d).epsilon(1e-10));
  CHECK(propensity(m, point1(1.2)) == Approx(mean_d).epsilon(1e-10));
  CHECK(dP_dz1(m, point1(0.0)) == Approx(0.0).margin(1e-15));
}

TEST_CASE("series PS nests a polynomial truth") {
  // D ~ Bernoulli(P0(z)) with P0 a cubic polynomial in z on a bounded range
  Rng rng(61);
  const Eigen::Index n = 20'000;
  Dataset data;
  data.y.resize(n);
  data.d.resize(n);
  data.z.resize(n, 1);
  data.x.resize(n, 0);
  MatrixXd rows;
  auto p0 = [](double z) { return 0.5 + 0.3 * z - 0.1 * z * z * z; };
  for (Eigen::Index i = 0; i < n; ++i) {
    const double z = 2.0 * rng.uniform() - 1.0;
    data.z(i, 0) = z;
    data.d[i] = rng.uniform() < p0(z) ? 1.0 : 0.0;
    data.y[i] = rng.normal();
  }
  const PsModel m = fit_series_ps(data, BasisSpec{3, true, 0.0});
  // exact least-squares reproduction on the sample points when the target is
  // replaced by the polynomial itself
  MonomialBasis basis(BasisSpec{3, true, 0.0}, 1);
  MatrixXd design(n, basis.size());
  VectorXd target(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    design.row(i) = basis.row(data.z.row(i).transpose());
    target[i] = p0(data.z(i, 0));
  }
  const SeriesFit fit = ridge_fit(basis, design, target, 0.0);
  for (Eigen::Index i = 0; i < 50; ++i) {
    CHECK(design.row(i).dot(fit.b) == Approx(target[i]).margin(1e-8));
  }
  // the fitted PS is close to the truth in the interior
  CHECK(propensity(m, point1(0.0)) == Approx(0.5).margin(0.02));
}
