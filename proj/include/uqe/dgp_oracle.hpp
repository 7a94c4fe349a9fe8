#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "uqe/dataset.hpp"
#include "uqe/errors.hpp"
#include "uqe/math/brent.hpp"
#include "uqe/math/gauss_legendre.hpp"
#include "uqe/math/normal.hpp"
#include "uqe/rng.hpp"

namespace uqe {

// Gaussian threshold-crossing designs:
//   plain:      Y(0) = U0, Y(1) = beta + U1,     D = 1{V <= Z}
//   covariate:  Y(0) = X + U0, Y(1) = X + beta + U1, D = 1{V <= Z + X}
// (U0, V) and (U1, V) are standard bivariate normal pairs with correlation
// rho; Z (and X) are independent standard normal. The latents are drawn as
// U_d = rho V + sqrt(1-rho^2) eps_d, which realizes those pairwise laws for
// every |rho| < 1. The observed distribution depends only on the (U_d, V)
// margins because each unit reveals a single potential outcome.
enum class DgpVariant { plain, covariate };

struct DgpSpec {
  DgpVariant variant = DgpVariant::plain;
  double beta = 0.0;
  double rho = 0.0;
  std::uint64_t seed = 1;

  void validate() const {
    require(std::isfinite(beta), ErrorKind::invalid_input,
            "dgp: beta must be finite");
    // Cholesky of the (U_d, V) correlation block [[1, rho], [rho, 1]]:
    // the 2,2 pivot is 1 - rho^2, which must be positive.
    require(std::isfinite(rho) && 1.0 - rho * rho > 0.0,
            ErrorKind::invalid_input,
            "dgp: latent correlation matrix is not positive definite "
            "(need |rho| < 1)");
  }
};

struct OracleResult {
  double tau = 0.0;
  double y_tau = 0.0;
  double f_y_tau = 0.0;
  double pi_tau = 0.0;
  double a_tau = 0.0;
  double b1_tau = 0.0;
  double b2_tau = 0.0;
};

struct LatentDraws {
  VectorXd u0, u1, v;
};

inline Dataset generate_sample(const DgpSpec& spec, Eigen::Index n,
                               LatentDraws* latents = nullptr) {
  spec.validate();
  require(n >= 1, ErrorKind::invalid_input, "generate_sample: n >= 1");
  const double s = std::sqrt(1.0 - spec.rho * spec.rho);
  const bool cov = spec.variant == DgpVariant::covariate;
  Rng rng(spec.seed);

  Dataset data;
  data.y.resize(n);
  data.d.resize(n);
  data.z.resize(n, 1);
  data.x.resize(n, cov ? 1 : 0);
  if (latents != nullptr) {
    latents->u0.resize(n);
    latents->u1.resize(n);
    latents->v.resize(n);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const double v = rng.normal();
    const double u0 = spec.rho * v + s * rng.normal();
    const double u1 = spec.rho * v + s * rng.normal();
    const double z = rng.normal();
    const double x = cov ? rng.normal() : 0.0;
    const double mu = cov ? z + x : z;
    const double q = cov ? x : 0.0;
    const double d = (v <= mu) ? 1.0 : 0.0;
    data.z(i, 0) = z;
    if (cov) data.x(i, 0) = x;
    data.d[i] = d;
    data.y[i] = (d == 1.0) ? q + spec.beta + u1 : q + u0;
    if (latents != nullptr) {
      latents->u0[i] = u0;
      latents->u1[i] = u1;
      latents->v[i] = v;
    }
  }
  return data;
}

// ---------------------------------------------------------------------------
// Quadrature oracle. Integrals over the latent/instrument space truncated to
// +/- lim standard deviations; composite 64-node Gauss-Legendre per axis.
// Conditional laws are hard-coded: U_d | V=v ~ N(rho v, 1 - rho^2); the
// bivariate probabilities appear only as single integrals of normal CDFs.
// ---------------------------------------------------------------------------
struct OracleSettings {
  double lim = 8.0;
  int panels_1d = 8;   // plain-variant axes
  int panels_2d = 4;   // covariate-variant axes (cost grows cubically)
};

namespace oracle_detail {

inline double clamp01(double t) { return std::clamp(t, 0.0, 1.0); }

class Evaluator {
 public:
  Evaluator(const DgpSpec& spec, const OracleSettings& st)
      : spec_(spec), st_(st), s_(std::sqrt(1.0 - spec.rho * spec.rho)),
        cov_(spec.variant == DgpVariant::covariate),
        panels_(cov_ ? st.panels_2d : st.panels_1d) {
    spec_.validate();
    c_ = weight_normalizer();
  }

  // E[f_V(mu(W))], the normalizer of the RN weight Pdot.
  double weight_normalizer() const {
    if (!cov_) {
      return integrate(
          [](double z) { return normal_pdf(z) * normal_pdf(z); }, -st_.lim,
          st_.lim, panels_);
    }
    return integrate(
        [&](double x) {
          return normal_pdf(x) * integrate(
                                     [&](double z) {
                                       return normal_pdf(z + x) *
                                              normal_pdf(z);
                                     },
                                     -st_.lim, st_.lim, panels_);
        },
        -st_.lim, st_.lim, panels_);
  }

  double pdot(double mu) const { return normal_pdf(mu) / c_; }

  // F_{U0|V}(a | v) = Phi((a - rho v)/s); same law for U1.
  double cond_cdf(double a, double v) const {
    return normal_cdf((a - spec_.rho * v) / s_);
  }
  double cond_pdf(double a, double v) const {
    return normal_pdf((a - spec_.rho * v) / s_) / s_;
  }

  // Pr(Y <= y) via the two selection branches, integrating over V and the
  // independent Z (Pr(Z < v) = Phi(v)), plus X for the covariate variant.
  double cdf_y(double y) const {
    auto branch = [&](double q, double shift) {
      // for fixed covariate value q with mu = z + shift; plain: shift = 0
      return integrate(
          [&](double v) {
            const double d0 =
                cond_cdf(y - q, v) * normal_cdf(v - shift);  // D=0: V > Z+shift
            const double d1 = cond_cdf(y - q - spec_.beta, v) *
                              normal_sf(v - shift);  // D=1
            return (d0 + d1) * normal_pdf(v);
          },
          -st_.lim, st_.lim, panels_);
    };
    // note: D=0 requires V > mu, i.e. Z + shift < V -> weight Phi(v - shift)
    if (!cov_) return branch(0.0, 0.0);
    return integrate(
        [&](double x) { return normal_pdf(x) * branch(x, x); }, -st_.lim,
        st_.lim, panels_);
  }

  double pdf_y(double y) const {
    auto branch = [&](double q, double shift) {
      return integrate(
          [&](double v) {
            const double d0 = cond_pdf(y - q, v) * normal_cdf(v - shift);
            const double d1 =
                cond_pdf(y - q - spec_.beta, v) * normal_sf(v - shift);
            return (d0 + d1) * normal_pdf(v);
          },
          -st_.lim, st_.lim, panels_);
    };
    if (!cov_) return branch(0.0, 0.0);
    return integrate(
        [&](double x) { return normal_pdf(x) * branch(x, x); }, -st_.lim,
        st_.lim, panels_);
  }

  double quantile_y(double tau) const {
    return brent_root([&](double y) { return cdf_y(y) - tau; }, -10.0, 10.0,
                      1e-10);
  }

  // Pi numerator: E[{F_{U0|V}(y-q|mu) - F_{U1|V}(y-q-beta|mu)} f_V(mu(W))].
  double pi_numerator(double y) const {
    auto inner = [&](double q, double mu) {
      return cond_cdf(y - q, mu) - cond_cdf(y - q - spec_.beta, mu);
    };
    if (!cov_) {
      return integrate(
          [&](double z) {
            return inner(0.0, z) * normal_pdf(z) * normal_pdf(z);
          },
          -st_.lim, st_.lim, panels_);
    }
    return integrate(
        [&](double x) {
          return normal_pdf(x) *
                 integrate(
                     [&](double z) {
                       return inner(x, z + x) * normal_pdf(z + x) *
                              normal_pdf(z);
                     },
                     -st_.lim, st_.lim, panels_);
        },
        -st_.lim, st_.lim, panels_);
  }

  // Conditional-on-treatment CDFs at threshold a given mu(w) = mu:
  //   F_{Y(1)|D=1}: int_{-lim}^{mu} F_{U1|V}(a - beta | v) phi(v) dv / Phi(mu)
  //   F_{Y(0)|D=0}: int_{mu}^{lim}  F_{U0|V}(a | v) phi(v) dv / (1-Phi(mu))
  double cdf_treated(double a, double mu) const {
    const double num = integrate(
        [&](double v) {
          return cond_cdf(a - spec_.beta, v) * normal_pdf(v);
        },
        -st_.lim, std::min(mu, st_.lim), panels_);
    return clamp01(num / std::max(normal_cdf(mu), 1e-300));
  }

  double cdf_untreated(double a, double mu) const {
    const double num = integrate(
        [&](double v) { return cond_cdf(a, v) * normal_pdf(v); },
        std::max(mu, -st_.lim), st_.lim, panels_);
    return clamp01(num / std::max(normal_sf(mu), 1e-300));
  }

  struct BiasParts {
    double a = 0.0, b1 = 0.0, b2 = 0.0;

    BiasParts& axpy(double w, const BiasParts& o) {
      a += w * o.a;
      b1 += w * o.b1;
      b2 += w * o.b2;
      return *this;
    }
  };

  // One pass over the covariate space computing the apparent effect and both
  // bias components (all scaled by f_Y(y_tau) afterwards).
  BiasParts bias_numerators(double y) const {
    auto point = [&](double q, double mu) {
      const double f1 = cdf_treated(y - q, mu);
      const double f0 = cdf_untreated(y - q, mu);
      const double g1 = cond_cdf(y - q - spec_.beta, mu);  // F_{Y(1)|U_D,W}
      const double g0 = cond_cdf(y - q, mu);               // F_{Y(0)|U_D,W}
      const double pd = pdot(mu);
      BiasParts out;
      out.a = f0 - f1;
      out.b1 = (f1 - f0) * (pd - 1.0);
      out.b2 = ((f0 - g0) - (f1 - g1)) * pd;
      return out;
    };
    if (!cov_) {
      return integrate_parts([&](double z, BiasParts& sum, double w) {
        sum.axpy(w * normal_pdf(z), point(0.0, z));
      });
    }
    return integrate_parts([&](double x, BiasParts& sum, double wx) {
      integrate_parts_into(sum, [&](double z, BiasParts& s, double wz) {
        s.axpy(wx * wz * normal_pdf(x) * normal_pdf(z), point(x, z + x));
      });
    });
  }

  double normalizer() const { return c_; }

 private:
  // Composite GL sweep over [-lim, lim] accumulating BiasParts through a
  // callback of the form f(node, sum, weight).
  template <typename F>
  void integrate_parts_into(BiasParts& sum, F&& f) const {
    const auto& rule = gl64();
    const double step = 2.0 * st_.lim / panels_;
    for (int p = 0; p < panels_; ++p) {
      const double mid = -st_.lim + (p + 0.5) * step;
      const double half = 0.5 * step;
      for (int i = 0; i < 64; ++i) {
        f(mid + half * rule.node[i], sum, rule.weight[i] * half);
      }
    }
  }

  template <typename F>
  BiasParts integrate_parts(F&& f) const {
    BiasParts sum;
    integrate_parts_into(sum, f);
    return sum;
  }
  DgpSpec spec_;
  OracleSettings st_;
  double s_;
  bool cov_;
  int panels_;
  double c_;
};

}  // namespace oracle_detail

// True unconditional quantile effect with y_tau and f_Y(y_tau).
inline OracleResult true_uqe(const DgpSpec& spec, double tau,
                             const OracleSettings& settings = {}) {
  require(tau > 0.0 && tau < 1.0, ErrorKind::invalid_input,
          "true_uqe: tau must lie in (0,1)");
  oracle_detail::Evaluator ev(spec, settings);
  OracleResult res;
  res.tau = tau;
  res.y_tau = ev.quantile_y(tau);
  res.f_y_tau = ev.pdf_y(res.y_tau);
  require(res.f_y_tau > 0.0, ErrorKind::quadrature_failure,
          "true_uqe: nonpositive density at y_tau");
  res.pi_tau = ev.pi_numerator(res.y_tau) / (res.f_y_tau * ev.normalizer());
  return res;
}

// Probability limit of the UQR estimator that ignores endogeneity.
inline double apparent_effect(const DgpSpec& spec, double tau,
                              const OracleSettings& settings = {}) {
  oracle_detail::Evaluator ev(spec, settings);
  const double y_tau = ev.quantile_y(tau);
  const double f = ev.pdf_y(y_tau);
  return ev.bias_numerators(y_tau).a / f;
}

// Full decomposition Pi = A - B1 - B2, each term by its own quadrature;
// the identity is then verified as an internal-consistency check.
inline OracleResult bias_decomposition(const DgpSpec& spec, double tau,
                                       const OracleSettings& settings = {}) {
  OracleResult res = true_uqe(spec, tau, settings);
  oracle_detail::Evaluator ev(spec, settings);
  const auto parts = ev.bias_numerators(res.y_tau);
  res.a_tau = parts.a / res.f_y_tau;
  res.b1_tau = parts.b1 / res.f_y_tau;
  res.b2_tau = parts.b2 / res.f_y_tau;
  const double gap =
      std::fabs(res.a_tau - res.pi_tau - res.b1_tau - res.b2_tau);
  require(gap <= 1e-6, ErrorKind::internal_consistency,
          "bias_decomposition: A - Pi != B1 + B2 (gap " + std::to_string(gap) +
              ")");
  return res;
}

struct BiasCurveRow {
  double tau = 0.0;
  double rho = 0.0;
  double pi = 0.0;
  double a = 0.0;
  double b1 = 0.0;
  double b2 = 0.0;
};

inline std::vector<BiasCurveRow> bias_curve(const DgpSpec& base,
                                            const std::vector<double>& taus,
                                            const std::vector<double>& rhos,
                                            const OracleSettings& settings = {}) {
  std::vector<BiasCurveRow> rows;
  rows.reserve(taus.size() * rhos.size());
  for (double rho : rhos) {
    DgpSpec spec = base;
    spec.rho = rho;
    for (double tau : taus) {
      const OracleResult r = bias_decomposition(spec, tau, settings);
      rows.push_back({tau, rho, r.pi_tau, r.a_tau, r.b1_tau, r.b2_tau});
    }
  }
  return rows;
}

}  // namespace uqe
