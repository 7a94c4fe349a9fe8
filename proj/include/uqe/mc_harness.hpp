#pragma once

#include <atomic>
#include <cmath>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "uqe/dgp_oracle.hpp"
#include "uqe/errors.hpp"
#include "uqe/rng.hpp"
#include "uqe/uqe_engine.hpp"

namespace uqe {

enum class ExperimentKind { power, coverage, rmse };

inline const char* experiment_kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::power: return "power";
    case ExperimentKind::coverage: return "coverage";
    case ExperimentKind::rmse: return "rmse";
  }
  return "?";
}

struct ExperimentPlan {
  ExperimentKind kind = ExperimentKind::coverage;
  std::vector<double> beta_grid{0.0};
  std::vector<double> rho_grid{0.0};
  std::vector<double> tau_grid{0.5};
  Eigen::Index n = 1000;
  int replications = 1000;
  std::uint64_t seed = 1;
  EstimationConfig config{};
  DgpVariant variant = DgpVariant::plain;
  int threads = 0;          // 0 -> hardware concurrency
  bool keep_draws = false;  // retain the per-replication statistic/estimate

  void validate() const {
    require(!beta_grid.empty() && !rho_grid.empty() && !tau_grid.empty(),
            ErrorKind::invalid_input, "plan: grids must be nonempty");
    require(replications >= 1, ErrorKind::invalid_input,
            "plan: replications >= 1");
    require(n >= 10, ErrorKind::invalid_input, "plan: n too small");
    config.validate();
  }
};

struct CellResult {
  double beta = 0.0;
  double rho = 0.0;
  double tau = 0.0;
  double oracle_pi = 0.0;
  double value = 0.0;  // rejection rate / coverage rate / rmse
  double mc_se = 0.0;
  int n_ok = 0;
  int n_fail = 0;
  bool flagged = false;  // more than 5% failed replications
  std::map<std::string, int> failures;
  std::vector<double> draws;  // per-replication statistic when kept
};

struct ExperimentResult {
  ExperimentKind kind = ExperimentKind::coverage;
  std::vector<CellResult> cells;
};

namespace detail {

template <typename F>
void parallel_for(std::size_t count, int threads, F&& body) {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const int workers =
      threads <= 0 ? static_cast<int>(hw) : threads;
  if (workers <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto run = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) break;
      body(i);
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers) - 1);
  for (int t = 0; t < workers - 1; ++t) pool.emplace_back(run);
  run();
  for (auto& th : pool) th.join();
}

struct TaskOut {
  double stat = 0.0;   // kind-specific statistic
  int failed = -1;     // -1 ok, else ErrorKind index
};

struct Cell {
  double beta, rho, tau;
  double oracle_pi = 0.0;
};

}  // namespace detail

// Runs the plan; replications are scheduled over a worker pool with
// counter-based per-replication seeds, so the result is identical for any
// thread count. Failed replications are excluded and tallied by kind.
inline ExperimentResult run_experiment(const ExperimentPlan& plan) {
  plan.validate();
  const bool needs_oracle = plan.kind != ExperimentKind::power;

  std::vector<detail::Cell> cells;
  for (double beta : plan.beta_grid) {
    for (double rho : plan.rho_grid) {
      for (double tau : plan.tau_grid) {
        cells.push_back({beta, rho, tau, 0.0});
      }
    }
  }
  if (needs_oracle) {
    detail::parallel_for(cells.size(), plan.threads, [&](std::size_t c) {
      DgpSpec spec{plan.variant, cells[c].beta, cells[c].rho, 0};
      cells[c].oracle_pi = true_uqe(spec, cells[c].tau).pi_tau;
    });
  }

  const double crit = normal_two_sided_critical(plan.config.ci_level);
  const std::size_t reps = static_cast<std::size_t>(plan.replications);
  std::vector<detail::TaskOut> out(cells.size() * reps);

  detail::parallel_for(out.size(), plan.threads, [&](std::size_t task) {
    const std::size_t c = task / reps;
    const std::size_t r = task % reps;
    const auto& cell = cells[c];
    DgpSpec spec{plan.variant, cell.beta, cell.rho,
                 derive_seed(plan.seed, c, r)};
    EstimationConfig config = plan.config;
    config.tau = cell.tau;
    detail::TaskOut& slot = out[task];
    try {
      const Dataset data = generate_sample(spec, plan.n);
      switch (plan.kind) {
        case ExperimentKind::power: {
          slot.stat = test_no_effect(data, config).statistic;
          break;
        }
        case ExperimentKind::coverage:
        case ExperimentKind::rmse: {
          const UqeEstimate est = estimate_uqe(data, config);
          if (plan.kind == ExperimentKind::coverage) {
            slot.stat = (est.ci_lo <= cell.oracle_pi &&
                         cell.oracle_pi <= est.ci_hi)
                            ? 1.0
                            : 0.0;
          } else {
            slot.stat = est.pi_hat;
          }
          break;
        }
      }
      slot.failed = -1;
    } catch (const Error& e) {
      slot.failed = static_cast<int>(e.kind());
    } catch (const std::exception&) {
      slot.failed = static_cast<int>(ErrorKind::estimation_failure);
    }
  });

  ExperimentResult result;
  result.kind = plan.kind;
  result.cells.reserve(cells.size());
  for (std::size_t c = 0; c < cells.size(); ++c) {
    CellResult cr;
    cr.beta = cells[c].beta;
    cr.rho = cells[c].rho;
    cr.tau = cells[c].tau;
    cr.oracle_pi = cells[c].oracle_pi;
    double acc = 0.0, acc2 = 0.0;
    for (std::size_t r = 0; r < reps; ++r) {
      const auto& slot = out[c * reps + r];
      if (slot.failed >= 0) {
        ++cr.n_fail;
        ++cr.failures[Error::kind_name(static_cast<ErrorKind>(slot.failed))];
        continue;
      }
      ++cr.n_ok;
      double contrib = 0.0;
      switch (plan.kind) {
        case ExperimentKind::power:
          contrib = std::fabs(slot.stat) > crit ? 1.0 : 0.0;
          break;
        case ExperimentKind::coverage:
          contrib = slot.stat;
          break;
        case ExperimentKind::rmse: {
          const double err = slot.stat - cr.oracle_pi;
          contrib = err * err;
          break;
        }
      }
      acc += contrib;
      acc2 += contrib * contrib;
      // raw statistic (test stat / estimate) retained for distribution audits
      if (plan.keep_draws) cr.draws.push_back(slot.stat);
    }
    if (cr.n_ok > 0) {
      const double mean = acc / cr.n_ok;
      if (plan.kind == ExperimentKind::rmse) {
        cr.value = std::sqrt(mean);
        // delta method through the square root
        const double var_mean =
            cr.n_ok > 1
                ? (acc2 - cr.n_ok * mean * mean) / (cr.n_ok * (cr.n_ok - 1.0))
                : 0.0;
        cr.mc_se = cr.value > 0.0
                       ? std::sqrt(std::max(var_mean, 0.0)) / (2.0 * cr.value)
                       : 0.0;
      } else {
        cr.value = mean;
        cr.mc_se = std::sqrt(mean * (1.0 - mean) / cr.n_ok);
      }
    }
    cr.flagged = cr.n_fail > 0.05 * plan.replications;
    result.cells.push_back(std::move(cr));
  }
  return result;
}

inline ExperimentResult run_power(const ExperimentPlan& plan) {
  ExperimentPlan p = plan;
  p.kind = ExperimentKind::power;
  return run_experiment(p);
}

inline ExperimentResult run_coverage(const ExperimentPlan& plan) {
  ExperimentPlan p = plan;
  p.kind = ExperimentKind::coverage;
  return run_experiment(p);
}

inline ExperimentResult run_rmse(const ExperimentPlan& plan) {
  ExperimentPlan p = plan;
  p.kind = ExperimentKind::rmse;
  return run_experiment(p);
}

}  // namespace uqe
