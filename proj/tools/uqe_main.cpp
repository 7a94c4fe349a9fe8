// uqe: unconditional quantile effects of an endogenous binary treatment.
//
// Subcommands: estimate, mean-effect, mte-curve, power, coverage, rmse,
// bias, oracle. See README.md for the input CSV schema and examples.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "uqe/core_stats.hpp"
#include "uqe/dgp_oracle.hpp"
#include "uqe/errors.hpp"
#include "uqe/io.hpp"
#include "uqe/mc_harness.hpp"
#include "uqe/uqe_engine.hpp"
#include "uqe/version.hpp"

using nlohmann::json;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitEstimation = 3;
constexpr int kExitConsistency = 4;

struct CommonOpts {
  double tau = 0.5;
  std::string tau_grid;
  std::string link = "probit";
  int degree = 3;
  bool no_interactions = false;
  double lambda = 0.0;
  std::string bandwidth = "silverman";
  double level = 0.95;
  double fd_epsilon_factor = 1.0;
  std::string beta = "0";
  std::string rho = "0";
  long long n = 1000;
  int reps = 1000;
  unsigned long long seed = 1;
  int threads = 0;
  std::string variant = "plain";
  std::string out;
  std::string format = "csv";
  bool strict = false;
  std::string input;
  std::string u_grid;
  bool emit_sample = false;
};

std::vector<double> parse_list(const std::string& text, const char* what) {
  // comma list "0.1,0.2" or range "lo:hi:count"
  std::vector<double> out;
  const auto fail = [&](const std::string& msg) {
    uqe::throw_error(uqe::ErrorKind::invalid_input,
                     std::string(what) + ": " + msg + " ('" + text + "')");
  };
  if (text.find(':') != std::string::npos) {
    double lo = 0, hi = 0;
    int count = 0;
    char c1 = 0, c2 = 0;
    std::stringstream ss(text);
    if (!(ss >> lo >> c1 >> hi >> c2 >> count) || c1 != ':' || c2 != ':' ||
        count < 2 || ss.rdbuf()->in_avail() > 0) {
      fail("expected lo:hi:count");
    }
    for (int i = 0; i < count; ++i) {
      out.push_back(lo + (hi - lo) * i / (count - 1));
    }
    return out;
  }
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(tok, &pos));
      if (pos != tok.size()) fail("bad number '" + tok + "'");
    } catch (const uqe::Error&) {
      throw;
    } catch (...) {
      fail("bad number '" + tok + "'");
    }
  }
  if (out.empty()) fail("empty list");
  return out;
}

uqe::EstimationConfig make_config(const CommonOpts& o) {
  uqe::EstimationConfig cfg;
  cfg.tau = o.tau;
  if (o.link == "logit") {
    cfg.link = uqe::PsKind::logit;
  } else if (o.link == "probit") {
    cfg.link = uqe::PsKind::probit;
  } else if (o.link == "series") {
    cfg.link = uqe::PsKind::series;
  } else {
    uqe::throw_error(uqe::ErrorKind::invalid_input,
                     "--link must be logit, probit or series");
  }
  cfg.basis.degree = o.degree;
  cfg.basis.interactions = !o.no_interactions;
  cfg.basis.lambda = o.lambda;
  cfg.ci_level = o.level;
  cfg.fd_epsilon_factor = o.fd_epsilon_factor;
  if (o.bandwidth == "silverman") {
    cfg.bandwidth = {uqe::BandwidthKind::silverman, 0.0};
  } else if (o.bandwidth.rfind("fixed:", 0) == 0) {
    cfg.bandwidth = {uqe::BandwidthKind::fixed,
                     parse_list(o.bandwidth.substr(6), "--bandwidth")[0]};
  } else {
    uqe::throw_error(uqe::ErrorKind::invalid_input,
                     "--bandwidth must be 'silverman' or 'fixed:<h>'");
  }
  cfg.validate();
  return cfg;
}

uqe::DgpVariant make_variant(const CommonOpts& o) {
  if (o.variant == "plain") return uqe::DgpVariant::plain;
  if (o.variant == "covariate") return uqe::DgpVariant::covariate;
  uqe::throw_error(uqe::ErrorKind::invalid_input,
                   "--variant must be plain or covariate");
}

json manifest_json(const std::string& command, const CommonOpts& o) {
  json m;
  m["tool"] = "uqe";
  m["version"] = uqe::k_version;
  m["versions"] = {
      {"uqe", uqe::k_version},
      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                    std::to_string(EIGEN_MAJOR_VERSION) + "." +
                    std::to_string(EIGEN_MINOR_VERSION)},
#if defined(__VERSION__)
      {"compiler", __VERSION__},
#endif
  };
  m["command"] = command;
  m["tau"] = o.tau;
  m["tau_grid"] = o.tau_grid;
  m["link"] = o.link;
  m["degree"] = o.degree;
  m["interactions"] = !o.no_interactions;
  m["lambda"] = o.lambda;
  m["bandwidth"] = o.bandwidth;
  m["level"] = o.level;
  m["fd_epsilon_factor"] = o.fd_epsilon_factor;
  m["beta"] = o.beta;
  m["rho"] = o.rho;
  m["n"] = o.n;
  m["reps"] = o.reps;
  m["seed"] = o.seed;
  m["threads"] = o.threads;
  m["variant"] = o.variant;
  m["format"] = o.format;
  m["strict"] = o.strict;
  m["input"] = o.input;
  m["out"] = o.out;
  m["u_grid"] = o.u_grid;
  return m;
}

void emit(const CommonOpts& o, const std::string& command,
          const uqe::CsvTable& table, const json& extra = json::object()) {
  const json manifest = manifest_json(command, o);
  std::ostringstream payload;
  if (o.format == "json") {
    json doc;
    doc["manifest"] = manifest;
    doc["columns"] = table.header;
    doc["rows"] = table.rows;
    for (auto it = extra.begin(); it != extra.end(); ++it) {
      doc[it.key()] = it.value();
    }
    payload << doc.dump(2) << "\n";
  } else if (o.format == "csv") {
    table.write(payload);
  } else {
    uqe::throw_error(uqe::ErrorKind::invalid_input,
                     "--format must be csv or json");
  }
  if (o.out.empty()) {
    std::cout << payload.str();
    return;
  }
  std::ofstream f(o.out);
  uqe::require(f.good(), uqe::ErrorKind::invalid_input,
               "cannot open output file " + o.out);
  f << payload.str();
  std::ofstream mf(o.out + ".manifest.json");
  mf << manifest.dump(2) << "\n";
  std::cerr << "wrote " << o.out << " and " << o.out << ".manifest.json\n";
}

std::vector<double> tau_values(const CommonOpts& o) {
  if (!o.tau_grid.empty()) return parse_list(o.tau_grid, "--tau-grid");
  return {o.tau};
}

// ---------------------------------------------------------------------------

int cmd_estimate(const CommonOpts& o) {
  const uqe::Dataset data = uqe::read_dataset_csv(o.input);
  uqe::CsvTable table;
  table.header = {"tau",  "pi_hat", "se",    "ci_lo", "ci_hi", "y_tau",
                  "f_hat", "t1",     "t2",    "h",     "n",     "ps_clamp_rate"};
  for (double tau : tau_values(o)) {
    uqe::EstimationConfig cfg = make_config(o);
    cfg.tau = tau;
    const uqe::UqeEstimate est = uqe::estimate_uqe(data, cfg);
    const double se =
        std::sqrt(est.v_tau / (static_cast<double>(est.n) * est.h));
    table.rows.push_back({tau, est.pi_hat, se, est.ci_lo, est.ci_hi, est.y_tau,
                          est.f_hat, est.t1, est.t2, est.h,
                          static_cast<double>(est.n), est.ps.clamp_rate});
  }
  emit(o, "estimate", table);
  return 0;
}

int cmd_mean_effect(const CommonOpts& o) {
  const uqe::Dataset data = uqe::read_dataset_csv(o.input);
  const uqe::MeanEffectEstimate est =
      uqe::estimate_mean_effect(data, make_config(o));
  const double se = std::sqrt(est.v / static_cast<double>(est.n));
  uqe::CsvTable table;
  table.header = {"pi_hat", "se", "ci_lo", "ci_hi", "t1", "t2", "n"};
  table.rows.push_back({est.pi_hat, se, est.ci_lo, est.ci_hi, est.t1, est.t2,
                        static_cast<double>(est.n)});
  emit(o, "mean-effect", table);
  return 0;
}

int cmd_mte_curve(const CommonOpts& o) {
  const uqe::Dataset data = uqe::read_dataset_csv(o.input);
  const uqe::EstimationConfig cfg = make_config(o);
  const uqe::PsModel ps = (cfg.link == uqe::PsKind::series)
                              ? uqe::fit_series_ps(data, cfg.basis)
                              : uqe::fit_mle(data, cfg.link);
  std::vector<double> grid;
  if (!o.u_grid.empty()) {
    grid = parse_list(o.u_grid, "--u-grid");
  } else {
    // default: interior deciles of the fitted propensity scores
    uqe::VectorXd p(data.n());
    for (Eigen::Index i = 0; i < data.n(); ++i) {
      p[i] = uqe::propensity(ps, data.zx_row(i));
    }
    for (int k = 1; k <= 9; ++k) {
      grid.push_back(uqe::empirical_quantile(p, k / 10.0));
    }
  }
  const auto curve = uqe::mte_tau_curve(data, ps, cfg, grid);
  uqe::CsvTable table;
  table.header = {"u", "mte_tau"};
  for (std::size_t i = 0; i < grid.size(); ++i) {
    table.rows.push_back({grid[i], curve[i]});
  }
  emit(o, "mte-curve", table);
  return 0;
}

int run_experiment_cmd(const CommonOpts& o, uqe::ExperimentKind kind,
                       const std::string& name) {
  uqe::ExperimentPlan plan;
  plan.kind = kind;
  plan.config = make_config(o);
  plan.variant = make_variant(o);
  if (kind == uqe::ExperimentKind::power) {
    plan.beta_grid = o.beta.empty() ? parse_list("-1:1:25", "--beta")
                                    : parse_list(o.beta, "--beta");
    plan.tau_grid = o.tau_grid.empty()
                        ? std::vector<double>{0.1, 0.2, 0.3, 0.4}
                        : parse_list(o.tau_grid, "--tau-grid");
  } else {
    plan.beta_grid = parse_list(o.beta, "--beta");
    plan.tau_grid = tau_values(o);
  }
  plan.rho_grid = parse_list(o.rho, "--rho");
  plan.n = static_cast<Eigen::Index>(o.n);
  plan.replications = o.reps;
  plan.seed = o.seed;
  plan.threads = o.threads;
  const uqe::ExperimentResult res = uqe::run_experiment(plan);

  uqe::CsvTable table;
  table.header = {"beta", "rho",   "tau",    "value",
                  "mc_se", "n_ok",  "n_fail", "oracle_pi"};
  bool any_flagged = false;
  json fail_detail = json::array();
  for (const auto& c : res.cells) {
    table.rows.push_back({c.beta, c.rho, c.tau, c.value, c.mc_se,
                          static_cast<double>(c.n_ok),
                          static_cast<double>(c.n_fail), c.oracle_pi});
    any_flagged |= c.flagged;
    if (!c.failures.empty()) {
      json f;
      f["beta"] = c.beta;
      f["rho"] = c.rho;
      f["tau"] = c.tau;
      f["failures"] = c.failures;
      fail_detail.push_back(f);
    }
  }
  json extra;
  extra["failures"] = fail_detail;
  emit(o, name, table, extra);
  if (o.strict && any_flagged) {
    std::cerr << name << ": flagged cells (>5% failed replications)\n";
    return kExitEstimation;
  }
  return 0;
}

int cmd_bias(const CommonOpts& o) {
  uqe::DgpSpec base;
  base.variant = make_variant(o);
  base.beta = parse_list(o.beta, "--beta")[0];
  base.seed = o.seed;
  const auto taus = o.tau_grid.empty()
                        ? parse_list("0.1:0.9:9", "--tau-grid")
                        : parse_list(o.tau_grid, "--tau-grid");
  const auto rhos = parse_list(o.rho, "--rho");
  const auto rows = uqe::bias_curve(base, taus, rhos);
  uqe::CsvTable table;
  table.header = {"tau", "rho", "pi", "a", "b1", "b2", "b"};
  for (const auto& r : rows) {
    table.rows.push_back(
        {r.tau, r.rho, r.pi, r.a, r.b1, r.b2, r.a - r.pi});
  }
  emit(o, "bias", table);
  return 0;
}

int cmd_oracle(const CommonOpts& o) {
  uqe::DgpSpec spec;
  spec.variant = make_variant(o);
  spec.beta = parse_list(o.beta, "--beta")[0];
  spec.rho = parse_list(o.rho, "--rho")[0];
  spec.seed = o.seed;
  if (o.emit_sample) {
    const uqe::Dataset data =
        uqe::generate_sample(spec, static_cast<Eigen::Index>(o.n));
    std::ostringstream payload;
    uqe::write_dataset_csv(data, payload);
    if (o.out.empty()) {
      std::cout << payload.str();
    } else {
      std::ofstream f(o.out);
      uqe::require(f.good(), uqe::ErrorKind::invalid_input,
                   "cannot open output file " + o.out);
      f << payload.str();
      std::ofstream mf(o.out + ".manifest.json");
      mf << manifest_json("oracle --emit-sample", o).dump(2) << "\n";
    }
    return 0;
  }
  uqe::CsvTable table;
  table.header = {"tau", "rho", "beta", "y_tau", "f_y_tau",
                  "pi",  "a",   "b1",   "b2"};
  for (double tau : tau_values(o)) {
    const uqe::OracleResult r = uqe::bias_decomposition(spec, tau);
    table.rows.push_back({tau, spec.rho, spec.beta, r.y_tau, r.f_y_tau,
                          r.pi_tau, r.a_tau, r.b1_tau, r.b2_tau});
  }
  emit(o, "oracle", table);
  return 0;
}

// key=value configuration file. Each key maps to the flag of the same name;
// explicitly passed flags win. Unknown keys surface as unknown flags.
std::vector<std::string> apply_config_file(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] == "--config") {
      path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
                 args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      break;
    }
  }
  if (path.empty()) return args;
  std::ifstream f(path);
  uqe::require(f.good(), uqe::ErrorKind::invalid_input,
               "cannot open config file " + path);
  std::string line;
  while (std::getline(f, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto eq = line.find('=');
    uqe::require(eq != std::string::npos, uqe::ErrorKind::invalid_input,
                 "config: expected key=value, got '" + line + "'");
    auto trim = [](std::string s) {
      const auto b2 = s.find_first_not_of(" \t\r");
      const auto e2 = s.find_last_not_of(" \t\r");
      return b2 == std::string::npos ? std::string()
                                     : s.substr(b2, e2 - b2 + 1);
    };
    const std::string key = "--" + trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (std::find(args.begin(), args.end(), key) != args.end()) continue;
    args.push_back(key);
    const bool flag_like = value == "true" || value == "false";
    if (!flag_like) {
      args.push_back(value);
    } else if (value == "false") {
      args.pop_back();  // absent flag means false
    }
  }
  return args;
}

void add_common_flags(CLI::App* cmd, CommonOpts& o, bool with_data_flags) {
  cmd->add_option("--tau", o.tau, "quantile level in (0,1)");
  cmd->add_option("--tau-grid", o.tau_grid,
                  "quantile levels: comma list or lo:hi:count");
  cmd->add_option("--link", o.link, "propensity model: logit|probit|series");
  cmd->add_option("--degree", o.degree, "series polynomial degree");
  cmd->add_flag("--no-interactions", o.no_interactions,
                "per-coordinate powers only, no cross terms");
  cmd->add_option("--lambda", o.lambda, "ridge penalty (constant exempt)");
  cmd->add_option("--bandwidth", o.bandwidth, "silverman or fixed:<h>");
  cmd->add_option("--level", o.level, "confidence level");
  cmd->add_option("--fd-epsilon-factor", o.fd_epsilon_factor,
                  "multiplier on h for the y-direction difference");
  cmd->add_option("--out", o.out, "output path (default stdout)");
  cmd->add_option("--format", o.format, "csv|json");
  if (with_data_flags) {
    cmd->add_option("--beta", o.beta, "treatment effect(s)");
    cmd->add_option("--rho", o.rho, "endogeneity value(s)");
    cmd->add_option("--n", o.n, "observations per sample");
    cmd->add_option("--reps", o.reps, "Monte Carlo replications");
    cmd->add_option("--seed", o.seed, "RNG seed");
    cmd->add_option("--threads", o.threads, "worker threads (0 = all)");
    cmd->add_option("--variant", o.variant, "DGP variant: plain|covariate");
    cmd->add_flag("--strict", o.strict,
                  "nonzero exit when any cell has >5% failures");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unconditional quantile effects under endogenous treatment"};
  app.require_subcommand(1);

  CommonOpts o;

  auto* c_est = app.add_subcommand("estimate", "estimate the UQE from a CSV");
  c_est->add_option("input", o.input, "input CSV (y,d,z1[,z2..][,x1..])")
      ->required();
  add_common_flags(c_est, o, false);

  auto* c_mean =
      app.add_subcommand("mean-effect", "mean-functional effect from a CSV");
  c_mean->add_option("input", o.input, "input CSV")->required();
  add_common_flags(c_mean, o, false);

  auto* c_mte = app.add_subcommand("mte-curve",
                                   "unconditional MTE curve over u grid");
  c_mte->add_option("input", o.input, "input CSV")->required();
  c_mte->add_option("--u-grid", o.u_grid, "propensity grid (comma list)");
  add_common_flags(c_mte, o, false);

  auto* c_pow = app.add_subcommand("power", "power of the no-effect test");
  add_common_flags(c_pow, o, true);

  auto* c_cov = app.add_subcommand("coverage", "CI coverage of oracle effect");
  add_common_flags(c_cov, o, true);

  auto* c_rmse = app.add_subcommand("rmse", "RMSE against the oracle effect");
  add_common_flags(c_rmse, o, true);

  auto* c_bias = app.add_subcommand("bias", "oracle bias decomposition table");
  add_common_flags(c_bias, o, true);

  auto* c_orc = app.add_subcommand("oracle", "oracle values / sample emission");
  c_orc->add_flag("--emit-sample", o.emit_sample,
                  "write a simulated sample CSV instead of oracle values");
  add_common_flags(c_orc, o, true);

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = apply_config_file(std::move(args));
    // CLI11 consumes arguments in reverse order
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  } catch (const uqe::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    if (c_est->parsed()) return cmd_estimate(o);
    if (c_mean->parsed()) return cmd_mean_effect(o);
    if (c_mte->parsed()) return cmd_mte_curve(o);
    if (c_pow->parsed()) {
      if (c_pow->get_option("--beta")->count() == 0) o.beta = "-1:1:25";
      if (c_pow->get_option("--rho")->count() == 0) {
        o.rho = "0,0.25,0.5,0.75,0.9";
      }
      return run_experiment_cmd(o, uqe::ExperimentKind::power, "power");
    }
    if (c_cov->parsed()) {
      if (c_cov->get_option("--beta")->count() == 0) {
        o.beta = "-1,-0.5,-0.25,0,0.25,0.5,1";
      }
      if (c_cov->get_option("--rho")->count() == 0) {
        o.rho = "0,0.25,0.5,0.75,0.9";
      }
      if (o.tau_grid.empty()) o.tau_grid = "0.1:0.9:9";
      return run_experiment_cmd(o, uqe::ExperimentKind::coverage, "coverage");
    }
    if (c_rmse->parsed()) {
      return run_experiment_cmd(o, uqe::ExperimentKind::rmse, "rmse");
    }
    if (c_bias->parsed()) return cmd_bias(o);
    if (c_orc->parsed()) return cmd_oracle(o);
  } catch (const uqe::Error& e) {
    std::cerr << "error (" << uqe::Error::kind_name(e.kind()) << "): "
              << e.what() << "\n";
    switch (e.kind()) {
      case uqe::ErrorKind::invalid_input:
        return kExitValidation;
      case uqe::ErrorKind::internal_consistency:
        return kExitConsistency;
      default:
        return kExitEstimation;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitEstimation;
  }
  return 0;
}
