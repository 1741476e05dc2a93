// qrife command-line front end: estimate, simulate, selftest.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "acceptance.hpp"
#include "qrife/error.hpp"
#include "qrife/io.hpp"
#include "qrife/parallel.hpp"
#include "qrife/simulation.hpp"

namespace fs = std::filesystem;

namespace {

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

int resolve_threads(std::optional<int> flag) {
  if (flag) return std::max(1, *flag);
  return qrife::default_thread_count();
}

struct EstimateArgs {
  std::string micro;
  std::string group;
  std::string config;
  std::string out;
  std::optional<int> threads;
};

int run_estimate(const EstimateArgs& a) {
  qrife::RunConfig config = qrife::load_config(a.config);
  if (!config.t0) throw qrife::ConfigError(a.config + ": t0 is required for estimate");
  const qrife::MicroData micro = qrife::ingest_micro_csv(a.micro);
  const qrife::GroupData group = qrife::ingest_group_csv(a.group, *config.t0);
  const qrife::PipelineResult result =
      qrife::run_pipeline(micro, group, config, resolve_threads(a.threads), utc_timestamp());
  qrife::write_pipeline_outputs(result, a.out);
  if (!result.all_converged) {
    std::cerr << "qrife: some second-step fits did not converge; see " << a.out
              << "/report.json\n";
    return 2;
  }
  return 0;
}

struct SimulateArgs {
  std::vector<int> scenarios{1, 2};
  std::vector<int> N{500};
  std::vector<int> S{40};
  std::vector<int> T{25};
  int reps = 100;
  std::vector<double> quantiles{0.1, 0.5, 0.9};
  std::vector<int> checkpoints{2, 5};
  std::uint64_t seed = 20240611;
  double eta_scale = 0.1;
  double ci_level = 0.95;
  double tol = 1e-5;
  int max_iter = 1000;
  std::string factors = "2";
  std::string out;
  std::string emit_data;
  std::optional<int> threads;
};

int run_simulate(const SimulateArgs& a) {
  if (!a.emit_data.empty()) {
    // One dataset per scenario as CSV inputs for `estimate`.
    fs::create_directories(a.emit_data);
    for (int scenario : a.scenarios) {
      const qrife::DgpConfig cfg{scenario, a.N.front(), a.S.front(), a.T.front(),
                                 a.seed,   0,           a.eta_scale};
      const qrife::SyntheticDataset data = qrife::generate(cfg);
      qrife::MicroData micro{data.micro, {}, {}, true};
      qrife::GroupData group{data.design, {}, {}, 0};
      for (int s = 0; s < cfg.S; ++s) micro.groups.push_back(s + 1);
      for (int t = 0; t < cfg.T; ++t) micro.times.push_back(t + 1);
      group.groups = micro.groups;
      group.times = micro.times;
      group.t0 = data.truth.first_post_period + 1;
      const std::string stem = "scenario" + std::to_string(scenario);
      qrife::write_file(fs::path(a.emit_data) / (stem + "_micro.csv"), qrife::micro_to_csv(micro));
      qrife::write_file(fs::path(a.emit_data) / (stem + "_group.csv"), qrife::group_to_csv(group));
    }
  }

  qrife::MonteCarloSpec spec;
  for (int scenario : a.scenarios) {
    for (int n : a.N) {
      for (int s : a.S) {
        for (int t : a.T) spec.cells.push_back({scenario, n, s, t});
      }
    }
  }
  spec.reps = a.reps;
  spec.quantiles = a.quantiles;
  spec.checkpoints = a.checkpoints;
  spec.seed = a.seed;
  spec.eta_scale = a.eta_scale;
  spec.ci_level = a.ci_level;
  spec.threads = resolve_threads(a.threads);
  spec.ife.tol = a.tol;
  spec.ife.max_iter = a.max_iter;
  if (a.factors == "auto") {
    spec.ife.fixed_factors.reset();
  } else {
    try {
      spec.ife.fixed_factors = std::stoi(a.factors);
    } catch (const std::exception&) {
      throw qrife::ConfigError("--factors expects 'auto' or a count, got '" + a.factors + "'");
    }
  }

  const qrife::McReport report = qrife::run_monte_carlo(spec);
  fs::create_directories(a.out);
  qrife::write_file(fs::path(a.out) / "monte_carlo.csv", report.to_csv());
  qrife::write_file(fs::path(a.out) / "monte_carlo.json", report.to_json());

  int not_converged = 0;
  for (const auto& row : report.rows) {
    if (row.iteration == "converged") not_converged += row.not_converged;
  }
  if (not_converged > 0) {
    std::cerr << "qrife: " << not_converged << " replication fits did not converge\n";
    return 2;
  }
  return 0;
}

struct SelftestArgs {
  bool full = false;
  std::optional<int> threads;
};

int run_selftest(const SelftestArgs& a) {
  qrife::acceptance::Options options;
  options.monte_carlo = a.full;
  options.threads = resolve_threads(a.threads);
  bool ok = true;
  for (const auto& r : qrife::acceptance::run_all(options, std::cout)) ok = ok && r.pass;
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantile regression with interactive fixed effects"};
  app.require_subcommand(1);

  EstimateArgs est;
  auto* estimate = app.add_subcommand("estimate", "Two-step estimation from CSV panels");
  estimate->add_option("--micro", est.micro, "Individual-level CSV (group,time,y,z...)")
      ->required()
      ->check(CLI::ExistingFile);
  estimate->add_option("--group", est.group, "Group-level CSV (group,time,d,x...)")
      ->required()
      ->check(CLI::ExistingFile);
  estimate->add_option("--config", est.config, "Run configuration")
      ->required()
      ->check(CLI::ExistingFile);
  estimate->add_option("--out", est.out, "Output directory")->required();
  estimate->add_option("--threads", est.threads, "Worker threads (default: QRIFE_THREADS or 1)");

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo study on the synthetic design");
  simulate->add_option("--out", sim.out, "Output directory")->required();
  simulate->add_option("--seed", sim.seed, "Master seed")->capture_default_str();
  simulate->add_option("--threads", sim.threads, "Worker threads (default: QRIFE_THREADS or 1)");
  simulate->add_option("--scenario", sim.scenarios, "Scenarios (1, 2)")->capture_default_str();
  simulate->add_option("--N", sim.N, "Individuals per cell")->capture_default_str();
  simulate->add_option("--S", sim.S, "Groups")->capture_default_str();
  simulate->add_option("--T", sim.T, "Periods")->capture_default_str();
  simulate->add_option("--reps", sim.reps, "Replications per cell")->capture_default_str();
  simulate->add_option("--quantiles", sim.quantiles, "Quantile levels")->capture_default_str();
  simulate->add_option("--checkpoints", sim.checkpoints, "Reported iterations")
      ->capture_default_str();
  simulate->add_option("--eta-scale", sim.eta_scale, "Scale of the group-time error")
      ->capture_default_str();
  simulate->add_option("--ci-level", sim.ci_level, "Confidence level")->capture_default_str();
  simulate->add_option("--tol", sim.tol, "Second-step tolerance")->capture_default_str();
  simulate->add_option("--max-iter", sim.max_iter, "Second-step iteration cap")
      ->capture_default_str();
  simulate->add_option("--factors", sim.factors, "Factor count, or 'auto' for the eigen-ratio rule")
      ->capture_default_str();
  simulate->add_option("--emit-data", sim.emit_data,
                       "Also write the first dataset of each scenario as CSV inputs");

  SelftestArgs self;
  auto* selftest = app.add_subcommand("selftest", "Oracle and property checks");
  selftest->add_flag("--full", self.full, "Include the Monte Carlo reproduction criteria");
  selftest->add_option("--threads", self.threads, "Worker threads (default: QRIFE_THREADS or 1)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*estimate) return run_estimate(est);
    if (*simulate) return run_simulate(sim);
    if (*selftest) return run_selftest(self);
  } catch (const qrife::Error& e) {
    std::cerr << "qrife: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "qrife: unexpected error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
