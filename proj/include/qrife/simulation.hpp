#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qrife/panel_ife.hpp"
#include "qrife/quantile_regression.hpp"

namespace qrife {

/// Monte Carlo data-generating process with two factors, one group-level
/// covariate and one uniform individual attribute. The second-step design
/// carries the covariate x_st and a constant, whose coefficient is delta0(u).
///
/// Scenario 1 draws x_st ~ N(0,1); scenario 2 adds 0.02 f_t1^2 + 0.02
/// lambda_s1^2 so the covariate correlates with the factor structure.
struct DgpConfig {
  int scenario = 1;
  int N = 500;  // individuals per cell
  int S = 40;
  int T = 25;
  std::uint64_t seed = 0;
  int replication = 0;
  // eta_st = eta_scale * (xi_st - 0.5) with xi_st ~ U(0,1).
  double eta_scale = 0.1;

  void validate() const;
};

/// Ground truth retained for scoring. Periods are 0-based.
struct DgpTruth {
  int S = 0;
  int T = 0;
  int first_post_period = 0;
  Eigen::MatrixXd F;       // T x 2, F'F/T = I
  Eigen::MatrixXd Lambda;  // S x 2
  Eigen::MatrixXd x;       // S x T group covariate
  Eigen::MatrixXd eta;     // S x T group-time error
  Eigen::VectorXd treated;

  static double delta0(double u);             // 2 + u^2/4
  static double beta(double u);               // 1 + u^2/32
  /// Second-step coefficients on the design covariates (x, const).
  static Eigen::Vector2d covariate_coefficients(double u);
  static double slope(double u);              // 2 + 0.1 u
  double delta(int t, double u) const;        // 2 + (t+1)/(2T) + u^2/4

  /// Intercept and slope of the conditional quantile function of cell (s,t).
  Eigen::Vector2d alpha(int s, int t, double u) const;
};

struct SyntheticDataset {
  DgpConfig config;
  MicroPanel micro;
  GroupDesign design;
  DgpTruth truth;
};

/// Draws one dataset. Identical configs (including seed and replication)
/// give bitwise-identical datasets.
SyntheticDataset generate(const DgpConfig& config);

struct McCell {
  int scenario = 1;
  int N = 500;
  int S = 40;
  int T = 25;
};

struct MonteCarloSpec {
  std::vector<McCell> cells;
  int reps = 100;
  std::vector<double> quantiles{0.1, 0.5, 0.9};
  std::vector<int> checkpoints{2, 5};
  std::uint64_t seed = 20240611;
  double eta_scale = 0.1;
  double ci_level = 0.95;
  int threads = 1;
  IfeConfig ife{1e-5, 1000, 2};
  QrOptions qr;
};

/// Aggregate over replications for one (cell, u, iteration checkpoint).
/// `iteration` is "2", "5", ... or "converged"; coverage is only defined for
/// the converged estimator (NaN otherwise). The "converged" row averages over
/// the replications whose second step converged; `used` counts the
/// replications behind each row.
struct McRow {
  McCell cell;
  double u = 0.0;
  std::string iteration;
  double bias = 0.0;
  double sd = 0.0;
  double coverage = 0.0;
  int used = 0;
  int failures = 0;
  int not_converged = 0;
};

/// Per-replication outcome for the last period delta_T(u) of the intercept.
struct McReplication {
  bool ok = false;
  std::string error;
  std::vector<std::vector<double>> estimates;  // [quantile][checkpoint..., converged]
  std::vector<char> covered;                   // [quantile]
  std::vector<char> converged;                 // [quantile]
};

struct McReport {
  MonteCarloSpec spec;
  std::vector<McRow> rows;
  std::vector<std::vector<McReplication>> replications;  // [cell][rep]

  /// scenario,N,S,T,u,m,bias,sd,coverage with 17 significant digits.
  std::string to_csv() const;
  std::string to_json() const;
};

/// Seed of replication `rep` of a cell: a fixed function of the master seed
/// and the (scenario, N, S, T, rep) counters, independent of scheduling.
std::uint64_t replication_seed(std::uint64_t master, const McCell& cell, int rep);

/// Runs every (cell, replication) job, possibly in parallel, and aggregates
/// deterministically. Failed replications are excluded and counted; more than
/// 5% failures in any cell throws.
McReport run_monte_carlo(const MonteCarloSpec& spec);

}  // namespace qrife
