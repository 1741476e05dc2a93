#include "qrife/simulation.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "qrife/error.hpp"
#include "qrife/inference.hpp"
#include "qrife/parallel.hpp"

namespace qrife {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void DgpConfig::validate() const {
  if (scenario != 1 && scenario != 2) {
    throw ConfigError("scenario must be 1 or 2, got " + std::to_string(scenario));
  }
  if (N < 4) throw ConfigError("DGP needs N >= 4");
  // Controls are the groups below ceil(S/4); S = 4 would leave none.
  if (S < 5) throw ConfigError("DGP needs S >= 5");
  // T0 = ceil(T/4) must leave a pre-period and a later post period.
  if (T < 5) throw ConfigError("DGP needs T >= 5");
  if (!(eta_scale >= 0.0)) throw ConfigError("eta_scale must be non-negative");
}

double DgpTruth::delta0(double u) { return 2.0 + u * u / 4.0; }
double DgpTruth::beta(double u) { return 1.0 + u * u / 32.0; }
double DgpTruth::slope(double u) { return 2.0 + 0.1 * u; }

Eigen::Vector2d DgpTruth::covariate_coefficients(double u) { return {beta(u), delta0(u)}; }

double DgpTruth::delta(int t, double u) const {
  return 2.0 + static_cast<double>(t + 1) / (2.0 * T) + u * u / 4.0;
}

Eigen::Vector2d DgpTruth::alpha(int s, int t, double u) const {
  const double d = t >= first_post_period ? treated[s] : 0.0;
  const double intercept = delta0(u) + d * delta(t, u) + x(s, t) * beta(u) +
                           F.row(t).dot(Lambda.row(s)) + eta(s, t);
  return {intercept, slope(u)};
}

SyntheticDataset generate(const DgpConfig& config) {
  config.validate();
  const int S = config.S;
  const int T = config.T;
  const int N = config.N;

  std::seed_seq seq{static_cast<std::uint32_t>(config.seed & 0xffffffffu),
                    static_cast<std::uint32_t>(config.seed >> 32),
                    static_cast<std::uint32_t>(config.replication)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  DgpTruth truth;
  truth.S = S;
  truth.T = T;
  // 1-based policy start ceil(T/4); treated groups are s >= S/4 (1-based).
  truth.first_post_period = (T + 3) / 4 - 1;
  const int first_treated = (S + 3) / 4 - 1;

  MatrixXd gauss(T, T);
  for (int c = 0; c < T; ++c) {
    for (int r = 0; r < T; ++r) gauss(r, c) = normal(rng);
  }
  Eigen::JacobiSVD<MatrixXd> svd(gauss, Eigen::ComputeFullU);
  truth.F = std::sqrt(static_cast<double>(T)) * svd.matrixU().leftCols(2);

  truth.Lambda.resize(S, 2);
  for (int s = 0; s < S; ++s) {
    for (int k = 0; k < 2; ++k) truth.Lambda(s, k) = 2.0 * unit(rng);
  }

  truth.x.resize(S, T);
  for (int s = 0; s < S; ++s) {
    for (int t = 0; t < T; ++t) truth.x(s, t) = normal(rng);
  }
  if (config.scenario == 2) {
    for (int s = 0; s < S; ++s) {
      for (int t = 0; t < T; ++t) {
        truth.x(s, t) += 0.02 * truth.F(t, 0) * truth.F(t, 0) +
                         0.02 * truth.Lambda(s, 0) * truth.Lambda(s, 0);
      }
    }
  }

  truth.eta.resize(S, T);
  for (int s = 0; s < S; ++s) {
    for (int t = 0; t < T; ++t) truth.eta(s, t) = config.eta_scale * (unit(rng) - 0.5);
  }

  truth.treated = VectorXd::Zero(S);
  for (int s = first_treated; s < S; ++s) truth.treated[s] = 1.0;

  std::vector<MicroCell> cells(static_cast<std::size_t>(S) * T);
  for (int s = 0; s < S; ++s) {
    for (int t = 0; t < T; ++t) {
      MicroCell& cell = cells[static_cast<std::size_t>(s) * T + t];
      cell.y.resize(N);
      cell.Z.resize(N, 2);
      const double d = t >= truth.first_post_period ? truth.treated[s] : 0.0;
      const double common = truth.x(s, t);
      const double factor = truth.F.row(t).dot(truth.Lambda.row(s)) + truth.eta(s, t);
      for (int i = 0; i < N; ++i) {
        const double u = unit(rng);
        const double z = unit(rng);
        const double intercept = DgpTruth::delta0(u) + d * truth.delta(t, u) +
                                 common * DgpTruth::beta(u) + factor;
        cell.y[i] = intercept + z * DgpTruth::slope(u);
        cell.Z(i, 0) = 1.0;
        cell.Z(i, 1) = z;
      }
    }
  }

  // The baseline delta0(u) enters the second step as the coefficient of a
  // constant group covariate.
  std::vector<MatrixXd> X(static_cast<std::size_t>(S));
  for (int s = 0; s < S; ++s) {
    X[s].resize(T, 2);
    X[s].col(0) = truth.x.row(s).transpose();
    X[s].col(1).setOnes();
  }

  SyntheticDataset out{config,
                       MicroPanel(S, T, std::move(cells), {"const", "z"}),
                       GroupDesign(std::move(X), truth.treated, truth.first_post_period, {"x", "const"}),
                       std::move(truth)};
  return out;
}

std::uint64_t replication_seed(std::uint64_t master, const McCell& cell, int rep) {
  // splitmix64 absorbing one counter at a time.
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(master);
  for (std::uint64_t v : {static_cast<std::uint64_t>(cell.scenario),
                          static_cast<std::uint64_t>(cell.N), static_cast<std::uint64_t>(cell.S),
                          static_cast<std::uint64_t>(cell.T), static_cast<std::uint64_t>(rep)}) {
    h = mix(h ^ v);
  }
  return h;
}

namespace {

McReplication run_replication(const MonteCarloSpec& spec, const McCell& cell, int rep) {
  McReplication out;
  const std::size_t nq = spec.quantiles.size();
  try {
    DgpConfig cfg{cell.scenario, cell.N,  cell.S, cell.T, replication_seed(spec.seed, cell, rep),
                  rep,           spec.eta_scale};
    const SyntheticDataset data = generate(cfg);
    const auto first = fit_first_step(data.micro, spec.quantiles, spec.qr, 1);
    const int last = cell.T - 1;
    const int post_index = last - data.design.first_post_period();

    std::vector<std::vector<FactorModelFit>> fits;
    for (const auto& panel : first) {
      FactorModelFit fit = fit_ife(panel.coefficient_panel(0), data.design, spec.ife);
      fit.coefficient = 0;
      fit.quantile = panel.quantile();
      fits.push_back({std::move(fit)});
    }
    InferenceComponents components(fits, data.design);

    out.estimates.resize(nq);
    out.covered.resize(nq);
    out.converged.resize(nq);
    for (std::size_t q = 0; q < nq; ++q) {
      const double u = first[q].quantile();
      const FactorModelFit& fit = components.fits(u).front();
      for (int m : spec.checkpoints) out.estimates[q].push_back(fit.delta_at(m)[post_index]);
      out.estimates[q].push_back(fit.delta[post_index]);
      const EffectEstimate ci = components.estimate(
          LinearFunctional::aqtt(VectorXd::Ones(1), u, last), spec.ci_level);
      const double truth = data.truth.delta(last, u);
      out.covered[q] = ci.lower <= truth && truth <= ci.upper;
      out.converged[q] = fit.converged;
    }
    out.ok = true;
  } catch (const Error& e) {
    out.ok = false;
    out.error = e.what();
  }
  return out;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

McReport run_monte_carlo(const MonteCarloSpec& spec) {
  if (spec.reps < 2) throw ConfigError("Monte Carlo needs at least 2 replications");
  if (spec.cells.empty()) throw ConfigError("Monte Carlo needs at least one design cell");
  if (spec.quantiles.empty()) throw ConfigError("Monte Carlo needs at least one quantile");
  std::vector<double> sorted = spec.quantiles;
  std::sort(sorted.begin(), sorted.end());

  McReport report;
  report.spec = spec;
  report.spec.quantiles = sorted;
  for (const McCell& c : spec.cells) {
    DgpConfig{c.scenario, c.N, c.S, c.T, 0, 0, spec.eta_scale}.validate();
  }

  const std::size_t reps = static_cast<std::size_t>(spec.reps);
  report.replications.assign(spec.cells.size(), std::vector<McReplication>(reps));
  parallel_for(spec.cells.size() * reps, spec.threads, [&](std::size_t job) {
    const std::size_t c = job / reps;
    const int rep = static_cast<int>(job % reps);
    report.replications[c][rep] = run_replication(report.spec, spec.cells[c], rep);
  });

  const std::size_t nq = sorted.size();
  for (std::size_t c = 0; c < spec.cells.size(); ++c) {
    const McCell& cell = spec.cells[c];
    const auto& runs = report.replications[c];
    int failures = 0;
    for (const auto& r : runs) failures += r.ok ? 0 : 1;
    if (failures > 0.05 * static_cast<double>(reps)) {
      std::string first_error;
      for (const auto& r : runs) {
        if (!r.ok) {
          first_error = r.error;
          break;
        }
      }
      std::ostringstream os;
      os << "Monte Carlo cell scenario=" << cell.scenario << " N=" << cell.N << " S=" << cell.S
         << " T=" << cell.T << ": " << failures << " of " << reps
         << " replications failed (first: " << first_error << ")";
      throw SolverFailure(os.str(), failures);
    }

    DgpTruth truth;
    truth.T = cell.T;
    for (std::size_t q = 0; q < nq; ++q) {
      const double u = sorted[q];
      const double target = truth.delta(cell.T - 1, u);
      const std::size_t columns = spec.checkpoints.size() + 1;
      for (std::size_t k = 0; k < columns; ++k) {
        McRow row;
        row.cell = cell;
        row.u = u;
        row.failures = failures;
        row.iteration = k < spec.checkpoints.size() ? std::to_string(spec.checkpoints[k])
                                                    : std::string("converged");
        // The converged estimator is summarized over replications whose fit
        // met the tolerance; checkpoint rows use every successful run.
        const bool final_column = k + 1 == columns;
        auto included = [&](const McReplication& r) {
          return r.ok && (!final_column || r.converged[q]);
        };
        double sum = 0.0;
        int n = 0;
        int hits = 0;
        for (const auto& r : runs) {
          if (r.ok && !r.converged[q]) ++row.not_converged;
          if (!included(r)) continue;
          sum += r.estimates[q][k] - target;
          ++n;
          hits += r.covered[q] ? 1 : 0;
        }
        row.used = n;
        row.bias = n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN();
        double ss = 0.0;
        for (const auto& r : runs) {
          if (!included(r)) continue;
          const double dev = r.estimates[q][k] - target - row.bias;
          ss += dev * dev;
        }
        row.sd = n > 1 ? std::sqrt(ss / (n - 1)) : std::numeric_limits<double>::quiet_NaN();
        row.coverage = final_column && n > 0 ? static_cast<double>(hits) / n
                                             : std::numeric_limits<double>::quiet_NaN();
        report.rows.push_back(std::move(row));
      }
    }
  }
  return report;
}

std::string McReport::to_csv() const {
  std::ostringstream os;
  os << "scenario,N,S,T,u,m,bias,sd,coverage\n";
  for (const auto& r : rows) {
    os << r.cell.scenario << ',' << r.cell.N << ',' << r.cell.S << ',' << r.cell.T << ','
       << format_number(r.u) << ',' << r.iteration << ',' << format_number(r.bias) << ','
       << format_number(r.sd) << ',' << format_number(r.coverage) << '\n';
  }
  return os.str();
}

std::string McReport::to_json() const {
  nlohmann::ordered_json doc;
  doc["schema_version"] = 1;
  doc["kind"] = "monte_carlo";
  doc["seed"] = spec.seed;
  doc["reps"] = spec.reps;
  doc["quantiles"] = spec.quantiles;
  doc["checkpoints"] = spec.checkpoints;
  doc["eta_scale"] = spec.eta_scale;
  doc["factors"] = spec.ife.fixed_factors ? nlohmann::ordered_json(*spec.ife.fixed_factors)
                                          : nlohmann::ordered_json("auto");
  doc["ci_level"] = spec.ci_level;
  doc["tol"] = spec.ife.tol;
  doc["max_iter"] = spec.ife.max_iter;
  auto& out = doc["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json row;
    row["scenario"] = r.cell.scenario;
    row["N"] = r.cell.N;
    row["S"] = r.cell.S;
    row["T"] = r.cell.T;
    row["u"] = r.u;
    row["m"] = r.iteration;
    row["bias"] = r.bias;
    row["sd"] = r.sd;
    if (std::isnan(r.coverage)) {
      row["coverage"] = nullptr;
    } else {
      row["coverage"] = r.coverage;
    }
    row["used"] = r.used;
    row["failures"] = r.failures;
    row["not_converged"] = r.not_converged;
    out.push_back(std::move(row));
  }
  return doc.dump(2) + "\n";
}

}  // namespace qrife
