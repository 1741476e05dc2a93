#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "qrife/error.hpp"
#include "qrife/io.hpp"
#include "qrife/parallel.hpp"
#include "qrife/policy_effects.hpp"

namespace qrife {

namespace {

using json = nlohmann::ordered_json;

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json vector_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

json matrix_json(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(vector_json(m.row(r).transpose()));
  return out;
}

LinearFunctional to_functional(const EffectSpec& e, const std::vector<std::string>& names, int t) {
  switch (e.kind) {
    case EffectKind::kAqtt:
      return LinearFunctional::aqtt(resolve_attributes(e.z, names), e.u, t);
    case EffectKind::kBetween:
      return LinearFunctional::between(resolve_attributes(e.z1, names),
                                       resolve_attributes(e.z2, names), e.u, t);
    case EffectKind::kWithin:
      return LinearFunctional::within(resolve_attributes(e.z, names), e.u1, e.u2, t);
  }
  throw ConfigError("unknown effect kind");
}

}  // namespace

PipelineResult run_pipeline(const MicroData& micro, const GroupData& group,
                            const RunConfig& config, int threads, const std::string& timestamp) {
  config.validate();
  if (micro.groups != group.groups || micro.times != group.times) {
    throw IngestionError("micro and group files cover different (group, time) grids");
  }
  if (config.t0 && *config.t0 != group.t0) {
    throw ConfigError("config t0 differs from the t0 used to read the group file");
  }
  const GroupDesign& design = group.design;
  const auto& names = micro.panel.attribute_names();
  const int J = micro.panel.regressors();
  const int T = design.periods();
  const int t0 = design.first_post_period();

  auto period_of = [&](std::int64_t label, const std::string& effect) {
    const auto it = std::find(group.times.begin(), group.times.end(), label);
    if (it == group.times.end()) {
      throw ConfigError("effect '" + effect + "': time " + std::to_string(label) + " not observed");
    }
    const int t = static_cast<int>(it - group.times.begin());
    if (t < t0) {
      throw ConfigError("effect '" + effect + "': time " + std::to_string(label) +
                        " precedes the policy start");
    }
    return t;
  };

  PipelineResult result;
  result.first_step = fit_first_step(micro.panel, config.quantiles, QrOptions{}, threads);
  const std::size_t Q = result.first_step.size();

  IfeConfig ife;
  ife.tol = config.tol;
  ife.max_iter = config.max_iter;
  ife.fixed_factors = config.fixed_factors;

  result.fits.assign(Q, std::vector<FactorModelFit>(static_cast<std::size_t>(J)));
  parallel_for(Q * static_cast<std::size_t>(J), threads, [&](std::size_t job) {
    const std::size_t q = job / static_cast<std::size_t>(J);
    const int j = static_cast<int>(job % static_cast<std::size_t>(J));
    const auto& panel = result.first_step[q];
    try {
      FactorModelFit fit = fit_ife(panel.coefficient_panel(j), design, ife);
      fit.coefficient = j;
      fit.quantile = panel.quantile();
      result.fits[q][static_cast<std::size_t>(j)] = std::move(fit);
    } catch (const Error& e) {
      std::ostringstream os;
      os << "second step failed for coefficient '" << names[static_cast<std::size_t>(j)]
         << "' at u=" << panel.quantile() << ": " << e.what();
      throw Error(os.str());
    }
  });

  result.all_converged = true;
  for (const auto& set : result.fits) {
    for (const auto& fit : set) result.all_converged = result.all_converged && fit.converged;
  }

  const InferenceComponents components(result.fits, design);
  std::vector<double> us;
  for (const auto& p : result.first_step) us.push_back(p.quantile());

  json doc;
  doc["schema_version"] = 1;
  doc["generated_at"] = timestamp;
  doc["dimensions"] = {{"groups", design.groups()},
                       {"periods", T},
                       {"first_post_period", t0},
                       {"regressors", J},
                       {"covariates", design.covariate_count()},
                       {"treated_groups", design.treated_count()}};
  doc["group_labels"] = group.groups;
  doc["time_labels"] = group.times;
  doc["t0"] = group.t0;
  doc["attributes"] = names;
  doc["covariates"] = design.covariate_names();
  doc["config"] = {{"quantiles", us},
                   {"factors", config.fixed_factors ? json(*config.fixed_factors) : json("auto")},
                   {"tol", config.tol},
                   {"max_iter", config.max_iter},
                   {"ci_level", config.ci_level}};

  std::ostringstream delta_csv;
  delta_csv << "u,coefficient,attribute,time,delta,bias,corrected,se,lower,upper\n";

  json fits = json::array();
  for (std::size_t q = 0; q < Q; ++q) {
    for (int j = 0; j < J; ++j) {
      const FactorModelFit& fit = result.fits[q][static_cast<std::size_t>(j)];
      json f;
      f["u"] = fit.quantile;
      f["coefficient"] = j;
      f["attribute"] = names[static_cast<std::size_t>(j)];
      f["factors"] = fit.factors;
      f["converged"] = fit.converged;
      f["iterations"] = fit.trace.back().iteration;
      f["delta"] = vector_json(fit.delta);
      f["beta"] = vector_json(fit.beta);
      f["eigenvalues"] = vector_json(fit.eigenvalues);
      json trace = json::array();
      for (const auto& rec : fit.trace) {
        trace.push_back({{"iteration", rec.iteration},
                         {"factors", rec.factors},
                         {"ssr", rec.ssr},
                         {"delta_change", rec.delta_change},
                         {"beta_change", rec.beta_change},
                         {"common_change", rec.common_change},
                         {"warnings", rec.warnings}});
      }
      f["trace"] = std::move(trace);
      fits.push_back(std::move(f));
    }
  }
  doc["fits"] = std::move(fits);

  json delta_tables = json::array();
  json inference = json::array();
  for (std::size_t q = 0; q < Q; ++q) {
    const double u = us[q];
    json block;
    block["u"] = u;
    Eigen::MatrixXd delta(J, T - t0);
    for (int j = 0; j < J; ++j) delta.row(j) = result.fits[q][static_cast<std::size_t>(j)].delta.transpose();
    block["delta"] = matrix_json(delta);
    delta_tables.push_back(std::move(block));

    for (int t = t0; t < T; ++t) {
      const Eigen::VectorXd bias = components.bias(t, u);
      const Eigen::MatrixXd sigma = components.sigma(t, u, u);
      for (int j = 0; j < J; ++j) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(J);
        e[j] = 1.0;
        const EffectEstimate est = components.estimate(LinearFunctional::aqtt(e, u, t), config.ci_level);
        delta_csv << fmt(u) << ',' << j << ',' << names[static_cast<std::size_t>(j)] << ','
                  << group.times[static_cast<std::size_t>(t)] << ',' << fmt(est.estimate) << ','
                  << fmt(est.bias) << ',' << fmt(est.corrected) << ',' << fmt(est.se) << ','
                  << fmt(est.lower) << ',' << fmt(est.upper) << '\n';
      }
      json comp;
      comp["time"] = group.times[static_cast<std::size_t>(t)];
      comp["u"] = u;
      comp["bias"] = vector_json(bias);
      json cross = json::array();
      for (std::size_t q2 = q; q2 < Q; ++q2) {
        cross.push_back({{"u2", us[q2]}, {"sigma", matrix_json(components.sigma(t, u, us[q2]))}});
      }
      comp["sigma"] = std::move(cross);
      inference.push_back(std::move(comp));
    }
  }
  doc["delta"] = std::move(delta_tables);
  doc["inference"] = std::move(inference);

  std::ostringstream effects_csv;
  effects_csv << "name,kind,time,u,u1,u2,estimate,bias,corrected,se,lower,upper,level\n";
  json effects = json::array();
  for (const auto& spec : config.effects) {
    const int t = period_of(spec.time, spec.name);
    const EffectEstimate est =
        components.estimate(to_functional(spec, names, t), config.ci_level);
    const bool within = spec.kind == EffectKind::kWithin;
    effects.push_back({{"name", spec.name},
                       {"kind", to_string(spec.kind)},
                       {"time", spec.time},
                       {"u", within ? json(nullptr) : json(spec.u)},
                       {"u1", within ? json(spec.u1) : json(nullptr)},
                       {"u2", within ? json(spec.u2) : json(nullptr)},
                       {"estimate", est.estimate},
                       {"bias", est.bias},
                       {"corrected", est.corrected},
                       {"se", est.se},
                       {"lower", est.lower},
                       {"upper", est.upper},
                       {"level", est.level},
                       {"warnings", est.warnings}});
    const double nan = std::nan("");
    effects_csv << spec.name << ',' << to_string(spec.kind) << ',' << spec.time << ','
                << fmt(within ? nan : spec.u) << ',' << fmt(within ? spec.u1 : nan) << ','
                << fmt(within ? spec.u2 : nan) << ',' << fmt(est.estimate) << ','
                << fmt(est.bias) << ',' << fmt(est.corrected) << ',' << fmt(est.se) << ','
                << fmt(est.lower) << ',' << fmt(est.upper) << ',' << fmt(est.level) << '\n';
    result.effects.push_back(est);
  }
  doc["effects"] = std::move(effects);
  doc["all_converged"] = result.all_converged;

  result.report_json = doc.dump(2) + "\n";
  result.effects_csv = effects_csv.str();
  result.delta_csv = delta_csv.str();
  return result;
}

void write_pipeline_outputs(const PipelineResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file(dir / "report.json", result.report_json);
  write_file(dir / "effects.csv", result.effects_csv);
  write_file(dir / "delta.csv", result.delta_csv);
}

}  // namespace qrife
