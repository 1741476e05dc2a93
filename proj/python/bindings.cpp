#include <optional>
#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "qrife/error.hpp"
#include "qrife/inference.hpp"
#include "qrife/io.hpp"
#include "qrife/panel_ife.hpp"
#include "qrife/quantile_regression.hpp"
#include "qrife/simulation.hpp"

namespace py = pybind11;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

qrife::GroupDesign make_design(const std::vector<MatrixXd>& covariates, const VectorXd& treated,
                               int t0, const std::vector<std::string>& names) {
  return qrife::GroupDesign(covariates, treated, t0, names);
}

py::dict fit_to_dict(const qrife::FactorModelFit& fit) {
  py::dict out;
  std::vector<double> ssr;
  for (const auto& rec : fit.trace) ssr.push_back(rec.ssr);
  out["delta"] = fit.delta;
  out["beta"] = fit.beta;
  out["F"] = fit.F;
  out["Lambda"] = fit.Lambda;
  out["eigenvalues"] = fit.eigenvalues;
  out["residuals"] = fit.residuals;
  out["factors"] = fit.factors;
  out["converged"] = fit.converged;
  out["iterations"] = fit.trace.empty() ? 0 : fit.trace.back().iteration;
  out["ssr_trace"] = ssr;
  return out;
}

}  // namespace

PYBIND11_MODULE(_qrife, m) {
  m.doc() = "Quantile regression with interactive fixed effects";

  auto& base = py::register_exception<qrife::Error>(m, "QrifeError", PyExc_RuntimeError);
  py::register_exception<qrife::DomainError>(m, "DomainError", base.ptr());
  py::register_exception<qrife::ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<qrife::IngestionError>(m, "IngestionError", base.ptr());
  py::register_exception<qrife::DesignError>(m, "DesignError", base.ptr());

  m.def("check_loss", &qrife::check_loss, py::arg("residual"), py::arg("u"));

  m.def(
      "fit_qr",
      [](const MatrixXd& Z, const VectorXd& y, double u) {
        const qrife::QrFit fit = qrife::fit_qr(Z, y, u);
        py::dict out;
        out["coef"] = fit.coef;
        out["objective"] = fit.objective;
        out["basis"] = fit.basis;
        out["iterations"] = fit.iterations;
        return out;
      },
      py::arg("Z"), py::arg("y"), py::arg("u"),
      "Linear quantile regression of y on Z at level u.");

  m.def(
      "select_num_factors",
      [](const VectorXd& eigenvalues, int groups) {
        return qrife::select_num_factors(eigenvalues, groups).factors;
      },
      py::arg("eigenvalues"), py::arg("groups"));

  m.def(
      "fit_ife",
      [](const MatrixXd& A, const std::vector<MatrixXd>& covariates, const VectorXd& treated,
         int t0, double tol, int max_iter, std::optional<int> factors) {
        const qrife::GroupDesign design = make_design(covariates, treated, t0, {});
        return fit_to_dict(qrife::fit_ife(A, design, {tol, max_iter, factors}));
      },
      py::arg("A"), py::arg("covariates"), py::arg("treated"), py::arg("t0"),
      py::arg("tol") = 1e-5, py::arg("max_iter") = 1000, py::arg("factors") = py::none(),
      "Second-step fit of an S x T coefficient panel. Periods are 0-based; "
      "factors=None selects the count by the eigen-ratio rule.");

  m.def(
      "generate",
      [](int scenario, int N, int S, int T, std::uint64_t seed, int replication,
         double eta_scale) {
        const qrife::SyntheticDataset data =
            qrife::generate({scenario, N, S, T, seed, replication, eta_scale});
        std::vector<VectorXd> y;
        std::vector<MatrixXd> Z;
        for (const auto& cell : data.micro.cells()) {
          y.push_back(cell.y);
          Z.push_back(cell.Z);
        }
        py::dict out;
        out["y"] = y;
        out["Z"] = Z;
        out["x"] = data.truth.x;
        out["F"] = data.truth.F;
        out["Lambda"] = data.truth.Lambda;
        out["treated"] = data.truth.treated;
        out["first_post_period"] = data.truth.first_post_period;
        return out;
      },
      py::arg("scenario") = 1, py::arg("N") = 500, py::arg("S") = 40, py::arg("T") = 25,
      py::arg("seed") = 0, py::arg("replication") = 0, py::arg("eta_scale") = 0.1,
      "Synthetic dataset; y and Z are listed group-major (cell s*T + t).");

  m.def(
      "true_delta",
      [](int T, int t, double u) {
        qrife::DgpTruth truth;
        truth.T = T;
        return truth.delta(t, u);
      },
      py::arg("T"), py::arg("t"), py::arg("u"));

  m.def(
      "monte_carlo",
      [](int scenario, int N, int S, int T, int reps, std::vector<double> quantiles,
         std::uint64_t seed, int threads) {
        qrife::MonteCarloSpec spec;
        spec.cells = {{scenario, N, S, T}};
        spec.reps = reps;
        spec.quantiles = std::move(quantiles);
        spec.seed = seed;
        spec.threads = threads;
        qrife::McReport report;
        {
          py::gil_scoped_release release;
          report = qrife::run_monte_carlo(spec);
        }
        return py::make_tuple(report.to_csv(), report.to_json());
      },
      py::arg("scenario") = 1, py::arg("N") = 500, py::arg("S") = 40, py::arg("T") = 25,
      py::arg("reps") = 100, py::arg("quantiles") = std::vector<double>{0.1, 0.5, 0.9},
      py::arg("seed") = 20240611, py::arg("threads") = 1,
      "Runs the Monte Carlo study for one design cell; returns (csv, json).");

  m.def(
      "estimate",
      [](const std::string& micro_csv, const std::string& group_csv, const std::string& config,
         int threads) {
        const qrife::RunConfig cfg = qrife::parse_config(config);
        if (!cfg.t0) throw qrife::ConfigError("config: t0 is required");
        const qrife::MicroData micro = qrife::parse_micro_csv(micro_csv);
        const qrife::GroupData group = qrife::parse_group_csv(group_csv, *cfg.t0);
        qrife::PipelineResult result;
        {
          py::gil_scoped_release release;
          result = qrife::run_pipeline(micro, group, cfg, threads, "");
        }
        return py::make_tuple(result.report_json, result.effects_csv, result.all_converged);
      },
      py::arg("micro_csv"), py::arg("group_csv"), py::arg("config"), py::arg("threads") = 1,
      "Full pipeline on CSV text; returns (report_json, effects_csv, all_converged).");
}
