#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qrife/inference.hpp"
#include "qrife/panel_ife.hpp"
#include "qrife/quantile_regression.hpp"

namespace qrife {

/// Micro panel plus the group and time labels of its grid (ascending).
struct MicroData {
  MicroPanel panel;
  std::vector<std::int64_t> groups;
  std::vector<std::int64_t> times;
  bool implicit_intercept = true;  // "const" was prepended on ingestion
};

struct GroupData {
  GroupDesign design;
  std::vector<std::int64_t> groups;
  std::vector<std::int64_t> times;
  std::int64_t t0 = 0;  // time label of the first post period
};

/// Reads `group,time,y,<z columns...>`. Prepends an intercept named "const"
/// unless one of the z columns is named "const". Missing cells, ragged rows
/// and non-numeric fields raise IngestionError with the offending line.
MicroData ingest_micro_csv(const std::filesystem::path& path);
MicroData parse_micro_csv(const std::string& text, const std::string& source = "<memory>");

/// Reads `group,time,d,<x columns...>` and checks d_st = d_s 1{time >= t0}.
GroupData ingest_group_csv(const std::filesystem::path& path, std::int64_t t0);
GroupData parse_group_csv(const std::string& text, std::int64_t t0,
                          const std::string& source = "<memory>");

/// Inverse of ingest_micro_csv. The intercept column is written only when it
/// is not the implicit one.
std::string micro_to_csv(const MicroData& data);
std::string group_to_csv(const GroupData& data);

enum class EffectKind { kAqtt, kWithin, kBetween };

std::string to_string(EffectKind kind);

/// Effect query with attributes given by name; unnamed attributes are 0.
struct EffectSpec {
  std::string name;
  EffectKind kind = EffectKind::kAqtt;
  std::int64_t time = 0;
  double u = 0.0;
  double u1 = 0.0;
  double u2 = 0.0;
  std::map<std::string, double> z;
  std::map<std::string, double> z1;
  std::map<std::string, double> z2;
};

struct RunConfig {
  std::vector<double> quantiles{0.5};
  std::optional<std::int64_t> t0;
  std::optional<int> fixed_factors;  // nullopt: eigen-ratio selection
  double tol = 1e-5;
  int max_iter = 1000;
  double ci_level = 0.95;
  std::vector<EffectSpec> effects;

  void validate() const;
};

/// Parses the flat `key = value` configuration format:
///
///   quantiles = 0.1, 0.5, 0.9
///   t0 = 2005
///   factors = auto            # or a fixed count
///   tol = 1e-5
///   max_iter = 1000
///   ci_level = 0.95
///   effect.gap = between; t=2010; u=0.5; z1=const:1; z2=const:1,black:1
///   effect.spread = within; t=2010; u1=0.1; u2=0.9; z=const:1
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

struct PipelineResult {
  std::vector<QuantileCoefficientPanel> first_step;
  std::vector<std::vector<FactorModelFit>> fits;  // [quantile][coefficient]
  std::vector<EffectEstimate> effects;            // one per RunConfig effect
  bool all_converged = false;
  std::string report_json;  // schema-versioned report
  std::string effects_csv;
  std::string delta_csv;
};

/// Full two-step estimation plus inference and the requested effects.
PipelineResult run_pipeline(const MicroData& micro, const GroupData& group,
                            const RunConfig& config, int threads = 1,
                            const std::string& timestamp = "");

/// Writes report.json, effects.csv and delta.csv into `dir`.
void write_pipeline_outputs(const PipelineResult& result, const std::filesystem::path& dir);

/// Resolves named attributes to a vector in the panel's column order.
Eigen::VectorXd resolve_attributes(const std::map<std::string, double>& named,
                                   const std::vector<std::string>& attribute_names);

/// Reads a whole file; throws IngestionError if it cannot be opened.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& content);

}  // namespace qrife
