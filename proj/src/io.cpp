#include "qrife/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "qrife/error.hpp"

namespace qrife {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string unquote(std::string s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  return s;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> lines;  // 1-based file line of each row
};

CsvTable read_csv(const std::string& text, const std::string& source) {
  CsvTable table;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) {
      line.erase(0, 3);
    }
    if (trim(line).empty()) continue;
    auto fields = split(line, ',');
    for (auto& f : fields) f = unquote(f);
    if (table.header.empty()) {
      table.header = std::move(fields);
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw IngestionError(source + ":" + std::to_string(lineno) + ": expected " +
                           std::to_string(table.header.size()) + " fields, found " +
                           std::to_string(fields.size()));
    }
    table.rows.push_back(std::move(fields));
    table.lines.push_back(lineno);
  }
  if (table.header.empty()) throw IngestionError(source + ": empty file");
  return table;
}

double parse_double(const std::string& field, const std::string& source, int line,
                    const std::string& column) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  if (!field.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (field.empty() || ec != std::errc() || ptr != last || !std::isfinite(v)) {
    throw IngestionError(source + ":" + std::to_string(line) + ": column '" + column +
                         "' is not a finite number: '" + field + "'");
  }
  return v;
}

std::int64_t parse_label(const std::string& field, const std::string& source, int line,
                         const std::string& column) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (field.empty() || ec != std::errc() || ptr != field.data() + field.size()) {
    throw IngestionError(source + ":" + std::to_string(line) + ": column '" + column +
                         "' is not an integer label: '" + field + "'");
  }
  return v;
}

void expect_header(const CsvTable& table, const std::vector<std::string>& leading,
                   const std::string& source) {
  if (table.header.size() < leading.size()) {
    throw IngestionError(source + ":1: header must start with " + leading.front() + "," +
                         leading[1] + "," + leading[2]);
  }
  for (std::size_t i = 0; i < leading.size(); ++i) {
    if (table.header[i] != leading[i]) {
      throw IngestionError(source + ":1: column " + std::to_string(i + 1) + " must be '" +
                           leading[i] + "', found '" + table.header[i] + "'");
    }
  }
  std::set<std::string> seen;
  for (const auto& h : table.header) {
    if (!seen.insert(h).second) throw IngestionError(source + ":1: duplicate column '" + h + "'");
  }
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Indexes rows by (group, time) on the sorted label grid and reports the first
// missing cell.
struct Grid {
  std::vector<std::int64_t> groups;
  std::vector<std::int64_t> times;
  std::vector<std::vector<int>> rows;  // [cell] -> row indices
};

Grid build_grid(const CsvTable& table, const std::string& source) {
  Grid grid;
  std::vector<std::pair<std::int64_t, std::int64_t>> keys;
  std::set<std::int64_t> gs, ts;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto g = parse_label(table.rows[r][0], source, table.lines[r], table.header[0]);
    const auto t = parse_label(table.rows[r][1], source, table.lines[r], table.header[1]);
    keys.emplace_back(g, t);
    gs.insert(g);
    ts.insert(t);
  }
  if (keys.empty()) throw IngestionError(source + ": no data rows");
  grid.groups.assign(gs.begin(), gs.end());
  grid.times.assign(ts.begin(), ts.end());
  const std::size_t T = grid.times.size();
  grid.rows.resize(grid.groups.size() * T);
  for (std::size_t r = 0; r < keys.size(); ++r) {
    const auto s = std::lower_bound(grid.groups.begin(), grid.groups.end(), keys[r].first) -
                   grid.groups.begin();
    const auto t = std::lower_bound(grid.times.begin(), grid.times.end(), keys[r].second) -
                   grid.times.begin();
    grid.rows[static_cast<std::size_t>(s) * T + t].push_back(static_cast<int>(r));
  }
  for (std::size_t s = 0; s < grid.groups.size(); ++s) {
    for (std::size_t t = 0; t < T; ++t) {
      if (grid.rows[s * T + t].empty()) {
        throw IngestionError(source + ": missing cell group=" + std::to_string(grid.groups[s]) +
                             " time=" + std::to_string(grid.times[t]));
      }
    }
  }
  return grid;
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
  if (!out) throw Error("write failed: " + path.string());
}

MicroData parse_micro_csv(const std::string& text, const std::string& source) {
  const CsvTable table = read_csv(text, source);
  expect_header(table, {"group", "time", "y"}, source);
  const std::vector<std::string> zcols(table.header.begin() + 3, table.header.end());
  const bool has_const = std::find(zcols.begin(), zcols.end(), "const") != zcols.end();

  MicroData out;
  out.implicit_intercept = !has_const;
  std::vector<std::string> names;
  if (!has_const) names.push_back("const");
  names.insert(names.end(), zcols.begin(), zcols.end());
  const int J = static_cast<int>(names.size());
  if (J == 0) throw IngestionError(source + ":1: no regressors");
  const int offset = has_const ? 0 : 1;

  Grid grid = build_grid(table, source);
  const int S = static_cast<int>(grid.groups.size());
  const int T = static_cast<int>(grid.times.size());
  std::vector<MicroCell> cells(grid.rows.size());
  for (std::size_t c = 0; c < grid.rows.size(); ++c) {
    const auto& rows = grid.rows[c];
    MicroCell& cell = cells[c];
    cell.y.resize(static_cast<Eigen::Index>(rows.size()));
    cell.Z.resize(static_cast<Eigen::Index>(rows.size()), J);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& fields = table.rows[static_cast<std::size_t>(rows[i])];
      const int line = table.lines[static_cast<std::size_t>(rows[i])];
      cell.y[static_cast<Eigen::Index>(i)] = parse_double(fields[2], source, line, "y");
      if (!has_const) cell.Z(static_cast<Eigen::Index>(i), 0) = 1.0;
      for (std::size_t k = 0; k < zcols.size(); ++k) {
        cell.Z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k) + offset) =
            parse_double(fields[3 + k], source, line, zcols[k]);
      }
    }
  }
  out.panel = MicroPanel(S, T, std::move(cells), std::move(names));
  out.groups = std::move(grid.groups);
  out.times = std::move(grid.times);
  return out;
}

MicroData ingest_micro_csv(const std::filesystem::path& path) {
  return parse_micro_csv(read_file(path), path.string());
}

GroupData parse_group_csv(const std::string& text, std::int64_t t0, const std::string& source) {
  const CsvTable table = read_csv(text, source);
  expect_header(table, {"group", "time", "d"}, source);
  const std::vector<std::string> xcols(table.header.begin() + 3, table.header.end());
  const int K = static_cast<int>(xcols.size());

  Grid grid = build_grid(table, source);
  const int S = static_cast<int>(grid.groups.size());
  const int T = static_cast<int>(grid.times.size());
  const auto t0_it = std::find(grid.times.begin(), grid.times.end(), t0);
  if (t0_it == grid.times.end()) {
    throw DesignError(source + ": policy start t0=" + std::to_string(t0) +
                      " is not an observed time");
  }
  const int t0_index = static_cast<int>(t0_it - grid.times.begin());

  std::vector<Eigen::MatrixXd> X(static_cast<std::size_t>(S), Eigen::MatrixXd(T, K));
  Eigen::VectorXd treated = Eigen::VectorXd::Zero(S);
  for (int s = 0; s < S; ++s) {
    for (int t = 0; t < T; ++t) {
      const auto& rows = grid.rows[static_cast<std::size_t>(s) * T + t];
      const std::size_t r = static_cast<std::size_t>(rows.front());
      if (rows.size() > 1) {
        throw IngestionError(source + ":" + std::to_string(table.lines[rows[1]]) +
                             ": duplicate row for group=" + std::to_string(grid.groups[s]) +
                             " time=" + std::to_string(grid.times[t]));
      }
      const int line = table.lines[r];
      const double d = parse_double(table.rows[r][2], source, line, "d");
      if (d != 0.0 && d != 1.0) {
        throw DesignError(source + ":" + std::to_string(line) + ": d must be 0 or 1");
      }
      for (int k = 0; k < K; ++k) {
        X[s](t, k) = parse_double(table.rows[r][3 + k], source, line, xcols[k]);
      }
      if (t < t0_index && d != 0.0) {
        throw DesignError(source + ":" + std::to_string(line) + ": group " +
                          std::to_string(grid.groups[s]) + " is treated before t0");
      }
      if (t == t0_index) treated[s] = d;
      if (t > t0_index && d != treated[s]) {
        throw DesignError(source + ":" + std::to_string(line) + ": group " +
                          std::to_string(grid.groups[s]) +
                          " switches treatment status after t0");
      }
    }
  }
  GroupData out{GroupDesign(std::move(X), std::move(treated), t0_index, xcols),
                std::move(grid.groups), std::move(grid.times), t0};
  return out;
}

GroupData ingest_group_csv(const std::filesystem::path& path, std::int64_t t0) {
  return parse_group_csv(read_file(path), t0, path.string());
}

std::string micro_to_csv(const MicroData& data) {
  const MicroPanel& p = data.panel;
  const auto& names = p.attribute_names();
  const int first = data.implicit_intercept ? 1 : 0;
  std::ostringstream os;
  os << "group,time,y";
  for (std::size_t k = static_cast<std::size_t>(first); k < names.size(); ++k) os << ',' << names[k];
  os << '\n';
  for (int s = 0; s < p.groups(); ++s) {
    for (int t = 0; t < p.periods(); ++t) {
      const MicroCell& c = p.cell(s, t);
      for (Eigen::Index i = 0; i < c.y.size(); ++i) {
        os << data.groups[s] << ',' << data.times[t] << ',' << fmt(c.y[i]);
        for (int k = first; k < p.regressors(); ++k) os << ',' << fmt(c.Z(i, k));
        os << '\n';
      }
    }
  }
  return os.str();
}

std::string group_to_csv(const GroupData& data) {
  const GroupDesign& g = data.design;
  std::ostringstream os;
  os << "group,time,d";
  for (const auto& n : g.covariate_names()) os << ',' << n;
  os << '\n';
  for (int s = 0; s < g.groups(); ++s) {
    for (int t = 0; t < g.periods(); ++t) {
      os << data.groups[s] << ',' << data.times[t] << ',' << fmt(g.treatment(s, t));
      for (int k = 0; k < g.covariate_count(); ++k) os << ',' << fmt(g.covariates(s)(t, k));
      os << '\n';
    }
  }
  return os.str();
}

std::string to_string(EffectKind kind) {
  switch (kind) {
    case EffectKind::kAqtt:
      return "aqtt";
    case EffectKind::kWithin:
      return "within";
    case EffectKind::kBetween:
      return "between";
  }
  return "unknown";
}

Eigen::VectorXd resolve_attributes(const std::map<std::string, double>& named,
                                   const std::vector<std::string>& attribute_names) {
  Eigen::VectorXd z = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(attribute_names.size()));
  for (const auto& [name, value] : named) {
    const auto it = std::find(attribute_names.begin(), attribute_names.end(), name);
    if (it == attribute_names.end()) {
      throw ConfigError("unknown attribute '" + name + "'");
    }
    z[it - attribute_names.begin()] = value;
  }
  return z;
}

namespace {

double config_number(const std::string& value, const std::string& key) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (value.empty() || ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("config key '" + key + "': not a number: '" + value + "'");
  }
  return v;
}

std::int64_t config_integer(const std::string& value, const std::string& key) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (value.empty() || ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("config key '" + key + "': not an integer: '" + value + "'");
  }
  return v;
}

std::map<std::string, double> parse_attributes(const std::string& value, const std::string& key) {
  std::map<std::string, double> out;
  for (const auto& item : split(value, ',')) {
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      throw ConfigError("config key '" + key + "': attribute '" + item + "' needs name:value");
    }
    const std::string name = trim(item.substr(0, colon));
    if (!out.emplace(name, config_number(trim(item.substr(colon + 1)), key)).second) {
      throw ConfigError("config key '" + key + "': attribute '" + name + "' given twice");
    }
  }
  return out;
}

EffectSpec parse_effect(const std::string& name, const std::string& value) {
  const std::string key = "effect." + name;
  EffectSpec e;
  e.name = name;
  const auto parts = split(value, ';');
  if (parts.empty() || parts.front().empty()) throw ConfigError(key + ": missing effect kind");
  if (parts.front() == "aqtt") {
    e.kind = EffectKind::kAqtt;
  } else if (parts.front() == "within") {
    e.kind = EffectKind::kWithin;
  } else if (parts.front() == "between") {
    e.kind = EffectKind::kBetween;
  } else {
    throw ConfigError(key + ": unknown effect kind '" + parts.front() + "'");
  }
  std::set<std::string> seen;
  for (std::size_t i = 1; i < parts.size(); ++i) {
    if (parts[i].empty()) continue;
    const auto eq = parts[i].find('=');
    if (eq == std::string::npos) throw ConfigError(key + ": expected field=value in '" + parts[i] + "'");
    const std::string field = trim(parts[i].substr(0, eq));
    const std::string v = trim(parts[i].substr(eq + 1));
    seen.insert(field);
    if (field == "t") {
      e.time = config_integer(v, key);
    } else if (field == "u") {
      e.u = config_number(v, key);
    } else if (field == "u1") {
      e.u1 = config_number(v, key);
    } else if (field == "u2") {
      e.u2 = config_number(v, key);
    } else if (field == "z") {
      e.z = parse_attributes(v, key);
    } else if (field == "z1") {
      e.z1 = parse_attributes(v, key);
    } else if (field == "z2") {
      e.z2 = parse_attributes(v, key);
    } else {
      throw ConfigError(key + ": unknown field '" + field + "'");
    }
  }
  auto require = [&](std::initializer_list<const char*> fields) {
    for (const char* f : fields) {
      if (!seen.count(f)) throw ConfigError(key + ": missing field '" + f + "'");
    }
  };
  switch (e.kind) {
    case EffectKind::kAqtt:
      require({"t", "u", "z"});
      break;
    case EffectKind::kBetween:
      require({"t", "u", "z1", "z2"});
      break;
    case EffectKind::kWithin:
      require({"t", "u1", "u2", "z"});
      break;
  }
  return e;
}

}  // namespace

void RunConfig::validate() const {
  if (quantiles.empty()) throw ConfigError("config: no quantiles");
  std::vector<double> sorted = quantiles;
  std::sort(sorted.begin(), sorted.end());
  for (double u : sorted) {
    if (!(u > 0.0 && u < 1.0)) throw ConfigError("config: quantile " + fmt(u) + " outside (0,1)");
  }
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ConfigError("config: duplicate quantiles");
  }
  if (!(tol > 0.0)) throw ConfigError("config: tol must be positive");
  if (max_iter < 1) throw ConfigError("config: max_iter must be positive");
  if (!(ci_level > 0.0 && ci_level < 1.0)) throw ConfigError("config: ci_level outside (0,1)");
  if (fixed_factors && *fixed_factors < 0) throw ConfigError("config: negative factor count");
  auto fitted = [&](double u) {
    return std::any_of(sorted.begin(), sorted.end(),
                       [&](double v) { return std::abs(u - v) <= 1e-12; });
  };
  std::set<std::string> names;
  for (const auto& e : effects) {
    if (!names.insert(e.name).second) throw ConfigError("config: duplicate effect '" + e.name + "'");
    if (e.kind == EffectKind::kWithin) {
      if (!fitted(e.u1) || !fitted(e.u2)) {
        throw ConfigError("effect '" + e.name + "': quantile not in the fitted set");
      }
      if (!(e.u1 < e.u2)) throw ConfigError("effect '" + e.name + "': needs u1 < u2");
    } else if (!fitted(e.u)) {
      throw ConfigError("effect '" + e.name + "': quantile not in the fitted set");
    }
  }
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) {
      throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    if (key == "quantiles") {
      cfg.quantiles.clear();
      for (const auto& item : split(value, ',')) cfg.quantiles.push_back(config_number(item, key));
    } else if (key == "t0") {
      cfg.t0 = config_integer(value, key);
    } else if (key == "factors") {
      if (value == "auto") {
        cfg.fixed_factors.reset();
      } else {
        cfg.fixed_factors = static_cast<int>(config_integer(value, key));
      }
    } else if (key == "tol") {
      cfg.tol = config_number(value, key);
    } else if (key == "max_iter") {
      cfg.max_iter = static_cast<int>(config_integer(value, key));
    } else if (key == "ci_level") {
      cfg.ci_level = config_number(value, key);
    } else if (key.rfind("effect.", 0) == 0 && key.size() > 7) {
      cfg.effects.push_back(parse_effect(key.substr(7), value));
    } else {
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config(os.str());
}

}  // namespace qrife
