#include "qrife/quantile_regression.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "qrife/error.hpp"
#include "qrife/parallel.hpp"

namespace qrife {

namespace {

void require_quantile(double u) {
  if (!(u > 0.0 && u < 1.0)) {
    std::ostringstream os;
    os << "quantile level must lie in (0,1), got " << u;
    throw DomainError(os.str());
  }
}

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Largest step in (0, 1e20] keeping v + step * dv nonnegative.
double max_step(const VectorXd& v, const VectorXd& dv) {
  double step = 1e20;
  for (Index i = 0; i < v.size(); ++i) {
    if (dv[i] < 0.0) step = std::min(step, -v[i] / dv[i]);
  }
  return step;
}

struct WarmStart {
  VectorXd coef;
  int iterations = 0;
  bool ok = false;
};

// Frisch-Newton primal-dual interior point with Mehrotra correction on the
// bounded LP  min -y'x  s.t.  Z'x = (1-u) Z'1,  0 <= x <= 1.
// The coefficients are the negated equality multipliers.
WarmStart interior_point(const MatrixXd& Z, const VectorXd& y, double u,
                         const QrOptions& opt) {
  const Index n = Z.rows();
  constexpr double kStepScale = 0.9995;

  WarmStart out;
  const VectorXd c = -y;
  VectorXd x = VectorXd::Constant(n, 1.0 - u);
  VectorXd s = VectorXd::Ones(n) - x;
  const VectorXd b = Z.transpose() * x;

  VectorXd dual = Z.colPivHouseholderQr().solve(c);
  VectorXd r = c - Z * dual;
  for (Index i = 0; i < n; ++i) {
    if (r[i] == 0.0) r[i] = 0.001;
  }
  VectorXd z = r.cwiseMax(0.0);
  VectorXd w = z - r;

  auto gap_of = [&] { return c.dot(x) - dual.dot(b) + w.sum(); };
  double gap = gap_of();

  int it = 0;
  int stalled = 0;
  while (it < opt.max_iter) {
    const double scale = 1.0 + std::abs(dual.dot(b));
    if (std::isfinite(gap) && gap <= opt.gap_tol * scale) {
      out.ok = true;
      break;
    }
    ++it;
    const VectorXd q = (z.cwiseQuotient(x) + w.cwiseQuotient(s)).cwiseInverse();
    r = z - w;
    const MatrixXd normal = Z.transpose() * q.asDiagonal() * Z;
    Eigen::LDLT<MatrixXd> chol(normal);
    if (chol.info() != Eigen::Success) break;

    VectorXd dy = chol.solve(Z.transpose() * q.cwiseProduct(r));
    VectorXd dx = q.cwiseProduct(Z * dy - r);
    VectorXd ds = -dx;
    VectorXd dz = -z.cwiseProduct(dx.cwiseQuotient(x) + VectorXd::Ones(n));
    VectorXd dw = -w.cwiseProduct(ds.cwiseQuotient(s) + VectorXd::Ones(n));

    double fp = std::min(max_step(x, dx), max_step(s, ds));
    double fd = std::min(max_step(w, dw), max_step(z, dz));
    fp = std::min(kStepScale * fp, 1.0);
    fd = std::min(kStepScale * fd, 1.0);

    if (std::min(fp, fd) < 1.0) {
      // Mehrotra corrector.
      double mu = z.dot(x) + w.dot(s);
      const double g = (z + fd * dz).dot(x + fp * dx) + (w + fd * dw).dot(s + fp * ds);
      mu = mu * std::pow(g / mu, 3) / (2.0 * static_cast<double>(n));
      const VectorXd dxdz = dx.cwiseProduct(dz);
      const VectorXd dsdw = ds.cwiseProduct(dw);
      const VectorXd xinv = x.cwiseInverse();
      const VectorXd sinv = s.cwiseInverse();
      const VectorXd xi = mu * (xinv - sinv);
      dy = chol.solve(Z.transpose() * q.cwiseProduct(r + dxdz - dsdw - xi));
      dx = q.cwiseProduct(Z * dy + xi - r - dxdz + dsdw);
      ds = -dx;
      dz = mu * xinv - z - xinv.cwiseProduct(z).cwiseProduct(dx) - dxdz;
      dw = mu * sinv - w - sinv.cwiseProduct(w).cwiseProduct(ds) - dsdw;
      fp = std::min(max_step(x, dx), max_step(s, ds));
      fd = std::min(max_step(w, dw), max_step(z, dz));
      fp = std::min(kStepScale * fp, 1.0);
      fd = std::min(kStepScale * fd, 1.0);
    }

    x += fp * dx;
    s += fp * ds;
    dual += fd * dy;
    w += fd * dw;
    z += fd * dz;
    const double next_gap = gap_of();
    if (!std::isfinite(next_gap) || !dual.allFinite()) break;
    stalled = (std::max(fp, fd) < 1e-10) ? stalled + 1 : 0;
    if (stalled >= 5) break;
    gap = next_gap;
  }
  if (!out.ok) {
    const double scale = 1.0 + std::abs(dual.dot(b));
    out.ok = std::isfinite(gap) && gap <= opt.gap_tol * scale;
  }
  out.coef = -dual;
  out.iterations = it;
  return out;
}

// Iteratively reweighted least squares on a smoothed check loss.
WarmStart smoothed_irls(const MatrixXd& Z, const VectorXd& y, double u) {
  WarmStart out;
  VectorXd coef = Z.colPivHouseholderQr().solve(y);
  double eps = 1e-2 * (1.0 + y.cwiseAbs().maxCoeff());
  const int kMaxIter = 500;
  int it = 0;
  for (; it < kMaxIter; ++it) {
    const VectorXd r = y - Z * coef;
    VectorXd wts(r.size());
    for (Index i = 0; i < r.size(); ++i) {
      const double side = r[i] > 0.0 ? u : 1.0 - u;
      wts[i] = side / std::max(std::abs(r[i]), eps);
    }
    const MatrixXd normal = Z.transpose() * wts.asDiagonal() * Z;
    const VectorXd next = normal.ldlt().solve(Z.transpose() * wts.cwiseProduct(y));
    if (!next.allFinite()) break;
    const double change = (next - coef).norm();
    coef = next;
    eps = std::max(eps * 0.5, 1e-12);
    if (change < 1e-12 * (1.0 + coef.norm()) && eps <= 1e-12) break;
  }
  out.coef = coef;
  out.iterations = it;
  out.ok = coef.allFinite();
  return out;
}

// Picks J rows with the smallest absolute residuals that span the regressor
// space.
std::vector<int> initial_basis(const MatrixXd& Z, const VectorXd& resid) {
  const Index n = Z.rows();
  const Index p = Z.cols();
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return std::abs(resid[a]) < std::abs(resid[b]);
  });
  std::vector<int> basis;
  MatrixXd rows(0, p);
  for (int i : order) {
    MatrixXd trial(rows.rows() + 1, p);
    trial << rows, Z.row(i);
    Eigen::FullPivLU<MatrixXd> lu(trial);
    lu.setThreshold(1e-10);
    if (lu.rank() == trial.rows()) {
      rows = std::move(trial);
      basis.push_back(i);
      if (static_cast<Index>(basis.size()) == p) break;
    }
  }
  return basis;
}

struct VertexResult {
  VectorXd coef;
  std::vector<int> basis;
  int pivots = 0;
  bool optimal = false;
};

// Exact descent over the vertices of the check-loss LP starting from the
// basis closest to `start`. Each pivot moves along an edge (release one basis
// row to one side) to the minimizing breakpoint of the piecewise-linear loss.
VertexResult refine_to_vertex(const MatrixXd& Z, const VectorXd& y, double u,
                              const VectorXd& start) {
  const Index n = Z.rows();
  const Index p = Z.cols();
  VertexResult out;
  out.basis = initial_basis(Z, y - Z * start);
  if (static_cast<Index>(out.basis.size()) != p) return out;

  const double scale = 1.0 + y.cwiseAbs().maxCoeff();
  const double zero_tol = 1e-11 * scale;
  const double slope_tol = 1e-11 * (1.0 + Z.cwiseAbs().sum());
  const int max_pivots = static_cast<int>(50 * n + 100);

  auto solve_basis = [&](const std::vector<int>& basis, MatrixXd& inverse) {
    MatrixXd zb(p, p);
    VectorXd yb(p);
    for (Index k = 0; k < p; ++k) {
      zb.row(k) = Z.row(basis[k]);
      yb[k] = y[basis[k]];
    }
    Eigen::PartialPivLU<MatrixXd> lu(zb);
    inverse = lu.inverse();
    return VectorXd(inverse * yb);
  };

  MatrixXd inverse;
  VectorXd coef = solve_basis(out.basis, inverse);
  std::vector<char> in_basis(static_cast<std::size_t>(n), 0);
  for (int i : out.basis) in_basis[i] = 1;

  for (int pivot = 0; pivot <= max_pivots; ++pivot) {
    VectorXd resid = y - Z * coef;
    for (int i : out.basis) resid[i] = 0.0;

    // Steepest descending edge.
    double best_slope = -slope_tol;
    Index best_k = -1;
    VectorXd best_dir;
    VectorXd best_g;
    for (Index k = 0; k < p; ++k) {
      for (double sign : {1.0, -1.0}) {
        const VectorXd dir = sign * inverse.col(k);
        const VectorXd g = Z * dir;
        // The released basis row moves to residual -sign * t.
        double slope = sign > 0.0 ? 1.0 - u : u;
        for (Index i = 0; i < n; ++i) {
          if (in_basis[i]) continue;
          if (resid[i] > zero_tol) {
            slope -= g[i] * u;
          } else if (resid[i] < -zero_tol) {
            slope -= g[i] * (u - 1.0);
          } else {
            slope += g[i] < 0.0 ? -g[i] * u : g[i] * (1.0 - u);
          }
        }
        if (slope < best_slope) {
          best_slope = slope;
          best_k = k;
          best_dir = dir;
          best_g = g;
        }
      }
    }
    if (best_k < 0) {
      out.coef = coef;
      out.optimal = true;
      out.pivots = pivot;
      return out;
    }

    // Breakpoints along the edge, in order; each raises the slope by |g_i|.
    std::vector<std::pair<double, Index>> breaks;
    for (Index i = 0; i < n; ++i) {
      if (in_basis[i] || std::abs(resid[i]) <= zero_tol) continue;
      if (std::abs(best_g[i]) < 1e-300) continue;
      const double t = resid[i] / best_g[i];
      if (t > 0.0) breaks.emplace_back(t, i);
    }
    std::sort(breaks.begin(), breaks.end());
    double slope = best_slope;
    Index entering = -1;
    for (const auto& [t, i] : breaks) {
      slope += std::abs(best_g[i]);
      if (slope >= 0.0) {
        entering = i;
        break;
      }
    }
    if (entering < 0) break;  // unbounded direction: impossible at full rank

    in_basis[out.basis[best_k]] = 0;
    out.basis[best_k] = static_cast<int>(entering);
    in_basis[entering] = 1;
    coef = solve_basis(out.basis, inverse);
    out.pivots = pivot + 1;
  }
  out.coef = coef;
  return out;
}

void require_full_rank(const MatrixXd& Z) {
  const Index n = Z.rows();
  const Index p = Z.cols();
  if (n < p) {
    std::ostringstream os;
    os << "singular design: " << n << " observations for " << p << " regressors";
    std::vector<int> cols;
    for (Index k = n; k < p; ++k) cols.push_back(static_cast<int>(k));
    throw SingularDesignError(os.str(), std::move(cols));
  }
  Eigen::ColPivHouseholderQR<MatrixXd> qr(Z);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) {
    std::vector<int> cols;
    for (Index k = qr.rank(); k < p; ++k) {
      cols.push_back(static_cast<int>(qr.colsPermutation().indices()[k]));
    }
    std::sort(cols.begin(), cols.end());
    std::ostringstream os;
    os << "singular design: rank " << qr.rank() << " < " << p
       << "; dependent columns:";
    for (int c : cols) os << ' ' << c;
    throw SingularDesignError(os.str(), std::move(cols));
  }
}

}  // namespace

double check_loss(double residual, double u) {
  require_quantile(u);
  return (u - (residual < 0.0 ? 1.0 : 0.0)) * residual;
}

double check_loss_sum(const Eigen::Ref<const Eigen::VectorXd>& residuals, double u) {
  require_quantile(u);
  double total = 0.0;
  for (Index i = 0; i < residuals.size(); ++i) {
    const double v = residuals[i];
    total += (u - (v < 0.0 ? 1.0 : 0.0)) * v;
  }
  return total;
}

QrFit fit_qr(const Eigen::Ref<const Eigen::MatrixXd>& Z_in,
             const Eigen::Ref<const Eigen::VectorXd>& y_in, double u,
             const QrOptions& options) {
  require_quantile(u);
  if (Z_in.rows() != y_in.size()) {
    throw ContractError("fit_qr: Z has " + std::to_string(Z_in.rows()) +
                        " rows but y has " + std::to_string(y_in.size()));
  }
  if (!Z_in.allFinite() || !y_in.allFinite()) {
    throw DomainError("fit_qr: non-finite input");
  }
  const MatrixXd Z = Z_in;
  const VectorXd y = y_in;
  require_full_rank(Z);

  QrFit fit;
  WarmStart warm = interior_point(Z, y, u, options);
  fit.path = QrSolverPath::kInteriorPoint;
  if (!warm.ok) {
    const int ip_iterations = warm.iterations;
    warm = smoothed_irls(Z, y, u);
    warm.iterations += ip_iterations;
    fit.path = QrSolverPath::kSmoothedIrls;
  }
  fit.iterations = warm.iterations;
  if (!warm.coef.allFinite()) {
    throw SolverFailure("fit_qr: no finite iterate after " +
                            std::to_string(warm.iterations) + " iterations",
                        warm.iterations);
  }

  VertexResult vertex = refine_to_vertex(Z, y, u, warm.coef);
  if (!vertex.optimal) {
    throw SolverFailure("fit_qr: no optimal vertex after " +
                            std::to_string(warm.iterations) + " iterations and " +
                            std::to_string(vertex.pivots) + " pivots",
                        warm.iterations);
  }
  fit.coef = std::move(vertex.coef);
  fit.basis = std::move(vertex.basis);
  std::sort(fit.basis.begin(), fit.basis.end());
  fit.pivots = vertex.pivots;
  fit.objective = check_loss_sum(y - Z * fit.coef, u);
  return fit;
}

MicroPanel::MicroPanel(int groups, int periods, std::vector<MicroCell> cells,
                       std::vector<std::string> attribute_names)
    : groups_(groups), periods_(periods), cells_(std::move(cells)),
      attribute_names_(std::move(attribute_names)) {
  if (groups < 1 || periods < 1) {
    throw ContractError("micro panel needs at least one group and one period");
  }
  if (cells_.size() != static_cast<std::size_t>(groups) * periods) {
    throw ContractError("micro panel: expected " + std::to_string(groups * periods) +
                        " cells, got " + std::to_string(cells_.size()));
  }
  regressors_ = static_cast<int>(cells_.front().Z.cols());
  if (regressors_ < 1) throw ContractError("micro panel: no regressors");
  for (int s = 0; s < groups; ++s) {
    for (int t = 0; t < periods; ++t) {
      const MicroCell& c = cells_[static_cast<std::size_t>(s) * periods + t];
      const std::string where =
          " in cell (group " + std::to_string(s) + ", period " + std::to_string(t) + ")";
      if (c.y.size() < 1) throw ContractError("micro panel: empty cell" + where);
      if (c.Z.rows() != c.y.size()) throw ContractError("micro panel: ragged rows" + where);
      if (c.Z.cols() != regressors_) {
        throw ContractError("micro panel: regressor count differs" + where);
      }
      if (!c.y.allFinite() || !c.Z.allFinite()) {
        throw DomainError("micro panel: non-finite value" + where);
      }
    }
  }
  if (attribute_names_.empty()) {
    attribute_names_.push_back("const");
    for (int j = 1; j < regressors_; ++j) attribute_names_.push_back("z" + std::to_string(j));
  }
  if (static_cast<int>(attribute_names_.size()) != regressors_) {
    throw ContractError("micro panel: attribute names do not match regressor count");
  }
}

const MicroCell& MicroPanel::cell(int s, int t) const {
  if (s < 0 || s >= groups_ || t < 0 || t >= periods_) {
    throw ContractError("micro panel: cell index out of range");
  }
  return cells_[static_cast<std::size_t>(s) * periods_ + t];
}

QuantileCoefficientPanel::QuantileCoefficientPanel(double u, int groups, int periods,
                                                   int regressors)
    : u_(u), groups_(groups), periods_(periods), regressors_(regressors),
      alpha_(static_cast<std::size_t>(groups) * periods, VectorXd::Zero(regressors)),
      diag_(static_cast<std::size_t>(groups) * periods) {}

std::size_t QuantileCoefficientPanel::index(int s, int t) const {
  if (s < 0 || s >= groups_ || t < 0 || t >= periods_) {
    throw ContractError("coefficient panel: cell index out of range");
  }
  return static_cast<std::size_t>(s) * periods_ + t;
}

Eigen::MatrixXd QuantileCoefficientPanel::coefficient_panel(int j) const {
  if (j < 0 || j >= regressors_) throw ContractError("coefficient index out of range");
  MatrixXd out(groups_, periods_);
  for (int s = 0; s < groups_; ++s) {
    for (int t = 0; t < periods_; ++t) out(s, t) = alpha(s, t)[j];
  }
  return out;
}

std::vector<QuantileCoefficientPanel> fit_first_step(const MicroPanel& panel,
                                                     std::span<const double> quantiles,
                                                     const QrOptions& options,
                                                     int threads) {
  std::vector<double> us(quantiles.begin(), quantiles.end());
  if (us.empty()) throw DomainError("first step: no quantile levels requested");
  for (double u : us) require_quantile(u);
  std::sort(us.begin(), us.end());
  if (std::adjacent_find(us.begin(), us.end()) != us.end()) {
    throw DomainError("first step: duplicate quantile levels");
  }

  const int S = panel.groups();
  const int T = panel.periods();
  std::vector<QuantileCoefficientPanel> out;
  out.reserve(us.size());
  for (double u : us) out.emplace_back(u, S, T, panel.regressors());

  const std::size_t cells = static_cast<std::size_t>(S) * T;
  parallel_for(cells * us.size(), threads, [&](std::size_t idx) {
    const std::size_t q = idx / cells;
    const int s = static_cast<int>((idx % cells) / T);
    const int t = static_cast<int>(idx % T);
    const MicroCell& c = panel.cell(s, t);
    try {
      QrFit fit = fit_qr(c.Z, c.y, us[q], options);
      out[q].alpha(s, t) = std::move(fit.coef);
      out[q].diagnostics(s, t) = {fit.path, fit.iterations, fit.objective};
    } catch (const Error& e) {
      std::ostringstream os;
      os << "first step failed at group " << s << ", period " << t << ", u=" << us[q]
         << ": " << e.what();
      throw CellError(os.str(), s, t, us[q]);
    }
  });
  return out;
}

}  // namespace qrife
