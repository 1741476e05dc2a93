#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace qrife {

/// Check (pinball) loss (u - 1{v < 0}) v. Throws DomainError unless 0 < u < 1.
double check_loss(double residual, double u);

/// Sum of check losses over a residual vector.
double check_loss_sum(const Eigen::Ref<const Eigen::VectorXd>& residuals, double u);

/// Outcomes and regressors of one (group, period) cell. The first column of
/// `Z` is the intercept when the panel carries one.
struct MicroCell {
  Eigen::VectorXd y;
  Eigen::MatrixXd Z;
};

/// Repeated cross-sections on a complete groups x periods grid.
class MicroPanel {
 public:
  MicroPanel() = default;

  /// `cells` is indexed group-major: cells[s * periods + t]. Validates the
  /// grid, row counts, regressor counts and finiteness.
  MicroPanel(int groups, int periods, std::vector<MicroCell> cells,
             std::vector<std::string> attribute_names = {});

  int groups() const noexcept { return groups_; }
  int periods() const noexcept { return periods_; }
  int regressors() const noexcept { return regressors_; }
  const std::vector<std::string>& attribute_names() const noexcept {
    return attribute_names_;
  }

  const MicroCell& cell(int s, int t) const;
  const std::vector<MicroCell>& cells() const noexcept { return cells_; }

 private:
  int groups_ = 0;
  int periods_ = 0;
  int regressors_ = 0;
  std::vector<MicroCell> cells_;
  std::vector<std::string> attribute_names_;
};

enum class QrSolverPath { kInteriorPoint, kSmoothedIrls };

struct QrOptions {
  double gap_tol = 1e-9;  // relative duality gap for the interior point stop
  int max_iter = 100;
};

struct QrFit {
  Eigen::VectorXd coef;
  double objective = 0.0;
  int iterations = 0;  // interior point (or IRLS) iterations
  int pivots = 0;      // vertex refinement steps after the warm start
  QrSolverPath path = QrSolverPath::kInteriorPoint;
  std::vector<int> basis;  // rows fitted exactly at the returned vertex
};

/// Linear quantile regression of y on Z at level u.
///
/// The check-loss LP is solved with a primal-dual (Frisch-Newton) interior
/// point method; if that stalls, a smoothed IRLS iteration takes over. The
/// approximate solution is then moved to an optimal basic solution by exact
/// simplex-type pivots, so the returned point is a vertex of the LP and its
/// objective is optimal up to round-off.
///
/// Throws SingularDesignError when N < J or Z is numerically rank deficient,
/// SolverFailure when neither path produces an optimal vertex.
QrFit fit_qr(const Eigen::Ref<const Eigen::MatrixXd>& Z,
             const Eigen::Ref<const Eigen::VectorXd>& y, double u,
             const QrOptions& options = {});

struct CellDiagnostics {
  QrSolverPath path = QrSolverPath::kInteriorPoint;
  int iterations = 0;
  double objective = 0.0;
};

/// First-step coefficients alpha_st(u) for every cell at one quantile.
class QuantileCoefficientPanel {
 public:
  QuantileCoefficientPanel(double u, int groups, int periods, int regressors);

  double quantile() const noexcept { return u_; }
  int groups() const noexcept { return groups_; }
  int periods() const noexcept { return periods_; }
  int regressors() const noexcept { return regressors_; }

  Eigen::VectorXd& alpha(int s, int t) { return alpha_[index(s, t)]; }
  const Eigen::VectorXd& alpha(int s, int t) const { return alpha_[index(s, t)]; }
  CellDiagnostics& diagnostics(int s, int t) { return diag_[index(s, t)]; }
  const CellDiagnostics& diagnostics(int s, int t) const { return diag_[index(s, t)]; }

  /// S x T panel of coefficient j, the input of the second step.
  Eigen::MatrixXd coefficient_panel(int j) const;

 private:
  std::size_t index(int s, int t) const;

  double u_;
  int groups_;
  int periods_;
  int regressors_;
  std::vector<Eigen::VectorXd> alpha_;
  std::vector<CellDiagnostics> diag_;
};

/// Fits every cell at every quantile. Output is sorted by quantile and is
/// independent of the thread count. A failing cell aborts the step with a
/// CellError naming (group, period, quantile).
std::vector<QuantileCoefficientPanel> fit_first_step(
    const MicroPanel& panel, std::span<const double> quantiles,
    const QrOptions& options = {}, int threads = 1);

}  // namespace qrife
