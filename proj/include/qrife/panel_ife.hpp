#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace qrife {

/// Group-level design of the second step: covariates x_st, treatment flags d_s
/// and the first post-policy period.
///
/// Periods are 0-based throughout the library; `first_post_period()` is the
/// index of T0, so the policy coefficients cover periods
/// [first_post_period(), periods()).
class GroupDesign {
 public:
  GroupDesign() = default;

  /// `covariates[s]` is the T x K matrix X_s (K may be 0). `treated[s]` must be
  /// 0 or 1. Requires at least one treated and one control group and
  /// 1 <= t0 < T - 1 (the second period onwards, never the last).
  GroupDesign(std::vector<Eigen::MatrixXd> covariates, Eigen::VectorXd treated, int t0,
              std::vector<std::string> covariate_names = {});

  int groups() const noexcept { return static_cast<int>(treated_.size()); }
  int periods() const noexcept { return periods_; }
  int covariate_count() const noexcept { return covariates_count_; }
  int first_post_period() const noexcept { return t0_; }
  int post_periods() const noexcept { return periods_ - t0_; }
  int treated_count() const noexcept { return treated_count_; }

  const Eigen::MatrixXd& covariates(int s) const { return X_.at(static_cast<std::size_t>(s)); }
  const Eigen::VectorXd& treated() const noexcept { return treated_; }
  const std::vector<std::string>& covariate_names() const noexcept { return names_; }

  /// d_st = d_s 1{t >= T0}.
  double treatment(int s, int t) const { return t >= t0_ ? treated_[s] : 0.0; }

  /// X_s' beta for every group: an S x T panel.
  Eigen::MatrixXd covariate_effect(const Eigen::VectorXd& beta) const;

  /// D_s delta for every group: an S x T panel that is zero before T0.
  Eigen::MatrixXd treatment_effect(const Eigen::VectorXd& delta) const;

 private:
  std::vector<Eigen::MatrixXd> X_;
  Eigen::VectorXd treated_;
  int t0_ = 0;
  int periods_ = 0;
  int covariates_count_ = 0;
  int treated_count_ = 0;
  std::vector<std::string> names_;
};

/// One row of the iteration trace. Iteration 0 is the factor-free initial
/// estimate.
struct IterationRecord {
  int iteration = 0;
  int factors = 0;
  double ssr = 0.0;
  double delta_change = 0.0;   // Euclidean norm of the delta update
  double beta_change = 0.0;    // Euclidean norm of the beta update
  double common_change = 0.0;  // Frobenius norm of the F Lambda' update
  Eigen::VectorXd delta;
  Eigen::VectorXd beta;
  std::vector<std::string> warnings;
};

struct FactorModelFit {
  int coefficient = 0;  // j
  double quantile = 0.0;
  Eigen::VectorXd delta;        // post periods, length T - T0
  Eigen::VectorXd beta;         // K
  Eigen::MatrixXd F;            // T x r, F'F / T = I
  Eigen::MatrixXd Lambda;       // S x r, Lambda'Lambda / S diagonal, descending
  Eigen::VectorXd eigenvalues;  // full spectrum of the last PCA step, descending
  Eigen::MatrixXd residuals;    // S x T, eta-hat
  int factors = 0;
  bool converged = false;
  std::vector<IterationRecord> trace;

  /// F Lambda' as an S x T panel.
  Eigen::MatrixXd common_component() const;
  /// Policy coefficients after iteration m (or the final ones if the fit
  /// converged earlier).
  const Eigen::VectorXd& delta_at(int iteration) const;
};

struct IfeConfig {
  double tol = 1e-5;
  int max_iter = 1000;
  std::optional<int> fixed_factors;  // pins r; otherwise the eigen-ratio rule
};

struct CoefficientEstimate {
  Eigen::VectorXd delta;
  Eigen::VectorXd beta;
};

struct PcaResult {
  Eigen::MatrixXd F;
  Eigen::MatrixXd Lambda;
  Eigen::VectorXd eigenvalues;  // descending, length T
  std::vector<std::string> warnings;
};

struct FactorSelection {
  int factors = 0;
  int max_factors = 0;
  bool no_factor_structure = false;
  std::vector<double> criterion;  // value at r = 1..max_factors
};

/// Sum over groups of ||A_s - D_s delta - X_s beta - F lambda_s||^2.
double ssr(const Eigen::MatrixXd& A, const GroupDesign& design, const Eigen::VectorXd& delta,
           const Eigen::VectorXd& beta, const Eigen::MatrixXd& F, const Eigen::MatrixXd& Lambda);

/// Residual panel A - D delta - X beta - F Lambda' (S x T).
Eigen::MatrixXd residual_panel(const Eigen::MatrixXd& A, const GroupDesign& design,
                               const Eigen::VectorXd& delta, const Eigen::VectorXd& beta,
                               const Eigen::MatrixXd& F, const Eigen::MatrixXd& Lambda);

/// Joint least squares of A on (D, X) without factors.
CoefficientEstimate initial_estimate(const Eigen::MatrixXd& A, const GroupDesign& design);

/// Joint least squares of A - F Lambda' on (D, X).
CoefficientEstimate coef_step(const Eigen::MatrixXd& A, const GroupDesign& design,
                              const Eigen::MatrixXd& F, const Eigen::MatrixXd& Lambda);

/// Second-moment matrix (1/ST) sum_s W_s W_s' of the factor-free residuals
/// W = A - D delta - X beta, symmetrized.
Eigen::MatrixXd residual_moment(const Eigen::MatrixXd& A, const GroupDesign& design,
                                const Eigen::VectorXd& delta, const Eigen::VectorXd& beta);

/// Principal components of the factor-free residual panel with r factors.
PcaResult pca_step(const Eigen::MatrixXd& A, const GroupDesign& design,
                   const Eigen::VectorXd& delta, const Eigen::VectorXd& beta, int r);

/// Eigen-ratio factor count for a descending spectrum from S groups.
FactorSelection select_num_factors(const Eigen::VectorXd& eigenvalues, int groups);

/// Iterated PCA / least squares until the delta, beta and F Lambda' updates
/// all fall below `tol`.
FactorModelFit fit_ife(const Eigen::MatrixXd& A, const GroupDesign& design,
                       const IfeConfig& config = {});

}  // namespace qrife
