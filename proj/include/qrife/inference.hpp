#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qrife/panel_ife.hpp"
#include "qrife/policy_effects.hpp"

namespace qrife {

/// Treatment flags residualized on the loadings:
/// R_s = d_s - S^-1 sum_g d_g lambda_g' (Lambda'Lambda/S)^-1 lambda_s.
/// With no factors (r = 0) this is d itself.
Eigen::VectorXd rhat(const Eigen::VectorXd& d, const Eigen::MatrixXd& Lambda);

/// Estimated asymptotic bias B_t(u) of sqrt(S)(delta_t(u) - delta), one entry
/// per coefficient j; `fits[j]` is coefficient j's fit at u.
Eigen::VectorXd bias_hat(const std::vector<FactorModelFit>& fits, const GroupDesign& design,
                         int t);

/// Estimated asymptotic covariance Sigma_t(u1, u2) (J x J) between the
/// coefficient sets fitted at u1 and u2.
Eigen::MatrixXd sigma_hat(const std::vector<FactorModelFit>& fits_u1,
                          const std::vector<FactorModelFit>& fits_u2, const GroupDesign& design,
                          int t);

/// One quantile's contribution w' delta_t(u) to a linear policy functional.
struct FunctionalTerm {
  double quantile = 0.0;
  Eigen::VectorXd weights;
};

/// sum_k w_k' delta_t(u_k). AQTT, between- and within-inequality changes are
/// all of this form.
struct LinearFunctional {
  int period = 0;
  std::vector<FunctionalTerm> terms;

  static LinearFunctional aqtt(const Eigen::VectorXd& z, double u, int t);
  static LinearFunctional between(const Eigen::VectorXd& z1, const Eigen::VectorXd& z2,
                                  double u, int t);
  static LinearFunctional within(const Eigen::VectorXd& z, double u1, double u2, int t);
};

struct EffectEstimate {
  double estimate = 0.0;   // plug-in value
  double bias = 0.0;       // c' B_t / sqrt(S), subtracted from the estimate
  double corrected = 0.0;  // estimate - bias
  double variance = 0.0;   // c' Sigma c (asymptotic, before dividing by S)
  double se = 0.0;         // sqrt(variance / S)
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;
  std::vector<std::string> warnings;
};

/// Bias-corrected normal interval
///   estimate - bias/sqrt(S) -/+ z_{(1+level)/2} sqrt(variance / S),
/// where `bias` and `variance` are on the sqrt(S) scale. A negative variance
/// is clipped to zero with a warning.
EffectEstimate normal_interval(double estimate, double bias, double variance, int groups,
                               double level);

/// Bias and covariance pieces for every fitted quantile, built from the J
/// coefficient fits at each quantile.
class InferenceComponents {
 public:
  /// `fits_by_quantile[q][j]` is the fit of coefficient j at quantile q.
  InferenceComponents(std::vector<std::vector<FactorModelFit>> fits_by_quantile,
                      GroupDesign design);

  int groups() const noexcept { return design_.groups(); }
  int regressors() const noexcept { return regressors_; }
  const GroupDesign& design() const noexcept { return design_; }
  std::vector<double> quantiles() const;

  const std::vector<FactorModelFit>& fits(double u) const;
  DeltaProfile profile() const;

  Eigen::VectorXd rhat(int j, double u) const;
  Eigen::VectorXd bias(int t, double u) const;
  Eigen::MatrixXd sigma(int t, double u1, double u2) const;

  /// Point estimate, bias correction and interval for a linear functional.
  EffectEstimate estimate(const LinearFunctional& functional, double level) const;

 private:
  std::size_t index_of(double u) const;

  std::vector<std::vector<FactorModelFit>> fits_;
  GroupDesign design_;
  int regressors_ = 0;
};

/// Shorthand for components.estimate(functional, level).
EffectEstimate confidence_interval(const LinearFunctional& functional,
                                   const InferenceComponents& components, double level);

}  // namespace qrife
