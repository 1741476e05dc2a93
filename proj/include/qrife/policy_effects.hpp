#pragma once

#include <vector>

#include <Eigen/Dense>

#include "qrife/panel_ife.hpp"

namespace qrife {

/// Policy coefficients of all J individual-level regressors at one quantile:
/// row j holds delta_j(u) over the post periods.
struct QuantileDelta {
  double quantile = 0.0;
  int first_post_period = 0;
  Eigen::MatrixXd delta;  // J x (T - T0)

  /// delta_{.t}(u) for a 0-based period t >= T0.
  Eigen::VectorXd at(int t) const;
};

/// Stacks the J fits of one quantile into a QuantileDelta. All fits must share
/// the quantile and the number of post periods; fits[j] supplies row j.
QuantileDelta assemble_delta(const std::vector<FactorModelFit>& fits, int first_post_period);

/// Policy coefficients for a finite set of quantiles.
class DeltaProfile {
 public:
  DeltaProfile() = default;
  explicit DeltaProfile(std::vector<QuantileDelta> by_quantile);

  int regressors() const noexcept { return regressors_; }
  int first_post_period() const noexcept { return t0_; }
  int periods() const noexcept { return t0_ + post_periods_; }
  const std::vector<QuantileDelta>& quantiles() const noexcept { return by_quantile_; }

  /// Throws DomainError("missing quantile") when u was not fitted.
  const QuantileDelta& at(double u) const;

 private:
  std::vector<QuantileDelta> by_quantile_;
  int regressors_ = 0;
  int t0_ = 0;
  int post_periods_ = 0;
};

/// z' delta_{.t}(u): average quantile treatment effect on the treated.
double aqtt(const DeltaProfile& profile, const Eigen::VectorXd& z, double u, int t);

/// (z2 - z1)' delta_{.t}(u): change in between-inequality.
double between_inequality_change(const DeltaProfile& profile, const Eigen::VectorXd& z1,
                                 const Eigen::VectorXd& z2, double u, int t);

/// z' (delta_{.t}(u2) - delta_{.t}(u1)), requires u1 < u2.
double within_inequality_change(const DeltaProfile& profile, const Eigen::VectorXd& z, double u1,
                                double u2, int t);

/// The same contrast between two single-quantile coefficient sets, without the
/// ordering requirement.
double within_inequality_change(const QuantileDelta& lower, const QuantileDelta& upper,
                                const Eigen::VectorXd& z, int t);

}  // namespace qrife
