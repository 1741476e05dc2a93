#include "qrife/policy_effects.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "qrife/error.hpp"

namespace qrife {

namespace {

constexpr double kQuantileMatch = 1e-12;

void check_z(const Eigen::VectorXd& z, Eigen::Index J) {
  if (z.size() != J) {
    throw ContractError("attribute vector has length " + std::to_string(z.size()) +
                        ", expected " + std::to_string(J));
  }
}

}  // namespace

Eigen::VectorXd QuantileDelta::at(int t) const {
  if (t < first_post_period) {
    throw DomainError("period " + std::to_string(t) + " precedes the policy start " +
                      std::to_string(first_post_period));
  }
  if (t - first_post_period >= delta.cols()) {
    throw DomainError("period " + std::to_string(t) + " is past the last period");
  }
  return delta.col(t - first_post_period);
}

QuantileDelta assemble_delta(const std::vector<FactorModelFit>& fits, int first_post_period) {
  if (fits.empty()) throw ContractError("assemble_delta: no fits");
  QuantileDelta out;
  out.quantile = fits.front().quantile;
  out.first_post_period = first_post_period;
  const auto P = fits.front().delta.size();
  out.delta.resize(static_cast<Eigen::Index>(fits.size()), P);
  for (std::size_t j = 0; j < fits.size(); ++j) {
    if (fits[j].delta.size() != P || std::abs(fits[j].quantile - out.quantile) > kQuantileMatch) {
      throw ContractError("assemble_delta: fits disagree on quantile or post periods");
    }
    out.delta.row(static_cast<Eigen::Index>(j)) = fits[j].delta.transpose();
  }
  return out;
}

DeltaProfile::DeltaProfile(std::vector<QuantileDelta> by_quantile)
    : by_quantile_(std::move(by_quantile)) {
  if (by_quantile_.empty()) throw ContractError("delta profile: no quantiles");
  std::sort(by_quantile_.begin(), by_quantile_.end(),
            [](const QuantileDelta& a, const QuantileDelta& b) { return a.quantile < b.quantile; });
  regressors_ = static_cast<int>(by_quantile_.front().delta.rows());
  t0_ = by_quantile_.front().first_post_period;
  post_periods_ = static_cast<int>(by_quantile_.front().delta.cols());
  for (const auto& q : by_quantile_) {
    if (q.delta.rows() != regressors_ || q.delta.cols() != post_periods_ ||
        q.first_post_period != t0_) {
      throw ContractError("delta profile: quantile blocks disagree on shape");
    }
  }
}

const QuantileDelta& DeltaProfile::at(double u) const {
  for (const auto& q : by_quantile_) {
    if (std::abs(q.quantile - u) <= kQuantileMatch) return q;
  }
  std::ostringstream os;
  os << "missing quantile " << u << " in delta profile";
  throw DomainError(os.str());
}

double aqtt(const DeltaProfile& profile, const Eigen::VectorXd& z, double u, int t) {
  check_z(z, profile.regressors());
  return z.dot(profile.at(u).at(t));
}

double between_inequality_change(const DeltaProfile& profile, const Eigen::VectorXd& z1,
                                 const Eigen::VectorXd& z2, double u, int t) {
  check_z(z1, profile.regressors());
  check_z(z2, profile.regressors());
  return (z2 - z1).dot(profile.at(u).at(t));
}

double within_inequality_change(const DeltaProfile& profile, const Eigen::VectorXd& z, double u1,
                                double u2, int t) {
  if (!(u1 < u2)) {
    std::ostringstream os;
    os << "within-inequality needs u1 < u2, got " << u1 << " and " << u2;
    throw DomainError(os.str());
  }
  return within_inequality_change(profile.at(u1), profile.at(u2), z, t);
}

double within_inequality_change(const QuantileDelta& lower, const QuantileDelta& upper,
                                const Eigen::VectorXd& z, int t) {
  check_z(z, lower.delta.rows());
  check_z(z, upper.delta.rows());
  return z.dot(upper.at(t) - lower.at(t));
}

}  // namespace qrife
