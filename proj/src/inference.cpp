#include "qrife/inference.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <boost/math/distributions/normal.hpp>

#include "qrife/error.hpp"

namespace qrife {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kQuantileMatch = 1e-12;

Eigen::LDLT<MatrixXd> loading_gram(const MatrixXd& Lambda) {
  const double S = static_cast<double>(Lambda.rows());
  const MatrixXd gram = Lambda.transpose() * Lambda / S;
  Eigen::LDLT<MatrixXd> ldlt(gram);
  const double scale = std::max(1.0, gram.diagonal().cwiseAbs().maxCoeff());
  if (ldlt.info() != Eigen::Success ||
      ldlt.vectorD().cwiseAbs().minCoeff() <= 1e-12 * scale) {
    throw DegenerateLoadingsError("loading Gram matrix Lambda'Lambda/S is singular");
  }
  return ldlt;
}

double mean_square(const VectorXd& R) {
  const double m = R.squaredNorm() / static_cast<double>(R.size());
  if (!(m > 1e-14)) {
    throw DegenerateLoadingsError(
        "no identifying variation: treatment flags lie in the span of the loadings");
  }
  return m;
}

void check_period(const GroupDesign& design, int t) {
  if (t < design.first_post_period() || t >= design.periods()) {
    throw DomainError("period " + std::to_string(t) + " is not a post-policy period");
  }
}

void check_fit(const FactorModelFit& fit, const GroupDesign& design) {
  if (fit.residuals.rows() != design.groups() || fit.residuals.cols() != design.periods() ||
      fit.Lambda.rows() != design.groups() || fit.F.cols() != fit.Lambda.cols()) {
    throw ContractError("fit does not conform to the design");
  }
}

}  // namespace

VectorXd rhat(const VectorXd& d, const MatrixXd& Lambda) {
  if (Lambda.rows() != d.size()) throw ContractError("rhat: loadings and flags differ in S");
  if (Lambda.cols() == 0) return d;
  const double S = static_cast<double>(d.size());
  const auto gram = loading_gram(Lambda);
  const VectorXd coef = gram.solve(Lambda.transpose() * d / S);
  return d - Lambda * coef;
}

VectorXd bias_hat(const std::vector<FactorModelFit>& fits, const GroupDesign& design, int t) {
  check_period(design, t);
  const Index J = static_cast<Index>(fits.size());
  const double S = design.groups();
  const double T = design.periods();
  const VectorXd& d = design.treated();
  VectorXd out = VectorXd::Zero(J);
  for (Index j = 0; j < J; ++j) {
    const FactorModelFit& fit = fits[static_cast<std::size_t>(j)];
    check_fit(fit, design);
    const VectorXd R = rhat(d, fit.Lambda);
    const double msr = mean_square(R);
    if (fit.F.cols() == 0) continue;
    // sum_{s,g} d_s eta_gt^2 f_t' G^-1 lambda_s factorizes over s and g.
    const auto gram = loading_gram(fit.Lambda);
    const double eta_sq = fit.residuals.col(t).squaredNorm();
    const VectorXd proj = gram.solve(fit.F.row(t).transpose());
    const double loading_sum = (fit.Lambda * proj).dot(d);
    out[j] = -(eta_sq * loading_sum) / (std::pow(S, 1.5) * T) / msr;
  }
  return out;
}

MatrixXd sigma_hat(const std::vector<FactorModelFit>& fits_u1,
                   const std::vector<FactorModelFit>& fits_u2, const GroupDesign& design, int t) {
  check_period(design, t);
  if (fits_u1.size() != fits_u2.size()) throw ContractError("sigma_hat: J differs across quantiles");
  const Index J = static_cast<Index>(fits_u1.size());
  const double S = design.groups();
  const VectorXd& d = design.treated();

  // Per-group weights R_s eta_st / mean(R^2) for each coefficient.
  auto weights = [&](const std::vector<FactorModelFit>& fits) {
    std::vector<VectorXd> out;
    for (const auto& fit : fits) {
      check_fit(fit, design);
      const VectorXd R = rhat(d, fit.Lambda);
      out.push_back(R.cwiseProduct(fit.residuals.col(t)) / mean_square(R));
    }
    return out;
  };
  const std::vector<VectorXd> w1 = weights(fits_u1);
  const std::vector<VectorXd> w2 = weights(fits_u2);
  MatrixXd out(J, J);
  for (Index j = 0; j < J; ++j) {
    for (Index k = 0; k < J; ++k) out(j, k) = w1[j].dot(w2[k]) / S;
  }
  return out;
}

LinearFunctional LinearFunctional::aqtt(const VectorXd& z, double u, int t) {
  return {t, {{u, z}}};
}

LinearFunctional LinearFunctional::between(const VectorXd& z1, const VectorXd& z2, double u,
                                           int t) {
  if (z1.size() != z2.size()) throw ContractError("between: attribute vectors differ in length");
  return {t, {{u, z2 - z1}}};
}

LinearFunctional LinearFunctional::within(const VectorXd& z, double u1, double u2, int t) {
  if (!(u1 < u2)) throw DomainError("within-inequality needs u1 < u2");
  return {t, {{u1, -z}, {u2, z}}};
}

EffectEstimate normal_interval(double estimate, double bias, double variance, int groups,
                               double level) {
  if (!(level > 0.0 && level < 1.0)) {
    throw DomainError("confidence level must lie in (0,1)");
  }
  if (groups < 1) throw ContractError("normal_interval: groups must be positive");
  EffectEstimate out;
  out.level = level;
  out.estimate = estimate;
  const double root_s = std::sqrt(static_cast<double>(groups));
  out.bias = bias / root_s;
  out.corrected = estimate - out.bias;
  if (variance < 0.0) {
    std::ostringstream os;
    os << "negative variance " << variance << " clipped to 0";
    out.warnings.push_back(os.str());
    variance = 0.0;
  }
  out.variance = variance;
  out.se = std::sqrt(variance) / root_s;
  const boost::math::normal_distribution<double> normal;
  const double crit = boost::math::quantile(normal, 0.5 * (1.0 + level));
  out.lower = out.corrected - crit * out.se;
  out.upper = out.corrected + crit * out.se;
  return out;
}

InferenceComponents::InferenceComponents(std::vector<std::vector<FactorModelFit>> fits_by_quantile,
                                         GroupDesign design)
    : fits_(std::move(fits_by_quantile)), design_(std::move(design)) {
  if (fits_.empty() || fits_.front().empty()) throw ContractError("inference: no fits");
  regressors_ = static_cast<int>(fits_.front().size());
  for (const auto& set : fits_) {
    if (static_cast<int>(set.size()) != regressors_) {
      throw ContractError("inference: every quantile needs one fit per coefficient");
    }
    for (const auto& fit : set) {
      check_fit(fit, design_);
      if (std::abs(fit.quantile - set.front().quantile) > kQuantileMatch) {
        throw ContractError("inference: fits of one quantile disagree on u");
      }
    }
  }
}

std::vector<double> InferenceComponents::quantiles() const {
  std::vector<double> out;
  for (const auto& set : fits_) out.push_back(set.front().quantile);
  return out;
}

std::size_t InferenceComponents::index_of(double u) const {
  for (std::size_t q = 0; q < fits_.size(); ++q) {
    if (std::abs(fits_[q].front().quantile - u) <= kQuantileMatch) return q;
  }
  std::ostringstream os;
  os << "missing quantile " << u;
  throw DomainError(os.str());
}

const std::vector<FactorModelFit>& InferenceComponents::fits(double u) const {
  return fits_[index_of(u)];
}

DeltaProfile InferenceComponents::profile() const {
  std::vector<QuantileDelta> blocks;
  for (const auto& set : fits_) blocks.push_back(assemble_delta(set, design_.first_post_period()));
  return DeltaProfile(std::move(blocks));
}

VectorXd InferenceComponents::rhat(int j, double u) const {
  const auto& set = fits(u);
  if (j < 0 || j >= regressors_) throw ContractError("rhat: coefficient index out of range");
  return qrife::rhat(design_.treated(), set[static_cast<std::size_t>(j)].Lambda);
}

VectorXd InferenceComponents::bias(int t, double u) const {
  return bias_hat(fits(u), design_, t);
}

MatrixXd InferenceComponents::sigma(int t, double u1, double u2) const {
  return sigma_hat(fits(u1), fits(u2), design_, t);
}

EffectEstimate InferenceComponents::estimate(const LinearFunctional& functional,
                                             double level) const {
  const int t = functional.period;
  if (functional.terms.empty()) throw ContractError("linear functional has no terms");
  double point = 0.0;
  double bias_sum = 0.0;
  for (const auto& term : functional.terms) {
    if (term.weights.size() != regressors_) {
      throw ContractError("attribute vector has length " + std::to_string(term.weights.size()) +
                          ", expected " + std::to_string(regressors_));
    }
    const QuantileDelta block = assemble_delta(fits(term.quantile), design_.first_post_period());
    point += term.weights.dot(block.at(t));
    bias_sum += term.weights.dot(bias(t, term.quantile));
  }
  double variance = 0.0;
  for (const auto& a : functional.terms) {
    for (const auto& b : functional.terms) {
      variance += a.weights.dot(sigma(t, a.quantile, b.quantile) * b.weights);
    }
  }
  return normal_interval(point, bias_sum, variance, groups(), level);
}

EffectEstimate confidence_interval(const LinearFunctional& functional,
                                   const InferenceComponents& components, double level) {
  return components.estimate(functional, level);
}

}  // namespace qrife
