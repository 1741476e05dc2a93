#include "qrife/panel_ife.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "qrife/error.hpp"

namespace qrife {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

GroupDesign::GroupDesign(std::vector<MatrixXd> covariates, VectorXd treated, int t0,
                         std::vector<std::string> covariate_names)
    : X_(std::move(covariates)), treated_(std::move(treated)), t0_(t0),
      names_(std::move(covariate_names)) {
  const int S = static_cast<int>(treated_.size());
  if (S < 2) throw DesignError("group design needs at least two groups");
  if (static_cast<int>(X_.size()) != S) {
    throw ContractError("group design: " + std::to_string(X_.size()) +
                        " covariate blocks for " + std::to_string(S) + " groups");
  }
  periods_ = static_cast<int>(X_.front().rows());
  covariates_count_ = static_cast<int>(X_.front().cols());
  for (int s = 0; s < S; ++s) {
    if (X_[s].rows() != periods_ || X_[s].cols() != covariates_count_) {
      throw ContractError("group design: covariate block of group " + std::to_string(s) +
                          " has the wrong shape");
    }
    if (!X_[s].allFinite()) {
      throw DesignError("group design: non-finite covariate in group " + std::to_string(s));
    }
    if (treated_[s] != 0.0 && treated_[s] != 1.0) {
      throw DesignError("group design: treatment flag of group " + std::to_string(s) +
                        " is not 0/1");
    }
  }
  if (t0_ < 1 || t0_ > periods_ - 2) {
    throw DesignError("group design: first post period " + std::to_string(t0_) +
                      " must leave at least one period before and after it (T=" +
                      std::to_string(periods_) + ")");
  }
  treated_count_ = static_cast<int>(treated_.sum());
  if (treated_count_ == 0) throw DesignError("group design: no treated group");
  if (treated_count_ == S) throw DesignError("group design: no control group");
  if (names_.empty()) {
    for (int k = 0; k < covariates_count_; ++k) names_.push_back("x" + std::to_string(k + 1));
  }
  if (static_cast<int>(names_.size()) != covariates_count_) {
    throw ContractError("group design: covariate names do not match K");
  }
}

MatrixXd GroupDesign::covariate_effect(const VectorXd& beta) const {
  if (beta.size() != covariates_count_) {
    throw ContractError("beta has length " + std::to_string(beta.size()) + ", expected " +
                        std::to_string(covariates_count_));
  }
  MatrixXd out(groups(), periods_);
  for (int s = 0; s < groups(); ++s) {
    if (covariates_count_ == 0) {
      out.row(s).setZero();
    } else {
      out.row(s) = (X_[s] * beta).transpose();
    }
  }
  return out;
}

MatrixXd GroupDesign::treatment_effect(const VectorXd& delta) const {
  if (delta.size() != post_periods()) {
    throw ContractError("delta has length " + std::to_string(delta.size()) + ", expected " +
                        std::to_string(post_periods()));
  }
  MatrixXd out = MatrixXd::Zero(groups(), periods_);
  for (int s = 0; s < groups(); ++s) {
    if (treated_[s] != 0.0) out.row(s).tail(post_periods()) = treated_[s] * delta.transpose();
  }
  return out;
}

MatrixXd FactorModelFit::common_component() const {
  if (F.cols() == 0) return MatrixXd::Zero(Lambda.rows(), F.rows());
  return Lambda * F.transpose();
}

const VectorXd& FactorModelFit::delta_at(int iteration) const {
  for (const auto& rec : trace) {
    if (rec.iteration == iteration) return rec.delta;
  }
  return delta;
}

namespace {

void check_panel(const MatrixXd& A, const GroupDesign& design) {
  if (A.rows() != design.groups() || A.cols() != design.periods()) {
    std::ostringstream os;
    os << "coefficient panel is " << A.rows() << "x" << A.cols() << ", design is "
       << design.groups() << "x" << design.periods();
    throw ContractError(os.str());
  }
  if (!A.allFinite()) throw DomainError("coefficient panel has non-finite entries");
}

void check_factors(const GroupDesign& design, const MatrixXd& F, const MatrixXd& Lambda) {
  if (F.cols() != Lambda.cols() || (F.cols() > 0 && (F.rows() != design.periods() ||
                                                     Lambda.rows() != design.groups()))) {
    throw ContractError("factor matrices do not conform to the design");
  }
}

// Least squares of Y on (D, X) by partialling out the treated post-period
// means: beta from the demeaned system, then delta from the treated means.
CoefficientEstimate least_squares(const MatrixXd& Y, const GroupDesign& design) {
  const int S = design.groups();
  const int T = design.periods();
  const int K = design.covariate_count();
  const int t0 = design.first_post_period();
  const VectorXd& d = design.treated();
  const double treated = d.squaredNorm();

  CoefficientEstimate out;
  out.beta = VectorXd::Zero(K);
  if (K > 0) {
    // Treated post-period averages of x and Y.
    MatrixXd xbar = MatrixXd::Zero(T, K);
    VectorXd ybar = VectorXd::Zero(T);
    for (int s = 0; s < S; ++s) {
      if (d[s] == 0.0) continue;
      for (int t = t0; t < T; ++t) {
        xbar.row(t) += d[s] * design.covariates(s).row(t);
        ybar[t] += d[s] * Y(s, t);
      }
    }
    xbar /= treated;
    ybar /= treated;

    MatrixXd gram = MatrixXd::Zero(K, K);
    VectorXd rhs = VectorXd::Zero(K);
    for (int s = 0; s < S; ++s) {
      const MatrixXd& X = design.covariates(s);
      for (int t = 0; t < T; ++t) {
        VectorXd xt = X.row(t).transpose();
        double yt = Y(s, t);
        if (t >= t0 && d[s] != 0.0) {
          xt -= d[s] * xbar.row(t).transpose();
          yt -= d[s] * ybar[t];
        }
        gram.noalias() += xt * xt.transpose();
        rhs += xt * yt;
      }
    }
    Eigen::ColPivHouseholderQR<MatrixXd> qr(gram);
    qr.setThreshold(1e-12);
    if (qr.rank() < K) {
      throw IdentificationError(
          "second step: covariates are collinear with the treated post-period dummies");
    }
    out.beta = qr.solve(rhs);
  }

  out.delta = VectorXd::Zero(T - t0);
  for (int t = t0; t < T; ++t) {
    double acc = 0.0;
    for (int s = 0; s < S; ++s) {
      if (d[s] == 0.0) continue;
      double v = Y(s, t);
      if (K > 0) v -= design.covariates(s).row(t).dot(out.beta);
      acc += d[s] * v;
    }
    out.delta[t - t0] = acc / treated;
  }
  return out;
}

}  // namespace

MatrixXd residual_panel(const MatrixXd& A, const GroupDesign& design, const VectorXd& delta,
                        const VectorXd& beta, const MatrixXd& F, const MatrixXd& Lambda) {
  check_panel(A, design);
  check_factors(design, F, Lambda);
  MatrixXd out = A - design.treatment_effect(delta) - design.covariate_effect(beta);
  if (F.cols() > 0) out.noalias() -= Lambda * F.transpose();
  return out;
}

double ssr(const MatrixXd& A, const GroupDesign& design, const VectorXd& delta,
           const VectorXd& beta, const MatrixXd& F, const MatrixXd& Lambda) {
  return residual_panel(A, design, delta, beta, F, Lambda).squaredNorm();
}

CoefficientEstimate initial_estimate(const MatrixXd& A, const GroupDesign& design) {
  check_panel(A, design);
  return least_squares(A, design);
}

CoefficientEstimate coef_step(const MatrixXd& A, const GroupDesign& design, const MatrixXd& F,
                              const MatrixXd& Lambda) {
  check_panel(A, design);
  check_factors(design, F, Lambda);
  if (F.cols() == 0) return least_squares(A, design);
  return least_squares(A - Lambda * F.transpose(), design);
}

MatrixXd residual_moment(const MatrixXd& A, const GroupDesign& design, const VectorXd& delta,
                         const VectorXd& beta) {
  check_panel(A, design);
  const MatrixXd W = A - design.treatment_effect(delta) - design.covariate_effect(beta);
  const double scale = static_cast<double>(design.groups()) * design.periods();
  MatrixXd L = (W.transpose() * W) / scale;
  return 0.5 * (L + L.transpose());
}

PcaResult pca_step(const MatrixXd& A, const GroupDesign& design, const VectorXd& delta,
                   const VectorXd& beta, int r) {
  const int S = design.groups();
  const int T = design.periods();
  if (r < 1 || r > std::min(S, T)) {
    throw ContractError("pca_step: factor count " + std::to_string(r) + " outside [1, " +
                        std::to_string(std::min(S, T)) + "]");
  }
  const MatrixXd W = A - design.treatment_effect(delta) - design.covariate_effect(beta);
  MatrixXd L = (W.transpose() * W) / (static_cast<double>(S) * T);
  L = 0.5 * (L + L.transpose());

  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(L);
  if (eig.info() != Eigen::Success) throw NumericError("pca_step: eigen-decomposition failed");

  PcaResult out;
  out.eigenvalues = eig.eigenvalues().reverse();
  const MatrixXd vectors = eig.eigenvectors().rowwise().reverse();
  out.F = std::sqrt(static_cast<double>(T)) * vectors.leftCols(r);
  out.Lambda = W * out.F / static_cast<double>(T);

  for (int k = 0; k < r; ++k) {
    Index at = 0;
    out.Lambda.col(k).cwiseAbs().maxCoeff(&at);
    if (out.Lambda(at, k) < 0.0) {
      out.F.col(k) *= -1.0;
      out.Lambda.col(k) *= -1.0;
    }
  }

  if (r < T) {
    const double gap = out.eigenvalues[r - 1] - out.eigenvalues[r];
    if (gap <= 1e-12 * std::max(1.0, out.eigenvalues[0])) {
      std::ostringstream os;
      os << "eigenvalues " << r << " and " << (r + 1)
         << " are tied; factor basis is not unique";
      out.warnings.push_back(os.str());
    }
  }
  return out;
}

FactorSelection select_num_factors(const VectorXd& rho, int groups) {
  FactorSelection out;
  const Index n = rho.size();
  if (n == 0 || rho[0] <= 0.0) {
    out.no_factor_structure = true;
    return out;
  }
  for (Index i = 1; i < n; ++i) {
    if (rho[i] > rho[i - 1] * (1.0 + 1e-12) + 1e-300) {
      throw DomainError("select_num_factors: eigenvalues must be in descending order");
    }
  }
  const double mean = rho.mean();
  int r_max = 0;
  for (Index i = 0; i < n; ++i) {
    if (rho[i] > mean) ++r_max;
  }
  // A flat spectrum has nothing above its mean; keep one candidate so the
  // criterion is defined.
  r_max = std::max(r_max, 1);
  out.max_factors = r_max;

  const double threshold = 1.0 / std::log(std::max(static_cast<double>(groups), rho[0]));
  double best = 0.0;
  for (int r = 1; r <= r_max; ++r) {
    const double cur = rho[r - 1];
    const double next = r < n ? rho[r] : 0.0;
    double value;
    if (cur / rho[0] >= threshold) {
      value = next / cur;
    } else {
      value = 1.0;
    }
    out.criterion.push_back(value);
    if (r == 1 || value < best) {
      best = value;
      out.factors = r;
    }
  }
  return out;
}

FactorModelFit fit_ife(const MatrixXd& A, const GroupDesign& design, const IfeConfig& config) {
  check_panel(A, design);
  const int S = design.groups();
  const int T = design.periods();
  if (config.fixed_factors && (*config.fixed_factors < 0 || *config.fixed_factors > std::min(S, T))) {
    throw ContractError("fit_ife: fixed factor count out of range");
  }
  if (config.max_iter < 1) throw ContractError("fit_ife: max_iter must be positive");

  FactorModelFit fit;
  CoefficientEstimate coef = initial_estimate(A, design);
  MatrixXd F(T, 0);
  MatrixXd Lambda(S, 0);
  MatrixXd common = MatrixXd::Zero(S, T);
  VectorXd spectrum = VectorXd::Zero(T);

  {
    IterationRecord rec;
    rec.iteration = 0;
    rec.ssr = ssr(A, design, coef.delta, coef.beta, F, Lambda);
    rec.delta = coef.delta;
    rec.beta = coef.beta;
    fit.trace.push_back(std::move(rec));
  }

  if (config.fixed_factors && *config.fixed_factors == 0) {
    // No factor component: the initial estimate is the fit.
    fit.converged = true;
  }

  for (int m = 1; !fit.converged && m <= config.max_iter; ++m) {
    IterationRecord rec;
    rec.iteration = m;

    int r = 0;
    if (config.fixed_factors) {
      r = *config.fixed_factors;
    } else {
      const MatrixXd L = residual_moment(A, design, coef.delta, coef.beta);
      Eigen::SelfAdjointEigenSolver<MatrixXd> eig(L, Eigen::EigenvaluesOnly);
      if (eig.info() != Eigen::Success) throw NumericError("fit_ife: eigen-decomposition failed");
      const FactorSelection sel = select_num_factors(eig.eigenvalues().reverse(), S);
      r = sel.factors;
      if (sel.no_factor_structure) rec.warnings.push_back("no factor structure");
    }

    if (r > 0) {
      PcaResult pca = pca_step(A, design, coef.delta, coef.beta, r);
      F = std::move(pca.F);
      Lambda = std::move(pca.Lambda);
      spectrum = std::move(pca.eigenvalues);
      for (auto& w : pca.warnings) rec.warnings.push_back(std::move(w));
    } else {
      F.resize(T, 0);
      Lambda.resize(S, 0);
    }

    CoefficientEstimate next = coef_step(A, design, F, Lambda);
    MatrixXd next_common = r > 0 ? MatrixXd(Lambda * F.transpose()) : MatrixXd::Zero(S, T);

    rec.factors = r;
    rec.delta_change = (next.delta - coef.delta).norm();
    rec.beta_change = (next.beta - coef.beta).norm();
    rec.common_change = (next_common - common).norm();
    rec.ssr = ssr(A, design, next.delta, next.beta, F, Lambda);
    rec.delta = next.delta;
    rec.beta = next.beta;

    coef = std::move(next);
    common = std::move(next_common);
    fit.converged = rec.delta_change <= config.tol && rec.beta_change <= config.tol &&
                    rec.common_change <= config.tol;
    fit.trace.push_back(std::move(rec));
  }

  fit.delta = coef.delta;
  fit.beta = coef.beta;
  fit.F = F;
  fit.Lambda = Lambda;
  fit.factors = static_cast<int>(F.cols());
  fit.eigenvalues = spectrum;
  fit.residuals = residual_panel(A, design, coef.delta, coef.beta, F, Lambda);
  return fit;
}

}  // namespace qrife
