#pragma once

#include <random>
#include <vector>

#include <Eigen/Dense>

#include "qrife/panel_ife.hpp"

namespace qrife::testing {

// Random design: first `treated_from` groups are controls, the rest treated.
inline GroupDesign random_design(std::mt19937_64& rng, int S, int T, int K, int t0,
                                 int treated_from) {
  std::normal_distribution<double> normal;
  std::vector<Eigen::MatrixXd> X;
  for (int s = 0; s < S; ++s) {
    Eigen::MatrixXd Xs(T, K);
    for (int t = 0; t < T; ++t) {
      for (int k = 0; k < K; ++k) Xs(t, k) = normal(rng);
    }
    X.push_back(Xs);
  }
  Eigen::VectorXd d(S);
  for (int s = 0; s < S; ++s) d[s] = s >= treated_from ? 1.0 : 0.0;
  return GroupDesign(std::move(X), d, t0);
}

inline Eigen::MatrixXd gaussian(std::mt19937_64& rng, int rows, int cols, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Eigen::MatrixXd m(rows, cols);
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) m(i, j) = normal(rng);
  }
  return m;
}

// T x r factors with F'F/T = I.
inline Eigen::MatrixXd orthonormal_factors(std::mt19937_64& rng, int T, int r) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian(rng, T, r));
  return std::sqrt(static_cast<double>(T)) *
         (qr.householderQ() * Eigen::MatrixXd::Identity(T, r));
}

inline Eigen::MatrixXd compose(const GroupDesign& design, const Eigen::VectorXd& delta,
                               const Eigen::VectorXd& beta, const Eigen::MatrixXd& F,
                               const Eigen::MatrixXd& Lambda) {
  Eigen::MatrixXd A = design.treatment_effect(delta) + design.covariate_effect(beta);
  if (F.cols() > 0) A += Lambda * F.transpose();
  return A;
}

}  // namespace qrife::testing
