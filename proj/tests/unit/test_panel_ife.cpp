#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "qrife/error.hpp"
#include "qrife/panel_ife.hpp"

using namespace qrife;
using namespace qrife::testing;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double max_abs(const MatrixXd& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

VectorXd spectrum(std::initializer_list<double> head, int T) {
  VectorXd v = VectorXd::Zero(T);
  Eigen::Index i = 0;
  for (double x : head) v[i++] = x;
  return v;
}

}  // namespace

TEST_CASE("GroupDesign validation") {
  std::vector<MatrixXd> X(3, MatrixXd::Zero(5, 1));
  VectorXd d(3);
  d << 0, 1, 1;
  CHECK_NOTHROW(GroupDesign(X, d, 1));
  CHECK_THROWS(GroupDesign(X, d, 0));
  CHECK_THROWS(GroupDesign(X, d, 4));
  VectorXd all(3);
  all << 1, 1, 1;
  CHECK_THROWS(GroupDesign(X, all, 2));
  VectorXd none = VectorXd::Zero(3);
  CHECK_THROWS(GroupDesign(X, none, 2));
  VectorXd bad(3);
  bad << 0, 0.5, 1;
  CHECK_THROWS(GroupDesign(X, bad, 2));
  X[1] = MatrixXd::Zero(4, 1);
  CHECK_THROWS(GroupDesign(X, d, 2));

  std::vector<MatrixXd> none_k(3, MatrixXd(5, 0));
  const GroupDesign k0(none_k, d, 2);
  CHECK(k0.covariate_count() == 0);
  CHECK(k0.post_periods() == 3);
  CHECK(k0.treatment(0, 4) == 0.0);
  CHECK(k0.treatment(2, 1) == 0.0);
  CHECK(k0.treatment(2, 2) == 1.0);
}

TEST_CASE("ssr examples") {
  std::mt19937_64 rng(1);
  const GroupDesign design = random_design(rng, 3, 4, 2, 1, 1);
  const VectorXd delta = gaussian(rng, 3, 1).col(0);
  const VectorXd beta = gaussian(rng, 2, 1).col(0);
  const MatrixXd F = gaussian(rng, 4, 1);
  const MatrixXd Lambda = gaussian(rng, 3, 1);
  const MatrixXd A = compose(design, delta, beta, F, Lambda);
  CHECK(std::abs(ssr(A, design, delta, beta, F, Lambda)) <= 1e-24);

  const VectorXd zd = VectorXd::Zero(3);
  const VectorXd zb = VectorXd::Zero(2);
  const MatrixXd zF = MatrixXd::Zero(4, 1);
  const MatrixXd zL = MatrixXd::Zero(3, 1);
  CHECK(ssr(A, design, zd, zb, zF, zL) == doctest::Approx(A.squaredNorm()).epsilon(1e-14));

  const MatrixXd noisy = A + gaussian(rng, 3, 4);
  const double loops = oracle::ssr_loops(noisy, design, delta, beta, F, Lambda);
  CHECK(std::abs(ssr(noisy, design, delta, beta, F, Lambda) - loops) <= 1e-12 * (1.0 + loops));

  CHECK_THROWS_AS(ssr(MatrixXd::Zero(2, 4), design, delta, beta, F, Lambda), ContractError);
  CHECK_THROWS_AS(ssr(A, design, VectorXd::Zero(2), beta, F, Lambda), ContractError);
}

TEST_CASE("initial_estimate") {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 10; ++rep) {
    const GroupDesign design = random_design(rng, 8, 7, 2, 3, 3);
    const VectorXd delta = gaussian(rng, 4, 1).col(0);
    const VectorXd beta = gaussian(rng, 2, 1).col(0);
    const MatrixXd A = compose(design, delta, beta, MatrixXd(7, 0), MatrixXd(8, 0));
    const CoefficientEstimate est = initial_estimate(A, design);
    CHECK(max_abs(est.delta - delta) <= 1e-10);
    CHECK(max_abs(est.beta - beta) <= 1e-10);

    const MatrixXd noisy = A + gaussian(rng, 8, 7);
    const CoefficientEstimate a = initial_estimate(noisy, design);
    const oracle::StackedCoefficients b =
        oracle::stacked_ols(noisy, design, MatrixXd(7, 0), MatrixXd(8, 0));
    CHECK(max_abs(a.delta - b.delta) <= 1e-9);
    CHECK(max_abs(a.beta - b.beta) <= 1e-9);
  }

  // K = 0: delta_t is the treated-group mean of A at t.
  std::vector<MatrixXd> none(4, MatrixXd(5, 0));
  VectorXd d(4);
  d << 0, 1, 0, 1;
  const GroupDesign k0(none, d, 2);
  const MatrixXd A = gaussian(rng, 4, 5);
  const CoefficientEstimate est = initial_estimate(A, k0);
  REQUIRE(est.delta.size() == 3);
  CHECK(est.beta.size() == 0);
  for (int t = 2; t < 5; ++t) {
    CHECK(est.delta[t - 2] == doctest::Approx(0.5 * (A(1, t) + A(3, t))).epsilon(1e-14));
  }

  // Covariate identical to a treatment column: singular.
  std::vector<MatrixXd> X(3, MatrixXd::Zero(5, 1));
  VectorXd dd(3);
  dd << 0, 1, 1;
  for (int s = 1; s < 3; ++s) X[s](4, 0) = 1.0;
  const GroupDesign collinear(X, dd, 2);
  CHECK_THROWS_AS(initial_estimate(MatrixXd::Ones(3, 5), collinear), IdentificationError);
}

TEST_CASE("pca_step") {
  std::mt19937_64 rng(3);
  const int S = 12;
  const int T = 9;
  const GroupDesign design = random_design(rng, S, T, 1, 3, 4);
  const VectorXd delta = gaussian(rng, T - 3, 1).col(0);
  const VectorXd beta = gaussian(rng, 1, 1).col(0);
  const MatrixXd F = orthonormal_factors(rng, T, 2);
  const MatrixXd Lambda = gaussian(rng, S, 2, 2.0);
  const MatrixXd A = compose(design, delta, beta, F, Lambda);

  const PcaResult pca = pca_step(A, design, delta, beta, 2);
  CHECK(max_abs(pca.Lambda * pca.F.transpose() - Lambda * F.transpose()) <= 1e-8);
  CHECK(max_abs(pca.F.transpose() * pca.F / T - MatrixXd::Identity(2, 2)) <= 1e-8);
  const MatrixXd gram = pca.Lambda.transpose() * pca.Lambda / S;
  CHECK(std::abs(gram(0, 1)) <= 1e-8);
  CHECK(gram(0, 0) >= gram(1, 1));
  REQUIRE(pca.eigenvalues.size() == T);
  for (int i = 1; i < T; ++i) CHECK(pca.eigenvalues[i] <= pca.eigenvalues[i - 1]);
  // Largest-magnitude loading of every column is positive.
  for (int k = 0; k < 2; ++k) {
    Eigen::Index arg = 0;
    pca.Lambda.col(k).cwiseAbs().maxCoeff(&arg);
    CHECK(pca.Lambda(arg, k) > 0.0);
  }

  const MatrixXd zero = compose(design, delta, beta, MatrixXd(T, 0), MatrixXd(S, 0));
  const PcaResult flat = pca_step(zero, design, delta, beta, 1);
  CHECK(flat.F.col(0).norm() == doctest::Approx(std::sqrt(static_cast<double>(T))));
  CHECK(max_abs(flat.Lambda) <= 1e-12);

  CHECK_THROWS(pca_step(A, design, delta, beta, 0));
  CHECK_THROWS(pca_step(A, design, delta, beta, T + 1));
}

TEST_CASE("coef_step") {
  std::mt19937_64 rng(4);
  const int S = 10;
  const int T = 8;
  const GroupDesign design = random_design(rng, S, T, 2, 2, 3);
  const VectorXd delta = gaussian(rng, T - 2, 1).col(0);
  const VectorXd beta = gaussian(rng, 2, 1).col(0);
  const MatrixXd F = orthonormal_factors(rng, T, 2);
  const MatrixXd Lambda = gaussian(rng, S, 2);
  const MatrixXd A = compose(design, delta, beta, F, Lambda);

  const CoefficientEstimate exact = coef_step(A, design, F, Lambda);
  CHECK(max_abs(exact.delta - delta) <= 1e-10);
  CHECK(max_abs(exact.beta - beta) <= 1e-10);

  const MatrixXd noisy = A + gaussian(rng, S, T, 0.3);
  const CoefficientEstimate at_zero = coef_step(noisy, design, F, MatrixXd::Zero(S, 2));
  const CoefficientEstimate init = initial_estimate(noisy, design);
  CHECK(max_abs(at_zero.delta - init.delta) <= 1e-12);
  CHECK(max_abs(at_zero.beta - init.beta) <= 1e-12);

  const CoefficientEstimate best = coef_step(noisy, design, F, Lambda);
  const oracle::StackedCoefficients stacked = oracle::stacked_ols(noisy, design, F, Lambda);
  CHECK(max_abs(best.delta - stacked.delta) <= 1e-9);
  CHECK(max_abs(best.beta - stacked.beta) <= 1e-9);
  const double floor = ssr(noisy, design, best.delta, best.beta, F, Lambda);
  std::normal_distribution<double> normal(0.0, 1e-3);
  for (int k = 0; k < 100; ++k) {
    VectorXd dd = best.delta;
    VectorXd bb = best.beta;
    for (auto& v : dd) v += normal(rng);
    for (auto& v : bb) v += normal(rng);
    CHECK(ssr(noisy, design, dd, bb, F, Lambda) >= floor);
  }
}

TEST_CASE("select_num_factors") {
  CHECK(select_num_factors(spectrum({10, 8, 0.01, 0.005}, 10), 40).factors == 2);
  CHECK(select_num_factors(spectrum({10, 0.01, 0.009}, 10), 40).factors == 1);
  CHECK(select_num_factors(spectrum({5}, 8), 40).factors == 1);
  const FactorSelection zero = select_num_factors(VectorXd::Zero(6), 40);
  CHECK(zero.factors == 0);
  CHECK(zero.no_factor_structure);
  const FactorSelection a = select_num_factors(spectrum({10, 8, 0.01, 0.005}, 10), 40);
  CHECK(a.max_factors == 2);
  REQUIRE(a.criterion.size() == 2);
  CHECK(a.criterion[0] == doctest::Approx(0.8));
  CHECK(a.criterion[1] == doctest::Approx(0.01 / 8));
  CHECK_THROWS(select_num_factors(spectrum({1, 2}, 4), 40));
}

TEST_CASE("fit_ife noiseless recovery and invariants") {
  std::mt19937_64 rng(5);
  const int S = 30;
  const int T = 20;
  const GroupDesign design = random_design(rng, S, T, 1, 5, 8);
  VectorXd delta(T - 5);
  for (int i = 0; i < delta.size(); ++i) delta[i] = 2.0 + 0.1 * i;
  VectorXd beta(1);
  beta << 1.25;
  const MatrixXd F = orthonormal_factors(rng, T, 2);
  MatrixXd Lambda = gaussian(rng, S, 2);
  Lambda.col(0) *= 3.0;
  const MatrixXd A = compose(design, delta, beta, F, Lambda);

  const FactorModelFit fit = fit_ife(A, design, {1e-10, 5000, 2});
  CHECK(fit.converged);
  CHECK(max_abs(fit.delta - delta) <= 1e-4);
  CHECK(max_abs(fit.beta - beta) <= 1e-4);
  CHECK(max_abs(fit.common_component() - Lambda * F.transpose()) <= 1e-4);
  CHECK(max_abs(fit.F.transpose() * fit.F / T - MatrixXd::Identity(2, 2)) <= 1e-8);
  const MatrixXd gram = fit.Lambda.transpose() * fit.Lambda / S;
  CHECK(std::abs(gram(0, 1)) <= 1e-8);
  CHECK(gram(0, 0) >= gram(1, 1));
  for (std::size_t i = 1; i < fit.trace.size(); ++i) {
    CHECK(fit.trace[i].ssr <= fit.trace[i - 1].ssr + 1e-10);
  }
  const MatrixXd expected =
      A - design.treatment_effect(fit.delta) - design.covariate_effect(fit.beta) -
      fit.common_component();
  CHECK(max_abs(fit.residuals - expected) <= 1e-12);
}

TEST_CASE("fit_ife with r fixed at zero equals initial_estimate") {
  std::mt19937_64 rng(6);
  const GroupDesign design = random_design(rng, 9, 7, 2, 2, 3);
  const MatrixXd A = gaussian(rng, 9, 7);
  const FactorModelFit fit = fit_ife(A, design, {1e-5, 1000, 0});
  const CoefficientEstimate init = initial_estimate(A, design);
  CHECK(fit.factors == 0);
  CHECK(fit.converged);
  CHECK(max_abs(fit.delta - init.delta) <= 1e-14);
  CHECK(max_abs(fit.beta - init.beta) <= 1e-14);
}

TEST_CASE("fit_ife common component is invariant to group order") {
  std::mt19937_64 rng(7);
  const int S = 16;
  const int T = 12;
  const GroupDesign design = random_design(rng, S, T, 1, 3, 5);
  VectorXd delta = VectorXd::Constant(T - 3, 1.5);
  VectorXd beta = VectorXd::Constant(1, 0.7);
  const MatrixXd F = orthonormal_factors(rng, T, 2);
  MatrixXd Lambda = gaussian(rng, S, 2);
  Lambda.col(0) *= 2.5;
  const MatrixXd A = compose(design, delta, beta, F, Lambda) + gaussian(rng, S, T, 0.05);
  const FactorModelFit fit = fit_ife(A, design, {1e-12, 20000, 2});

  std::vector<int> perm(S);
  for (int s = 0; s < S; ++s) perm[s] = (s * 7 + 3) % S;
  std::vector<MatrixXd> X;
  VectorXd d(S);
  MatrixXd Ap(S, T);
  for (int s = 0; s < S; ++s) {
    X.push_back(design.covariates(perm[s]));
    d[s] = design.treated()[perm[s]];
    Ap.row(s) = A.row(perm[s]);
  }
  const GroupDesign permuted(X, d, 3);
  const FactorModelFit other = fit_ife(Ap, permuted, {1e-12, 20000, 2});
  const MatrixXd common = fit.common_component();
  const MatrixXd common_p = other.common_component();
  double worst = 0.0;
  for (int s = 0; s < S; ++s) {
    worst = std::max(worst, (common.row(perm[s]) - common_p.row(s)).cwiseAbs().maxCoeff());
  }
  CHECK(worst <= 1e-8);
  CHECK(max_abs(fit.delta - other.delta) <= 1e-8);
}
