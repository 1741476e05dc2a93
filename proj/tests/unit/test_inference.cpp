#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "qrife/error.hpp"
#include "qrife/inference.hpp"

using namespace qrife;
using namespace qrife::testing;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double max_abs(const MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

FactorModelFit synthetic_fit(std::mt19937_64& rng, const GroupDesign& design, double u, int r) {
  const int S = design.groups();
  const int T = design.periods();
  FactorModelFit f;
  f.quantile = u;
  f.factors = r;
  f.delta = gaussian(rng, design.post_periods(), 1).col(0);
  f.beta = VectorXd::Zero(design.covariate_count());
  f.F = orthonormal_factors(rng, T, r);
  f.Lambda = gaussian(rng, S, r);
  f.residuals = gaussian(rng, S, T, 0.5);
  f.converged = true;
  return f;
}

struct Problem {
  GroupDesign design;
  std::vector<std::vector<FactorModelFit>> fits;  // [quantile][j]
};

Problem random_problem(std::mt19937_64& rng, int S, int T, int r, int J,
                       const std::vector<double>& us) {
  Problem p{random_design(rng, S, T, 1, T / 2, S / 3), {}};
  for (double u : us) {
    std::vector<FactorModelFit> row;
    for (int j = 0; j < J; ++j) {
      row.push_back(synthetic_fit(rng, p.design, u, r));
      row.back().coefficient = j;
    }
    p.fits.push_back(row);
  }
  return p;
}

}  // namespace

TEST_CASE("rhat special cases") {
  std::mt19937_64 rng(1);
  VectorXd d(6);
  d << 0, 0, 1, 1, 1, 1;
  MatrixXd orth(6, 1);
  orth << 1, -1, 1, -1, 1, -1;
  CHECK(max_abs(rhat(d, orth) - d) <= 1e-14);

  MatrixXd with_const(6, 2);
  with_const.col(0).setOnes();
  with_const.col(1) << 1, 2, 3, 4, 5, 7;
  CHECK(max_abs(rhat(VectorXd::Ones(6), with_const)) <= 1e-13);

  CHECK(rhat(d, MatrixXd(6, 0)) == d);
  CHECK_THROWS_AS(rhat(d, MatrixXd::Zero(6, 1)), DegenerateLoadingsError);

  for (int k = 0; k < 10; ++k) {
    VectorXd dd = (gaussian(rng, 10, 1).array() > 0).cast<double>();
    const MatrixXd L = gaussian(rng, 10, 2);
    CHECK(max_abs(rhat(dd, L) - oracle::rhat_projection(dd, L)) <= 1e-12);
  }
}

TEST_CASE("bias and sigma against summation oracles") {
  std::mt19937_64 rng(2);
  const Problem p = random_problem(rng, 6, 8, 1, 2, {0.3, 0.7});
  for (int t = p.design.first_post_period(); t < p.design.periods(); ++t) {
    const VectorXd b = bias_hat(p.fits[0], p.design, t);
    const VectorXd bo = oracle::bias_loops(p.fits[0], p.design.treated(), t);
    CHECK(max_abs(b - bo) <= 1e-12 * (1.0 + max_abs(bo)));
    const MatrixXd s12 = sigma_hat(p.fits[0], p.fits[1], p.design, t);
    const MatrixXd so = oracle::sigma_loops(p.fits[0], p.fits[1], p.design.treated(), t);
    CHECK(max_abs(s12 - so) <= 1e-12 * (1.0 + max_abs(so)));
    CHECK(sigma_hat(p.fits[1], p.fits[0], p.design, t) == s12.transpose());
    const MatrixXd s11 = sigma_hat(p.fits[0], p.fits[0], p.design, t);
    CHECK(max_abs(s11 - s11.transpose()) <= 1e-15);
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(s11);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-10);
    for (int j = 0; j < 2; ++j) CHECK(s11(j, j) >= 0.0);
  }
  CHECK_THROWS_AS(bias_hat(p.fits[0], p.design, p.design.first_post_period() - 1), DomainError);
}

TEST_CASE("zero residuals give zero bias") {
  std::mt19937_64 rng(3);
  Problem p = random_problem(rng, 8, 6, 2, 1, {0.5});
  p.fits[0][0].residuals.setZero();
  CHECK(bias_hat(p.fits[0], p.design, 4).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("bias and sigma are rotation invariant") {
  std::mt19937_64 rng(4);
  Problem p = random_problem(rng, 10, 8, 2, 2, {0.5});
  std::vector<FactorModelFit> rotated = p.fits[0];
  for (auto& f : rotated) {
    Eigen::HouseholderQR<MatrixXd> qr(gaussian(rng, 2, 2));
    const MatrixXd Q = qr.householderQ();
    f.F = f.F * Q;
    f.Lambda = f.Lambda * Q;
  }
  const int t = 6;
  CHECK(max_abs(bias_hat(p.fits[0], p.design, t) - bias_hat(rotated, p.design, t)) <= 1e-10);
  CHECK(max_abs(sigma_hat(p.fits[0], p.fits[0], p.design, t) -
                sigma_hat(rotated, rotated, p.design, t)) <= 1e-10);
}

TEST_CASE("normal_interval") {
  const EffectEstimate e = normal_interval(0.0, 0.0, 1.0, 100, 0.95);
  CHECK(e.lower == doctest::Approx(-0.196).epsilon(1e-3));
  CHECK(e.upper == doctest::Approx(0.196).epsilon(1e-3));
  CHECK(e.upper == doctest::Approx(1.959963984540054 / 10.0).epsilon(1e-12));

  const EffectEstimate flat = normal_interval(1.0, 0.5, 0.0, 25, 0.9);
  CHECK(flat.corrected == doctest::Approx(0.9));
  CHECK(flat.lower == flat.corrected);
  CHECK(flat.upper == flat.corrected);

  const EffectEstimate neg = normal_interval(1.0, 0.0, -1e-18, 25, 0.95);
  CHECK(neg.variance == 0.0);
  CHECK(neg.warnings.size() == 1);

  CHECK_THROWS_AS(normal_interval(0.0, 0.0, 1.0, 10, 1.0), DomainError);
  CHECK_THROWS_AS(normal_interval(0.0, 0.0, 1.0, 10, 0.0), DomainError);
}

TEST_CASE("within-inequality variance identity") {
  std::mt19937_64 rng(5);
  const Problem p = random_problem(rng, 12, 8, 1, 2, {0.25, 0.75});
  const InferenceComponents comp(p.fits, p.design);
  VectorXd z(2);
  z << 1.0, 0.4;
  const int t = 5;
  const EffectEstimate w = comp.estimate(LinearFunctional::within(z, 0.25, 0.75, t), 0.95);
  const MatrixXd s11 = comp.sigma(t, 0.25, 0.25);
  const MatrixXd s12 = comp.sigma(t, 0.25, 0.75);
  const MatrixXd s21 = comp.sigma(t, 0.75, 0.25);
  const MatrixXd s22 = comp.sigma(t, 0.75, 0.75);
  const double blocks = z.dot((s11 - s12 - s21 + s22) * z);
  const double symmetric = z.dot(s11 * z) + z.dot(s22 * z) - 2.0 * z.dot(s12 * z);
  CHECK(std::abs(w.variance - blocks) <= 1e-12 * (1.0 + blocks));
  CHECK(std::abs(blocks - symmetric) <= 1e-12 * (1.0 + blocks));

  const double point = z.dot(assemble_delta(p.fits[1], 4).at(t) - assemble_delta(p.fits[0], 4).at(t));
  CHECK(w.estimate == doctest::Approx(point).epsilon(1e-14));
  const double bias = z.dot(comp.bias(t, 0.75) - comp.bias(t, 0.25)) / std::sqrt(12.0);
  CHECK(w.bias == doctest::Approx(bias).epsilon(1e-12));
  CHECK(w.corrected == doctest::Approx(point - bias).epsilon(1e-12));

  const EffectEstimate a = confidence_interval(LinearFunctional::aqtt(z, 0.25, t), comp, 0.95);
  CHECK(a.variance == doctest::Approx(z.dot(s11 * z)).epsilon(1e-12));
  CHECK(a.lower <= a.corrected);
  CHECK(a.upper >= a.corrected);
  CHECK_THROWS_AS(comp.fits(0.5), DomainError);
}

TEST_CASE("interval width shrinks as 1/sqrt(k) under block duplication") {
  std::mt19937_64 rng(6);
  const Problem p = random_problem(rng, 8, 6, 1, 1, {0.5});
  const FactorModelFit& base = p.fits[0][0];
  VectorXd z(1);
  z << 1.0;
  const int t = 4;
  const double width1 =
      InferenceComponents(p.fits, p.design).estimate(LinearFunctional::aqtt(z, 0.5, t), 0.95).se;
  for (int k : {2, 3, 5}) {
    const int S = 8 * k;
    std::vector<MatrixXd> X;
    VectorXd d(S);
    FactorModelFit f = base;
    f.Lambda.resize(S, 1);
    f.residuals.resize(S, 6);
    for (int s = 0; s < S; ++s) {
      X.push_back(p.design.covariates(s % 8));
      d[s] = p.design.treated()[s % 8];
      f.Lambda.row(s) = base.Lambda.row(s % 8);
      f.residuals.row(s) = base.residuals.row(s % 8);
    }
    const GroupDesign big(X, d, p.design.first_post_period());
    const double widthk =
        InferenceComponents({{f}}, big).estimate(LinearFunctional::aqtt(z, 0.5, t), 0.95).se;
    CHECK(std::abs(widthk / width1 - 1.0 / std::sqrt(static_cast<double>(k))) <= 1e-6);
  }
}

TEST_CASE("no identifying variation is an error") {
  std::mt19937_64 rng(7);
  Problem p = random_problem(rng, 6, 6, 1, 1, {0.5});
  p.fits[0][0].Lambda = p.design.treated();
  CHECK_THROWS_AS(bias_hat(p.fits[0], p.design, 4), DegenerateLoadingsError);
  CHECK_THROWS_AS(sigma_hat(p.fits[0], p.fits[0], p.design, 4), DegenerateLoadingsError);
}
