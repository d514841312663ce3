#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "pinv/error.hpp"
#include "pinv/gp_exact.hpp"
#include "pinv/kernel.hpp"
#include "pinv/rng.hpp"

using namespace pinv;
using big = boost::multiprecision::cpp_bin_float_50;

namespace {

RowMatrix random_inputs(std::size_t n, std::size_t d, Rng& rng) {
  RowMatrix X(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) X(i, k) = uniform01(rng);
  return X;
}

// Draw from the GP prior via a dense Cholesky.
Eigen::VectorXd sample_gp(const KernelSpec& spec, const RowMatrix& X, Rng& rng) {
  const auto f = factorize_dense(spec, X);
  std::normal_distribution<double> z;
  Eigen::VectorXd e(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) e[i] = z(rng);
  return f.lower * e;
}

}  // namespace

TEST(Kernel, ValueAtUnitDistance) {
  const big r = 1;
  const big s5 = boost::multiprecision::sqrt(big(5));
  const big oracle = (1 + s5 * r + big(5) / 3 * r * r) * boost::multiprecision::exp(-s5 * r);
  KernelSpec spec{{1.0}, 1.0, 0.0};
  const std::vector<double> a{0.0}, b{1.0};
  EXPECT_NEAR(kernel_eval(spec, a, b), static_cast<double>(oracle), 1e-15);
  EXPECT_NEAR(kernel_eval(spec, a, b), 0.52399411, 1e-8);
}

TEST(Kernel, ZeroDistanceAndDecay) {
  KernelSpec spec{{0.3, 0.7}, 2.5, 0.1};
  const std::vector<double> a{0.2, 0.4}, far{1e6, 0.4};
  EXPECT_DOUBLE_EQ(kernel_eval(spec, a, a), 2.5);  // nugget excluded
  EXPECT_EQ(kernel_eval(spec, a, far), 0.0);
}

TEST(Kernel, SymmetricAndDecreasing) {
  KernelSpec spec{{0.3, 0.7, 1.1}, 1.7, 0.0};
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> a(3), b(3);
    for (int k = 0; k < 3; ++k) {
      a[k] = uniform01(rng);
      b[k] = uniform01(rng);
    }
    EXPECT_EQ(kernel_eval(spec, a, b), kernel_eval(spec, b, a));
    auto c = b;
    c[t % 3] += (b[t % 3] >= a[t % 3] ? 0.05 : -0.05);
    EXPECT_LE(kernel_eval(spec, a, c), kernel_eval(spec, a, b));
  }
}

TEST(Kernel, JsonRoundTripFullPrecision) {
  KernelSpec spec{{0.1 + 1e-17, 1.0 / 3.0}, 2.0 / 7.0, 1e-9 / 3.0};
  const auto back = kernel_from_json(nlohmann::json::parse(to_json(spec).dump()));
  EXPECT_EQ(back.lengthscales, spec.lengthscales);
  EXPECT_EQ(back.scale, spec.scale);
  EXPECT_EQ(back.nugget, spec.nugget);
}

TEST(DenseLik, SinglePointMarginal) {
  KernelSpec spec{{1.0}, 0.75, 0.25};
  RowMatrix X(1, 1);
  X << 0.3;
  Eigen::VectorXd y(1);
  y << 0.0;
  EXPECT_NEAR(log_likelihood_dense(spec, X, y), -0.5 * std::log(2.0 * std::numbers::pi), 1e-14);
}

TEST(DenseLik, TwoByTwoClosedForm) {
  KernelSpec spec{{0.4}, 1.3, 0.05};
  RowMatrix X(2, 1);
  X << 0.1, 0.45;
  Eigen::VectorXd y(2);
  y << 0.7, -0.2;
  const double a = 1.3 + 0.05;
  const double b = 1.3 * matern52(0.35 / 0.4);
  const double det = a * a - b * b;
  const double quad = (a * y[0] * y[0] - 2 * b * y[0] * y[1] + a * y[1] * y[1]) / det;
  const double oracle = -std::log(2 * std::numbers::pi) - 0.5 * std::log(det) - 0.5 * quad;
  EXPECT_NEAR(log_likelihood_dense(spec, X, y), oracle, 1e-12);
}

TEST(DenseLik, DuplicateInputsZeroNugget) {
  KernelSpec spec{{0.4}, 1.0, 0.0};
  RowMatrix X(3, 1);
  X << 0.1, 0.5, 0.1;
  Eigen::VectorXd y = Eigen::VectorXd::Zero(3);
  EXPECT_THROW(log_likelihood_dense(spec, X, y), IllConditionedError);
}

TEST(DenseLik, ColumnPermutationInvariance) {
  Rng rng(7);
  const auto X = random_inputs(30, 3, rng);
  KernelSpec spec{{0.2, 0.5, 0.9}, 1.0, 1e-4};
  const auto y = sample_gp(spec, X, rng);
  RowMatrix P(30, 3);
  P.col(0) = X.col(2);
  P.col(1) = X.col(0);
  P.col(2) = X.col(1);
  KernelSpec q{{0.9, 0.2, 0.5}, 1.0, 1e-4};
  EXPECT_NEAR(log_likelihood_dense(spec, X, y), log_likelihood_dense(q, P, y), 1e-9);
}

TEST(DenseFactor, ReconstructsGram) {
  Rng rng(3);
  const auto X = random_inputs(50, 2, rng);
  KernelSpec spec{{0.3, 0.3}, 2.0, 1e-6};
  const auto f = factorize_dense(spec, X);
  const Eigen::MatrixXd K = covariance_matrix(spec, X);
  const Eigen::MatrixXd R = f.lower * f.lower.transpose() - K;
  EXPECT_LT(R.cwiseAbs().maxCoeff(), 1e-8 * spec.scale + f.jitter);
  EXPECT_LT((K - K.transpose()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FitDense, ZeroResponsesDriveScaleDown) {
  Rng rng(11);
  const auto X = random_inputs(20, 1, rng);
  const Eigen::VectorXd y = Eigen::VectorXd::Zero(20);
  const auto rep = fit_mle_dense(X, y, default_initial_spec(1, 0.0));
  EXPECT_LT(rep.spec.scale, 1e-6);
}

TEST(FitDense, RecoversGeneratingLengthscale) {
  Rng rng(2024);
  const auto X = random_inputs(400, 1, rng);
  KernelSpec truth{{0.3}, 1.0, 1e-6};
  const Eigen::VectorXd y = sample_gp(truth, X, rng);
  const auto rep = fit_mle_dense(X, y, default_initial_spec(1, sample_variance(y)));
  EXPECT_GE(rep.spec.lengthscales[0], 0.15);
  EXPECT_LE(rep.spec.lengthscales[0], 0.6);
  EXPECT_GE(rep.log_likelihood, rep.initial_log_likelihood);
}

TEST(FitDense, InitAtOptimumStays) {
  Rng rng(5);
  const auto X = random_inputs(60, 2, rng);
  KernelSpec truth{{0.4, 0.4}, 1.0, 1e-3};
  const Eigen::VectorXd y = sample_gp(truth, X, rng);
  const auto first = fit_mle_dense(X, y, default_initial_spec(2, sample_variance(y)));
  const auto again = fit_mle_dense(X, y, first.spec);
  EXPECT_GE(again.log_likelihood, first.log_likelihood - 1e-6);
}

TEST(FitDense, CapEnforced) {
  RowMatrix X = RowMatrix::Zero(11, 1);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(11);
  EXPECT_THROW(fit_mle_dense(X, y, default_initial_spec(1, 1.0), {}, 10), ValidationError);
}

TEST(PredictDense, InterpolatesWithZeroNugget) {
  Rng rng(9);
  const auto X = random_inputs(25, 2, rng);
  KernelSpec spec{{0.5, 0.5}, 1.5, 0.0};
  Eigen::VectorXd y(25);
  for (int i = 0; i < 25; ++i) y[i] = std::sin(6 * X(i, 0)) + X(i, 1);
  ExactGP gp(spec, X, y);
  const auto s = gp.predict(X);
  for (int i = 0; i < 25; ++i) {
    EXPECT_NEAR(s.means[i], y[i], 1e-6 * std::max(1.0, std::abs(y[i])));
    EXPECT_LE(s.sds[i], 1e-5 * std::sqrt(spec.scale));
  }
}

TEST(PredictDense, RevertsToPriorFarAway) {
  RowMatrix X(3, 1);
  X << 0.1, 0.2, 0.3;
  Eigen::VectorXd y(3);
  y << 1.0, 2.0, 4.0;
  KernelSpec spec{{0.1}, 2.0, 0.0};
  ExactGP gp(spec, X, y);
  RowMatrix F(1, 1);
  F << 1e4;
  const auto s = gp.predict(F);
  EXPECT_NEAR(s.means[0], 7.0 / 3.0, 1e-12);
  EXPECT_NEAR(s.sds[0], std::sqrt(2.0), 1e-12);
}

TEST(PredictDense, ThreePointExplicitInverse) {
  RowMatrix X(3, 2);
  X << 0.1, 0.9, 0.4, 0.3, 0.8, 0.6;
  Eigen::VectorXd y(3);
  y << 0.5, -1.0, 2.0;
  KernelSpec spec{{0.6, 0.35}, 1.2, 0.01};
  ExactGP gp(spec, X, y);
  RowMatrix Xs(1, 2);
  Xs << 0.5, 0.5;
  // Explicit 3x3 inverse via cofactors.
  double K[3][3], k[3];
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      K[i][j] = kernel_eval(spec, {X.row(i).data(), 2}, {X.row(j).data(), 2}) + (i == j ? spec.nugget : 0.0);
    }
    k[i] = kernel_eval(spec, {X.row(i).data(), 2}, {Xs.row(0).data(), 2});
  }
  double C[3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const int r0 = (j + 1) % 3, r1 = (j + 2) % 3, c0 = (i + 1) % 3, c1 = (i + 2) % 3;
      C[i][j] = K[r0][c0] * K[r1][c1] - K[r0][c1] * K[r1][c0];
    }
  const double det = K[0][0] * C[0][0] + K[0][1] * C[1][0] + K[0][2] * C[2][0];
  const double ybar = y.mean();
  double mean = ybar, var = spec.scale + spec.nugget;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      mean += k[i] * C[i][j] / det * (y[j] - ybar);
      var -= k[i] * C[i][j] / det * k[j];
    }
  const auto s = gp.predict(Xs);
  EXPECT_NEAR(s.means[0], mean, 1e-12);
  EXPECT_NEAR(s.sds[0], std::sqrt(var), 1e-12);
}

TEST(GaussianMarginal, Formula) {
  const std::vector<double> r{1.0, 1.0};
  EXPECT_NEAR(gaussian_marginal_loglik(r), -std::log(2.0), 1e-15);
  const std::vector<double> s{3.0, 3.0};
  EXPECT_NEAR(gaussian_marginal_loglik(s), -std::log(2.0) - 2.0 * std::log(3.0), 1e-14);
  const std::vector<double> z{0.0, 0.0};
  EXPECT_THROW(gaussian_marginal_loglik(z), NumericalError);
  const std::vector<double> one{1.0};
  EXPECT_THROW(gaussian_marginal_loglik(one), ValidationError);
}
