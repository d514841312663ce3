#pragma once

#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pinv/data_model.hpp"
#include "pinv/kernel.hpp"

namespace pinv {

struct PredictiveSummary {
  std::vector<double> means;
  std::vector<double> sds;
};

// Jitter ladder for covariance factorizations: 0, then 1e-10 * tau^2 growing
// x10 up to 1e-4 * tau^2.
std::vector<double> jitter_ladder(double tau2);

// In-place lower Cholesky of a small row-major n x n matrix (lower triangle
// read and written). Returns false when a pivot is not positive.
bool cholesky_lower_inplace(double* a, std::size_t n, std::size_t lda);

// True when two rows of X are bit-identical.
bool has_duplicate_rows(const RowMatrix& X);

// K(X, X) + nugget * I.
Eigen::MatrixXd covariance_matrix(const KernelSpec& spec, const RowMatrix& X);
// K(A, B) without nugget.
Eigen::MatrixXd cross_covariance(const KernelSpec& spec, const RowMatrix& A, const RowMatrix& B);

struct DenseFactor {
  Eigen::MatrixXd lower;  // L with L L^T = K + g I + jitter I
  double jitter = 0.0;
};

/// Cholesky of K(X,X) + gI under the jitter ladder. Throws
/// IllConditionedError when every rung fails, or immediately when the nugget
/// is zero and X has duplicated rows (the Gram is then exactly singular).
DenseFactor factorize_dense(const KernelSpec& spec, const RowMatrix& X);

/// Zero-mean MVN log density of already-centered responses.
double log_likelihood_dense(const KernelSpec& spec, const RowMatrix& X, const Eigen::VectorXd& centered);

struct FitOptions {
  int budget = 500;        // objective evaluations, shared by all restarts
  int restarts = 2;
  double nugget_floor = 1e-8;  // relative to var(y)
  bool estimate_nugget = true;
};

struct FitReport {
  KernelSpec spec;
  double log_likelihood = 0.0;
  double initial_log_likelihood = 0.0;
  int evaluations = 0;
  bool budget_exhausted = false;
};

/// Maximizes loglik(spec) over log(theta), log(tau^2), log(g) by Nelder-Mead
/// inside fixed boxes scaled by the response variance. The initial spec is
/// clamped into the box and evaluated first.
FitReport maximize_log_likelihood(const std::function<double(const KernelSpec&)>& loglik, const KernelSpec& init,
                                  double response_variance, const FitOptions& options);

/// Default starting point: theta = 0.25 in every column, tau^2 = var(y),
/// g = 1e-6 var(y).
KernelSpec default_initial_spec(std::size_t dim, double response_variance);

double sample_variance(const Eigen::VectorXd& y);

inline constexpr std::size_t kDefaultDenseCap = 4000;

/// Dense-GP MLE. Responses are centered internally. Throws ValidationError
/// when n exceeds dense_cap.
FitReport fit_mle_dense(const RowMatrix& X, const Eigen::VectorXd& y, const KernelSpec& init,
                        const FitOptions& options = {}, std::size_t dense_cap = kDefaultDenseCap);

// Dense GP conditioned on all training data.
class ExactGP {
 public:
  ExactGP(KernelSpec spec, RowMatrix inputs, const Eigen::VectorXd& responses);

  const KernelSpec& spec() const { return spec_; }
  const RowMatrix& inputs() const { return inputs_; }
  double response_mean() const { return mean_; }
  const Eigen::MatrixXd& cholesky() const { return factor_.lower; }
  double jitter() const { return factor_.jitter; }

  /// Kriging mean and sd at each row of Xs. The variance includes the nugget
  /// (it predicts a new response, not the latent surface).
  PredictiveSummary predict(const RowMatrix& Xs) const;
  // Means only; skips the variance solve.
  std::vector<double> predict_means(const RowMatrix& Xs) const;

 private:
  KernelSpec spec_;
  RowMatrix inputs_;
  double mean_ = 0.0;
  DenseFactor factor_;
  Eigen::VectorXd alpha_;  // (K + gI)^{-1} (y - mean)
};

/// Log marginal likelihood of i.i.d. Gaussian residuals with sigma^2
/// integrated out under pi(sigma^2) ~ 1/sigma^2, up to a constant:
/// -(n/2) log(sum r^2).
double gaussian_marginal_loglik(std::span<const double> residuals);

}  // namespace pinv
