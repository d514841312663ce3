#include "pinv/gp_exact.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "pinv/error.hpp"
#include "pinv/optim.hpp"

namespace pinv {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Log-space boxes, relative to the response variance where applicable.
constexpr double kMinLengthscale = 1e-3;
constexpr double kMaxLengthscale = 1e2;
constexpr double kMinScaleRel = 1e-8;
constexpr double kMaxScaleRel = 1e4;
constexpr double kMaxNuggetRel = 1.0;

}  // namespace

std::vector<double> jitter_ladder(double tau2) {
  std::vector<double> ladder{0.0};
  for (double rel = 1e-10; rel <= 1.0001e-4; rel *= 10.0) ladder.push_back(rel * tau2);
  return ladder;
}

bool cholesky_lower_inplace(double* a, std::size_t n, std::size_t lda) {
  for (std::size_t j = 0; j < n; ++j) {
    double* rj = a + j * lda;
    double d = rj[j];
    for (std::size_t k = 0; k < j; ++k) d -= rj[k] * rj[k];
    if (!(d > 0.0)) return false;
    d = std::sqrt(d);
    rj[j] = d;
    const double inv = 1.0 / d;
    for (std::size_t i = j + 1; i < n; ++i) {
      double* ri = a + i * lda;
      double s = ri[j];
      for (std::size_t k = 0; k < j; ++k) s -= ri[k] * rj[k];
      ri[j] = s * inv;
    }
  }
  return true;
}

bool has_duplicate_rows(const RowMatrix& X) {
  const auto n = static_cast<std::size_t>(X.rows());
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  auto row_less = [&](std::size_t a, std::size_t b) {
    for (Eigen::Index k = 0; k < X.cols(); ++k) {
      if (X(a, k) != X(b, k)) return X(a, k) < X(b, k);
    }
    return false;
  };
  std::sort(idx.begin(), idx.end(), row_less);
  for (std::size_t i = 1; i < n; ++i) {
    if (!row_less(idx[i - 1], idx[i])) return true;
  }
  return false;
}

Eigen::MatrixXd covariance_matrix(const KernelSpec& spec, const RowMatrix& X) {
  const auto n = X.rows();
  const auto d = static_cast<std::size_t>(X.cols());
  if (d != spec.dim()) throw ValidationError("kernel dimension does not match inputs");
  const auto inv = spec.inverse_lengthscales();
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    K(i, i) = spec.scale + spec.nugget;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double v = matern52_product(X.row(i).data(), X.row(j).data(), inv.data(), d, spec.scale);
      K(i, j) = v;
      K(j, i) = v;
    }
  }
  return K;
}

Eigen::MatrixXd cross_covariance(const KernelSpec& spec, const RowMatrix& A, const RowMatrix& B) {
  const auto d = static_cast<std::size_t>(A.cols());
  if (d != spec.dim() || B.cols() != A.cols()) throw ValidationError("kernel dimension does not match inputs");
  const auto inv = spec.inverse_lengthscales();
  Eigen::MatrixXd K(A.rows(), B.rows());
  for (Eigen::Index j = 0; j < B.rows(); ++j) {
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      K(i, j) = matern52_product(A.row(i).data(), B.row(j).data(), inv.data(), d, spec.scale);
    }
  }
  return K;
}

DenseFactor factorize_dense(const KernelSpec& spec, const RowMatrix& X) {
  spec.validate();
  if (spec.nugget == 0.0 && has_duplicate_rows(X)) {
    throw IllConditionedError("duplicated inputs with zero nugget make the covariance singular", 0.0);
  }
  double last = 0.0;
  for (double jitter : jitter_ladder(spec.scale)) {
    last = jitter;
    // Factor in place so only one n x n matrix is alive at a time.
    Eigen::MatrixXd A = covariance_matrix(spec, X);
    A.diagonal().array() += jitter;
    Eigen::LLT<Eigen::Ref<Eigen::MatrixXd>, Eigen::Lower> llt(A);
    if (llt.info() == Eigen::Success && A.diagonal().minCoeff() > 0.0) {
      A.triangularView<Eigen::StrictlyUpper>().setZero();
      DenseFactor f;
      f.lower = std::move(A);
      f.jitter = jitter;
      return f;
    }
  }
  throw IllConditionedError("covariance not positive definite after jitter " + std::to_string(last), last);
}

double log_likelihood_dense(const KernelSpec& spec, const RowMatrix& X, const Eigen::VectorXd& centered) {
  if (X.rows() == 0 || X.rows() != centered.size()) throw ValidationError("log_likelihood_dense: size mismatch");
  const DenseFactor f = factorize_dense(spec, X);
  const Eigen::VectorXd z = f.lower.triangularView<Eigen::Lower>().solve(centered);
  const double logdet = 2.0 * f.lower.diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(X.rows()) * kLog2Pi + logdet + z.squaredNorm());
}

double sample_variance(const Eigen::VectorXd& y) {
  if (y.size() < 2) return 0.0;
  const double mean = y.mean();
  return (y.array() - mean).square().sum() / static_cast<double>(y.size() - 1);
}

KernelSpec default_initial_spec(std::size_t dim, double response_variance) {
  const double v = response_variance > 0.0 ? response_variance : 1.0;
  KernelSpec spec;
  spec.lengthscales.assign(dim, 0.25);
  spec.scale = v;
  spec.nugget = 1e-6 * v;
  return spec;
}

FitReport maximize_log_likelihood(const std::function<double(const KernelSpec&)>& loglik, const KernelSpec& init,
                                  double response_variance, const FitOptions& options) {
  init.validate();
  const std::size_t d = init.dim();
  const double v = response_variance > 0.0 ? response_variance : 1.0;
  const double nugget_floor = options.nugget_floor * v;

  std::vector<double> lo(d, std::log(kMinLengthscale)), hi(d, std::log(kMaxLengthscale));
  lo.push_back(std::log(kMinScaleRel * v));
  hi.push_back(std::log(kMaxScaleRel * v));
  if (options.estimate_nugget) {
    lo.push_back(std::log(nugget_floor));
    hi.push_back(std::log(kMaxNuggetRel * v));
  }

  auto to_spec = [&](std::span<const double> z) {
    KernelSpec s;
    s.lengthscales.resize(d);
    for (std::size_t k = 0; k < d; ++k) s.lengthscales[k] = std::exp(std::clamp(z[k], lo[k], hi[k]));
    s.scale = std::exp(std::clamp(z[d], lo[d], hi[d]));
    s.nugget = options.estimate_nugget ? std::exp(std::clamp(z[d + 1], lo[d + 1], hi[d + 1]))
                                       : std::max(init.nugget, 0.0);
    return s;
  };

  std::vector<double> z0(lo.size());
  for (std::size_t k = 0; k < d; ++k) z0[k] = std::clamp(std::log(init.lengthscales[k]), lo[k], hi[k]);
  z0[d] = std::clamp(std::log(init.scale), lo[d], hi[d]);
  if (options.estimate_nugget) {
    z0[d + 1] = std::clamp(std::log(std::max(init.nugget, nugget_floor)), lo[d + 1], hi[d + 1]);
  }

  auto safe_loglik = [&](const KernelSpec& s) {
    try {
      const double ll = loglik(s);
      return std::isfinite(ll) ? ll : -std::numeric_limits<double>::infinity();
    } catch (const NumericalError&) {
      return -std::numeric_limits<double>::infinity();
    }
  };
  auto objective = [&](std::span<const double> z) {
    double penalty = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) {
      const double c = std::clamp(z[k], lo[k], hi[k]);
      penalty += (z[k] - c) * (z[k] - c);
    }
    const double ll = safe_loglik(to_spec(z));
    if (!std::isfinite(ll)) return std::numeric_limits<double>::infinity();
    return -ll + 10.0 * penalty;
  };

  FitReport report;
  std::vector<double> best = z0;
  double best_value = std::numeric_limits<double>::infinity();
  int used = 0;
  bool converged = false;
  for (int attempt = 0; attempt <= options.restarts && used < options.budget; ++attempt) {
    NelderMeadOptions nm;
    nm.max_evaluations = options.budget - used;
    nm.initial_step = attempt == 0 ? 0.7 : 0.3;
    auto res = nelder_mead(objective, best, nm);
    if (attempt == 0) report.initial_log_likelihood = -objective(z0);
    used += res.evaluations;
    if (res.value < best_value || attempt == 0) {
      best_value = res.value;
      best = res.x;
    }
    converged = res.converged;
  }
  for (std::size_t k = 0; k < best.size(); ++k) best[k] = std::clamp(best[k], lo[k], hi[k]);
  report.spec = to_spec(best);
  report.log_likelihood = safe_loglik(report.spec);
  report.evaluations = used;
  report.budget_exhausted = !converged && used >= options.budget;
  return report;
}

FitReport fit_mle_dense(const RowMatrix& X, const Eigen::VectorXd& y, const KernelSpec& init,
                        const FitOptions& options, std::size_t dense_cap) {
  if (static_cast<std::size_t>(X.rows()) > dense_cap) {
    throw ValidationError("dense GP fit on " + std::to_string(X.rows()) + " rows exceeds the dense cap of " +
                          std::to_string(dense_cap));
  }
  if (X.rows() != y.size() || X.rows() == 0) throw ValidationError("fit_mle_dense: size mismatch");
  const Eigen::VectorXd centered = y.array() - y.mean();
  return maximize_log_likelihood([&](const KernelSpec& s) { return log_likelihood_dense(s, X, centered); }, init,
                                 sample_variance(y), options);
}

ExactGP::ExactGP(KernelSpec spec, RowMatrix inputs, const Eigen::VectorXd& responses)
    : spec_(std::move(spec)), inputs_(std::move(inputs)) {
  if (inputs_.rows() != responses.size() || inputs_.rows() == 0) throw ValidationError("ExactGP: size mismatch");
  if (static_cast<std::size_t>(inputs_.cols()) != spec_.dim()) throw ValidationError("ExactGP: kernel dimension mismatch");
  mean_ = responses.mean();
  factor_ = factorize_dense(spec_, inputs_);
  const Eigen::VectorXd centered = responses.array() - mean_;
  const Eigen::VectorXd z = factor_.lower.triangularView<Eigen::Lower>().solve(centered);
  alpha_ = factor_.lower.transpose().triangularView<Eigen::Upper>().solve(z);
}

PredictiveSummary ExactGP::predict(const RowMatrix& Xs) const {
  const Eigen::MatrixXd Ks = cross_covariance(spec_, inputs_, Xs);  // n x n*
  const Eigen::MatrixXd V = factor_.lower.triangularView<Eigen::Lower>().solve(Ks);
  PredictiveSummary out;
  out.means.resize(static_cast<std::size_t>(Xs.rows()));
  out.sds.resize(static_cast<std::size_t>(Xs.rows()));
  const double prior_var = spec_.scale + spec_.nugget;
  for (Eigen::Index j = 0; j < Xs.rows(); ++j) {
    out.means[static_cast<std::size_t>(j)] = mean_ + Ks.col(j).dot(alpha_);
    out.sds[static_cast<std::size_t>(j)] = std::sqrt(std::max(0.0, prior_var - V.col(j).squaredNorm()));
  }
  return out;
}

std::vector<double> ExactGP::predict_means(const RowMatrix& Xs) const {
  const Eigen::MatrixXd Ks = cross_covariance(spec_, inputs_, Xs);
  const Eigen::VectorXd m = Ks.transpose() * alpha_;
  std::vector<double> out(static_cast<std::size_t>(Xs.rows()));
  for (Eigen::Index j = 0; j < Xs.rows(); ++j) out[static_cast<std::size_t>(j)] = mean_ + m[j];
  return out;
}

double gaussian_marginal_loglik(std::span<const double> residuals) {
  if (residuals.size() < 2) throw ValidationError("gaussian_marginal_loglik needs at least two residuals");
  double rss = 0.0;
  for (double r : residuals) rss += r * r;
  if (!(rss > 0.0)) throw NumericalError("residual sum of squares is zero");
  if (!std::isfinite(rss)) throw NumericalError("residual sum of squares is not finite");
  return -0.5 * static_cast<double>(residuals.size()) * std::log(rss);
}

}  // namespace pinv
