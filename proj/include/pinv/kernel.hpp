#pragma once

#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace pinv {

// Separable Matern-5/2 covariance with a nugget added on the diagonal only.
struct KernelSpec {
  std::vector<double> lengthscales;  // one per (normalized) input column
  double scale = 1.0;                // tau^2
  double nugget = 0.0;               // g

  std::size_t dim() const { return lengthscales.size(); }
  void validate() const;
  std::vector<double> inverse_lengthscales() const;
};

inline constexpr double kSqrt5 = 2.23606797749978969640917366873;

// Correlation rho(r) = (1 + sqrt5 r + 5 r^2 / 3) exp(-sqrt5 r).
inline double matern52(double r) {
  r = std::abs(r);
  if (kSqrt5 * r > 745.0) return 0.0;
  return (1.0 + kSqrt5 * r + (5.0 / 3.0) * r * r) * std::exp(-kSqrt5 * r);
}

// tau^2 * prod_k rho(|a_k - b_k| / theta_k), fused into one exp. inv_theta
// holds 1 / theta_k.
inline double matern52_product(const double* a, const double* b, const double* inv_theta, std::size_t d,
                               double tau2) {
  double poly = 1.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double r = std::abs(a[k] - b[k]) * inv_theta[k];
    sum += r;
    poly *= 1.0 + kSqrt5 * r + (5.0 / 3.0) * r * r;
  }
  if (!(kSqrt5 * sum <= 745.0)) return 0.0;
  return tau2 * poly * std::exp(-kSqrt5 * sum);
}

double kernel_eval(const KernelSpec& spec, std::span<const double> x, std::span<const double> y);

nlohmann::json to_json(const KernelSpec& spec);
KernelSpec kernel_from_json(const nlohmann::json& j);
void save_kernel(const KernelSpec& spec, const std::filesystem::path& path);
KernelSpec load_kernel(const std::filesystem::path& path);

}  // namespace pinv
