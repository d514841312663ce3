#pragma once

#include <functional>
#include <span>
#include <vector>

namespace pinv {

struct NelderMeadOptions {
  int max_evaluations = 500;
  double initial_step = 0.5;
  double ftol = 1e-9;  // relative spread of simplex values
  double xtol = 1e-7;  // simplex diameter
};

struct NelderMeadResult {
  std::vector<double> x;
  double value = 0.0;
  int evaluations = 0;
  bool converged = false;
};

// Derivative-free minimization. Deterministic for a deterministic objective.
// The first evaluation is at x0, so the result is never worse than x0.
NelderMeadResult nelder_mead(const std::function<double(std::span<const double>)>& objective,
                             std::vector<double> x0, const NelderMeadOptions& options);

}  // namespace pinv
