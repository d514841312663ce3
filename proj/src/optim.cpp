#include "pinv/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace pinv {

NelderMeadResult nelder_mead(const std::function<double(std::span<const double>)>& objective,
                             std::vector<double> x0, const NelderMeadOptions& options) {
  const std::size_t n = x0.size();
  NelderMeadResult result;
  auto eval = [&](const std::vector<double>& x) {
    ++result.evaluations;
    const double v = objective(x);
    return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
  };

  std::vector<std::vector<double>> simplex(n + 1, x0);
  std::vector<double> values(n + 1);
  values[0] = eval(x0);
  for (std::size_t i = 0; i < n && result.evaluations < options.max_evaluations; ++i) {
    simplex[i + 1][i] += options.initial_step;
    values[i + 1] = eval(simplex[i + 1]);
  }
  if (result.evaluations < static_cast<int>(n + 1)) {
    // Budget smaller than the simplex; report the best evaluated vertex.
    const auto best = static_cast<std::size_t>(
        std::min_element(values.begin(), values.begin() + result.evaluations) - values.begin());
    result.x = simplex[best];
    result.value = values[best];
    return result;
  }

  std::vector<std::size_t> order(n + 1);
  std::vector<double> centroid(n), trial(n), trial2(n);
  auto point = [&](double t, std::vector<double>& out, std::size_t worst) {
    for (std::size_t k = 0; k < n; ++k) out[k] = centroid[k] + t * (simplex[worst][k] - centroid[k]);
  };

  while (true) {
    std::iota(order.begin(), order.end(), 0);
    // Stable on ties so the vertex sequence is reproducible.
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[n - 1];

    double diameter = 0.0;
    for (std::size_t i = 1; i <= n; ++i) {
      double d = 0.0;
      for (std::size_t k = 0; k < n; ++k) d = std::max(d, std::abs(simplex[order[i]][k] - simplex[best][k]));
      diameter = std::max(diameter, d);
    }
    const double spread = std::abs(values[worst] - values[best]);
    if (spread <= options.ftol * (std::abs(values[best]) + options.ftol) && diameter <= std::sqrt(options.xtol)) {
      result.converged = true;
    }
    if (diameter <= options.xtol) result.converged = true;
    if (result.converged || result.evaluations >= options.max_evaluations) {
      result.x = simplex[best];
      result.value = values[best];
      return result;
    }

    std::fill(centroid.begin(), centroid.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < n; ++k) centroid[k] += simplex[order[i]][k];
    }
    for (auto& c : centroid) c /= static_cast<double>(n);

    point(-1.0, trial, worst);
    const double fr = eval(trial);
    if (fr < values[best]) {
      point(-2.0, trial2, worst);
      const double fe = result.evaluations < options.max_evaluations ? eval(trial2) : std::numeric_limits<double>::infinity();
      if (fe < fr) {
        simplex[worst] = trial2;
        values[worst] = fe;
      } else {
        simplex[worst] = trial;
        values[worst] = fr;
      }
      continue;
    }
    if (fr < values[second]) {
      simplex[worst] = trial;
      values[worst] = fr;
      continue;
    }
    // Contraction: outside if the reflection improved on the worst point.
    const bool outside = fr < values[worst];
    point(outside ? -0.5 : 0.5, trial2, worst);
    if (result.evaluations >= options.max_evaluations) continue;
    const double fc = eval(trial2);
    if (fc < (outside ? fr : values[worst])) {
      simplex[worst] = trial2;
      values[worst] = fc;
      continue;
    }
    // Shrink toward the best vertex.
    for (std::size_t i = 1; i <= n && result.evaluations < options.max_evaluations; ++i) {
      auto& v = simplex[order[i]];
      for (std::size_t k = 0; k < n; ++k) v[k] = simplex[best][k] + 0.5 * (v[k] - simplex[best][k]);
      values[order[i]] = eval(v);
    }
  }
}

}  // namespace pinv
