#include "pinv/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <boost/math/special_functions/gamma.hpp>

#include "pinv/error.hpp"

namespace pinv {

double rmse(std::span<const double> predicted, std::span<const double> actual) {
  if (predicted.size() != actual.size() || predicted.empty()) throw ValidationError("rmse: lengths must match and be >= 1");
  double s = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double d = predicted[i] - actual[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(predicted.size()));
}

double crps_gaussian(double mean, double sd, double observation) {
  if (!(sd > 0.0)) throw ValidationError("crps_gaussian: sd must be > 0");
  const double z = (observation - mean) / sd;
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  return sd * (z * (2.0 * cdf - 1.0) + 2.0 * pdf - 1.0 / std::sqrt(std::numbers::pi));
}

double crps_sample(std::span<const double> samples, double observation) {
  if (samples.empty()) throw ValidationError("crps_sample: no samples");
  std::vector<double> x(samples.begin(), samples.end());
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double abs_obs = 0.0, pair = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    abs_obs += std::abs(x[i] - observation);
    // sum_{i<j} (x_j - x_i) via sorted weights.
    pair += x[i] * (2.0 * static_cast<double>(i) - n + 1.0);
  }
  return abs_obs / n - pair / (n * n);
}

double poisson_cdf(std::int64_t y, double mean) {
  if (y < 0) return 0.0;
  if (!(mean >= 0.0)) throw ValidationError("poisson_cdf: mean must be >= 0");
  if (mean == 0.0) return 1.0;
  return boost::math::gamma_q(static_cast<double>(y) + 1.0, mean);
}

PitResult randomized_pit(std::span<const std::int64_t> counts, std::span<const double> means, Rng& rng,
                         std::size_t bins) {
  if (counts.size() != means.size()) throw ValidationError("randomized_pit: lengths differ");
  if (bins == 0) throw ValidationError("randomized_pit: need at least one bin");
  PitResult out;
  out.values.resize(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (!(means[i] > 0.0)) throw ValidationError("randomized_pit: predictive means must be > 0");
    const double lo = poisson_cdf(counts[i] - 1, means[i]);
    const double hi = poisson_cdf(counts[i], means[i]);
    const double v = uniform01(rng);
    out.values[i] = std::clamp(lo + v * (hi - lo), 0.0, 1.0);
  }
  out.histogram.assign(bins, 0);
  double sum = 0.0;
  for (double p : out.values) {
    const auto b = std::min(bins - 1, static_cast<std::size_t>(p * static_cast<double>(bins)));
    ++out.histogram[b];
    sum += p;
  }
  const double n = static_cast<double>(out.values.size());
  out.density.resize(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    out.density[b] = n > 0 ? static_cast<double>(out.histogram[b]) * static_cast<double>(bins) / n : 0.0;
  }
  out.mean = n > 0 ? sum / n : 0.0;
  if (!out.values.empty()) {
    const auto ks = ks_uniform(out.values);
    out.ks_statistic = ks.statistic;
    out.ks_p_value = ks.p_value;
  }
  return out;
}

KsResult ks_uniform(std::span<const double> values) {
  if (values.empty()) throw ValidationError("ks_uniform: no values");
  std::vector<double> x(values.begin(), values.end());
  for (double v : x) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("ks_uniform: values must lie in [0, 1]");
  }
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    d = std::max(d, static_cast<double>(i + 1) / n - x[i]);
    d = std::max(d, x[i] - static_cast<double>(i) / n);
  }
  const double sqrt_n = std::sqrt(n);
  const double lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
  double p = 0.0;
  if (lambda < 0.2) {
    p = 1.0;
  } else {
    double sign = 1.0;
    for (int k = 1; k <= 100; ++k) {
      const double term = std::exp(-2.0 * k * k * lambda * lambda);
      p += sign * term;
      if (term < 1e-16) break;
      sign = -sign;
    }
    p = std::clamp(2.0 * p, 0.0, 1.0);
  }
  return {d, p};
}

HpdInterval hpd_interval(std::span<const double> samples, double mass) {
  if (samples.size() < 20) throw ValidationError("hpd_interval needs at least 20 samples");
  if (!(mass > 0.0 && mass <= 1.0)) throw ValidationError("hpd_interval: mass must be in (0, 1]");
  std::vector<double> x(samples.begin(), samples.end());
  std::sort(x.begin(), x.end());
  const std::size_t s = x.size();
  const auto keep = std::min(s, static_cast<std::size_t>(std::ceil(mass * static_cast<double>(s) - 1e-9)));
  std::size_t best = 0;
  double width = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + keep <= s; ++i) {
    const double w = x[i + keep - 1] - x[i];
    if (w < width) {
      width = w;
      best = i;
    }
  }
  return {x[best], x[best + keep - 1], mass};
}

CoverageSummary coverage_tally(std::span<const CoverageReplicate> replicates) {
  if (replicates.empty()) throw ValidationError("coverage_tally needs at least one replicate");
  const std::size_t p = replicates.front().truth.size();
  CoverageSummary out;
  out.per_coordinate.assign(p, 0.0);
  out.replicates = replicates.size();
  std::size_t joint = 0;
  for (const auto& rep : replicates) {
    if (rep.truth.size() != p || rep.intervals.size() != p) throw ValidationError("coverage_tally: ragged replicate");
    bool all = true;
    for (std::size_t k = 0; k < p; ++k) {
      const bool in = rep.intervals[k].contains(rep.truth[k]);
      out.per_coordinate[k] += in ? 1.0 : 0.0;
      all = all && in;
    }
    joint += all ? 1 : 0;
  }
  for (auto& c : out.per_coordinate) c /= static_cast<double>(replicates.size());
  out.joint = static_cast<double>(joint) / static_cast<double>(replicates.size());
  return out;
}

}  // namespace pinv
