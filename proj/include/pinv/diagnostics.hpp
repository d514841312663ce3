#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "pinv/rng.hpp"

namespace pinv {

double rmse(std::span<const double> predicted, std::span<const double> actual);

/// Closed-form CRPS of N(mean, sd^2) at obs. Throws ValidationError if sd <= 0.
double crps_gaussian(double mean, double sd, double observation);

/// Sample-based CRPS: E|X - y| - E|X - X'| / 2 over the empirical
/// distribution of `samples`.
double crps_sample(std::span<const double> samples, double observation);

/// Poisson CDF P(Y <= y) at the given mean, via the regularized upper
/// incomplete gamma function. Zero for y < 0.
double poisson_cdf(std::int64_t y, double mean);

struct PitResult {
  std::vector<double> values;
  std::vector<std::size_t> histogram;  // counts per bin
  std::vector<double> density;         // counts / (n * bin width); 1 under uniformity
  double ks_statistic = 0.0;
  double ks_p_value = 1.0;
  double mean = 0.0;
};

inline constexpr std::size_t kPitBins = 10;

/// Randomized PIT for counts: F(y-1) + V (F(y) - F(y-1)), F the Poisson CDF
/// at `means` (mu_i * e_i), V ~ U(0, 1) from rng.
PitResult randomized_pit(std::span<const std::int64_t> counts, std::span<const double> means, Rng& rng,
                         std::size_t bins = kPitBins);

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// One-sample Kolmogorov-Smirnov test against Uniform(0, 1). The p-value uses
/// the asymptotic Kolmogorov series with Stephens' finite-n correction
/// (absolute error below ~0.01 for n >= 35; exact as n grows).
KsResult ks_uniform(std::span<const double> values);

struct HpdInterval {
  double lower = 0.0;
  double upper = 0.0;
  double mass = 0.95;
  bool contains(double x) const { return lower <= x && x <= upper; }
  double width() const { return upper - lower; }
};

/// Shortest interval spanning ceil(mass * s) sorted samples; ties go to the
/// smallest lower bound. Needs s >= 20.
HpdInterval hpd_interval(std::span<const double> samples, double mass = 0.95);

struct CoverageReplicate {
  std::vector<double> truth;
  std::vector<HpdInterval> intervals;  // one per coordinate
};

struct CoverageSummary {
  std::vector<double> per_coordinate;
  double joint = 0.0;
  std::size_t replicates = 0;
};

CoverageSummary coverage_tally(std::span<const CoverageReplicate> replicates);

}  // namespace pinv
