#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "pinv/data_model.hpp"
#include "pinv/diagnostics.hpp"
#include "pinv/inversion.hpp"
#include "pinv/vecchia.hpp"

namespace pinv {

// ---------------------------------------------------------------------------
// Output directories

// Collects files under one directory and writes a MANIFEST of their SHA-256
// hashes on finalize().
class RunDirectory {
 public:
  explicit RunDirectory(std::filesystem::path root);
  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path path(const std::string& name) const { return root_ / name; }
  void write(const std::string& name, const std::string& text);
  void write_json(const std::string& name, const nlohmann::json& j);
  // Registers a file written elsewhere under root.
  void add(const std::string& name);
  void finalize();

 private:
  std::filesystem::path root_;
  std::vector<std::string> files_;
};

// ---------------------------------------------------------------------------
// Toy problem: m(u, x) = 1 + 20 exp(-u2 x) sin^2(2 pi (x - u1)), x, u in [0,1].
// x is placed on the equator at longitude 180 x so that the surrogate sees a
// unit-vector input like every other problem.

struct ToyProblem {
  std::vector<double> field_x;
  std::vector<double> exposures;
  std::size_t replicates = 1;

  static double mean(std::span<const double> u, double x);
  static SpatialLocation location(double x);
  static ParameterDomain domain();
  // n field sites at x = (i + 0.5) / n with a constant exposure.
  static ToyProblem standard(std::size_t n_field = 60, double exposure = 2.0);
  // Lattice design of levels^2 runs over grid points x = j / (n_grid - 1).
  static SimulatorCorpus corpus(std::size_t levels, std::size_t n_grid);

  std::vector<SpatialLocation> locations() const;
  std::vector<double> rates(std::span<const double> u) const;
};

// ---------------------------------------------------------------------------
// Synthetic sky-map testbed: a smooth globally distributed term plus a
// ribbon (a Gaussian band around a fixed circle) whose radius depends on the
// first parameter and whose width and amplitude depend on the second.

struct SkyMapSpec {
  std::size_t mfp_levels = 7;
  std::size_t ratio_levels = 6;
  std::size_t n_grid = 500;
};

ParameterDomain skymap_domain();
double skymap_rate(const Vec3& direction, std::span<const double> u_raw);
std::vector<SpatialLocation> fibonacci_grid(std::size_t n);
// Lattice design crossed with a Fibonacci grid.
SimulatorCorpus skymap_corpus(const SkyMapSpec& spec);
// Seeded uniform design of n_runs points.
SimulatorCorpus skymap_random_corpus(std::size_t n_runs, std::size_t n_grid, std::uint64_t seed);
// Runs with no coordinate on the domain boundary.
std::vector<std::size_t> interior_runs(const SimulatorCorpus& corpus);

// ---------------------------------------------------------------------------
// Synthetic field data

/// Poisson counts with mean (rates_i * delta + backgrounds_i) * exposures_i.
FieldDataset synth_generate(const std::vector<SpatialLocation>& locations, std::span<const double> true_rates,
                            std::span<const double> exposures, std::span<const double> backgrounds,
                            std::uint64_t seed, double delta = 1.0);

/// Same with the truth taken from the corpus run whose design equals u_star
/// (raw units, exact match) at the given grid indices. Throws ValidationError
/// when no run matches.
FieldDataset synth_generate(const SimulatorCorpus& corpus, std::span<const double> u_star,
                            std::span<const std::size_t> grid_indices, std::span<const double> exposures,
                            std::span<const double> backgrounds, std::uint64_t seed, double delta = 1.0);

struct ExposureSchedule {
  double exposure = 100.0;  // seconds
  double spread = 0.5;      // exposures uniform on exposure * [1 - spread, 1 + spread]
  double background = 0.01;
};

std::vector<double> make_exposures(std::size_t n, const ExposureSchedule& schedule, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Surrogate fitting settings shared by the runners

struct SurrogateConfig {
  std::size_t m = kDefaultConditioningSize;
  int budget = 500;
  int restarts = 2;
  std::size_t max_fit_rows = 0;
  std::size_t dense_cap = kDefaultDenseCap;

  VecchiaFitOptions fit_options(std::uint64_t seed) const;
  nlohmann::json to_json() const;
  static SurrogateConfig from_json(const nlohmann::json& j);
};

// ---------------------------------------------------------------------------
// Synthetic truth recovery

struct RecoveryConfig {
  SurrogateConfig surrogate;
  McmcConfig mcmc;
  ExposureSchedule schedule;
  std::size_t n_field = 200;       // field sites sampled from the grid; 0 = all
  std::vector<double> deltas;      // one per case; empty = no discrepancy
  double mass = 0.95;
  std::size_t density_bins = 40;
  std::uint64_t seed = 0;
};

struct RecoveryCase {
  std::size_t index = 0;
  std::size_t run = 0;
  std::vector<double> truth;  // raw units
  double delta_true = 1.0;
  std::vector<double> posterior_mean;
  std::vector<HpdInterval> hpd;
  bool covered = false;
  double delta_mean = 1.0;
  HpdInterval delta_hpd;
  bool delta_covered = false;
  double acceptance = 0.0;
  std::string training_hash;
  KernelSpec spec;
};

struct RecoveryReport {
  std::vector<RecoveryCase> cases;
  CoverageSummary coverage;
  double delta_coverage = 0.0;
};

/// For each case: drop the truth run, fit the surrogate on the rest, draw
/// field counts at the truth, calibrate and record the HPD intervals. Case i
/// uses truth_runs[i % size] and deltas[i] (if any). Writes per-case posterior
/// and density CSVs when out is non-null.
RecoveryReport run_recovery_grid(const SimulatorCorpus& corpus, std::span<const std::size_t> truth_runs,
                                 const RecoveryConfig& config, RunDirectory* out = nullptr);

// ---------------------------------------------------------------------------
// Hold-one-out benchmark

struct HoldoutConfig {
  SurrogateConfig surrogate;
  std::vector<std::size_t> m_values{25};
  bool include_dense = true;
  std::vector<std::size_t> runs;  // held-out runs; empty = all
  std::uint64_t seed = 0;
};

struct HoldoutRow {
  std::size_t run = 0;
  std::string method;  // "vecchia" | "dense"
  std::size_t m = 0;
  double rmse = 0.0;
  double crps = 0.0;
  double fit_seconds = 0.0;
  double predict_seconds = 0.0;
  bool skipped = false;
  std::string note;
};

/// Fits on all runs but one and predicts the held-out map. The dense GP uses
/// the hyperparameters of the Vecchia fit at m_values.front() and is skipped
/// above the dense cap.
std::vector<HoldoutRow> holdout_benchmark(const SimulatorCorpus& corpus, const HoldoutConfig& config);
std::string holdout_csv(const std::vector<HoldoutRow>& rows);

// ---------------------------------------------------------------------------
// Cross-validated CRPS grids

struct CvConfig {
  std::size_t folds = 10;
  std::size_t line_points = 200;
  std::size_t lattice = 30;
  McmcConfig mcmc;
  std::uint64_t seed = 0;
};

struct CvResult {
  std::vector<std::size_t> fold_of;  // per field site
  Eigen::MatrixXd fold_means;        // folds x p posterior means (raw)
  // One line per parameter: line_points values and the fold-averaged CRPS.
  std::vector<Eigen::VectorXd> line_values;
  std::vector<Eigen::VectorXd> line_crps;
  // lattice x lattice over the first two parameters (row: parameter 1).
  Eigen::VectorXd lattice_values_1, lattice_values_2;
  Eigen::MatrixXd lattice_crps;
};

/// Fold assignment: seeded shuffle, then round-robin.
std::vector<std::size_t> assign_folds(std::size_t n, std::size_t folds, std::uint64_t seed);

/// For each fold: calibrate on the other folds, then score surrogate
/// predictions (plus background) at the held-out sites against the observed
/// rate with the Gaussian CRPS, over the parameter lines and lattice.
CvResult cv_crps_grid(const FieldDataset& field, std::shared_ptr<const VecchiaSurrogate> surrogate,
                      const ParameterDomain& domain, const CvConfig& config);
void write_cv_outputs(const CvResult& r, const ParameterDomain& domain, RunDirectory& out);

// ---------------------------------------------------------------------------
// Timing sweeps

enum class SweepAxis { ResponseDimension, RunCount };
std::string to_string(SweepAxis a);
SweepAxis sweep_axis_from_string(const std::string& s);

struct TimingConfig {
  SweepAxis axis = SweepAxis::ResponseDimension;
  std::vector<std::size_t> sizes{200, 500, 1000, 2000, 5000, 10000, 20000};
  std::vector<std::size_t> m_values{25};
  std::size_t repetitions = 5;
  bool include_dense = true;
  std::size_t dense_cap = kDefaultDenseCap;
  double cell_timeout_seconds = 600.0;
  std::size_t fixed_runs = 20;   // response-dimension axis
  std::size_t fixed_grid = 500;  // run-count axis
  int fit_budget = 0;            // 0: fixed hyperparameters, no MLE
  std::uint64_t seed = 0;
};

struct TimingRow {
  std::size_t size = 0;
  std::size_t n_runs = 0;
  std::size_t n_grid = 0;
  std::size_t n_train = 0;
  std::string method;
  std::size_t m = 0;
  std::size_t repetitions = 0;
  double fit_seconds = 0.0;
  double predict_seconds = 0.0;
  double total_seconds = 0.0;
  bool censored = false;
};

std::vector<TimingRow> timing_sweep(const TimingConfig& config);
std::string timing_csv(const std::vector<TimingRow>& rows, SweepAxis axis);

/// Least-squares slope of log(time) on log(size).
double loglog_slope(std::span<const double> sizes, std::span<const double> times);

}  // namespace pinv
