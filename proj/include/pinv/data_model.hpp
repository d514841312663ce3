#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace pinv {

using Vec3 = std::array<double, 3>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Number of leading input columns that hold unit-vector coordinates.
inline constexpr std::size_t kSpatialDims = 3;

/// Unit vector (cos lat cos lon, cos lat sin lon, sin lat). Throws
/// ValidationError when lat is outside [-90, 90] or either angle is not finite.
Vec3 latlon_to_unit(double lat_deg, double lon_deg);

/// Inverse of latlon_to_unit; lon is returned in [0, 360). The input is
/// normalized first so slightly non-unit vectors are accepted.
std::pair<double, double> unit_to_latlon(const Vec3& direction);

struct SpatialLocation {
  Vec3 direction{1.0, 0.0, 0.0};

  static SpatialLocation from_latlon(double lat_deg, double lon_deg);
  // Normalizes; throws on a zero or non-finite vector.
  static SpatialLocation from_vector(const Vec3& v);

  double lat_deg() const { return unit_to_latlon(direction).first; }
  double lon_deg() const { return unit_to_latlon(direction).second; }
};

// Observed counts with exposures and known background rates.
struct FieldDataset {
  std::vector<SpatialLocation> locations;
  std::vector<std::int64_t> counts;
  std::vector<double> exposures;    // seconds, > 0
  std::vector<double> backgrounds;  // ENAs/sec, >= 0
  // Optional continuous observed rates for the Gaussian likelihood; when empty
  // the observed rate is counts / exposures.
  std::vector<double> values;
  std::string label;

  std::size_t size() const { return locations.size(); }
  double observed_rate(std::size_t i) const;
  void validate() const;
  FieldDataset subset(std::span<const std::size_t> indices) const;
};

struct ParameterDomain {
  std::vector<std::string> names;
  std::vector<double> lower;
  std::vector<double> upper;

  std::size_t dim() const { return names.size(); }
  void validate() const;
  bool contains(std::span<const double> u) const;
  double normalize(std::size_t k, double raw) const {
    return (raw - lower[k]) / (upper[k] - lower[k]);
  }
  double denormalize(std::size_t k, double unit) const {
    return lower[k] + unit * (upper[k] - lower[k]);
  }
  std::vector<double> normalize(std::span<const double> raw) const;
  std::vector<double> denormalize(std::span<const double> unit) const;
};

// Design runs crossed with a shared spatial grid.
struct SimulatorCorpus {
  ParameterDomain domain;
  Eigen::MatrixXd designs;  // n_runs x p, raw units
  std::vector<SpatialLocation> grid;
  Eigen::MatrixXd rates;  // n_runs x n_grid

  std::size_t n_runs() const { return static_cast<std::size_t>(designs.rows()); }
  std::size_t n_grid() const { return grid.size(); }
  std::size_t stacked_size() const { return n_runs() * n_grid(); }
  void validate() const;
  // Copy without the listed runs.
  SimulatorCorpus without_runs(std::span<const std::size_t> runs) const;
  SimulatorCorpus select_runs(std::span<const std::size_t> runs) const;
};

// Affine map of one column onto [0, 1].
struct ColumnMap {
  double lower = 0.0;
  double upper = 1.0;
  double apply(double x) const { return (x - lower) / (upper - lower); }
  double invert(double t) const { return lower + t * (upper - lower); }
};

struct StackedDesign {
  RowMatrix inputs;  // n_M x (3 + p), normalized
  Eigen::VectorXd responses;
  std::vector<ColumnMap> normalization;
  std::size_t n_runs = 0;
  std::size_t n_grid = 0;

  std::size_t size() const { return static_cast<std::size_t>(inputs.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(inputs.cols()); }
  // Normalized input row for a unit direction and raw parameters.
  std::vector<double> normalize_input(const Vec3& direction, std::span<const double> u_raw) const;
};

/// Column maps used for a domain: [-1, 1] for the three direction
/// coordinates, then the domain bounds for each parameter.
std::vector<ColumnMap> input_normalization(const ParameterDomain& domain);

/// Flattens a corpus, runs outer and grid inner.
StackedDesign stack(const SimulatorCorpus& corpus);

FieldDataset load_field_csv(const std::filesystem::path& path);
void write_field_csv(const FieldDataset& field, const std::filesystem::path& path);

SimulatorCorpus load_simulator_csv(const std::filesystem::path& path, const ParameterDomain& domain);
void write_simulator_csv(const SimulatorCorpus& corpus, const std::filesystem::path& path);

ParameterDomain load_domain(const std::filesystem::path& path);
void write_domain(const ParameterDomain& domain, const std::filesystem::path& path);

}  // namespace pinv
