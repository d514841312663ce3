#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pinv/data_model.hpp"
#include "pinv/gp_exact.hpp"
#include "pinv/kdtree.hpp"
#include "pinv/kernel.hpp"

namespace pinv {

inline constexpr std::size_t kDefaultConditioningSize = 25;

enum class OrderingMethod { Maximin, Original };

struct Ordering {
  std::vector<std::uint32_t> permutation;  // position -> original row
  OrderingMethod method = OrderingMethod::Original;

  std::size_t size() const { return permutation.size(); }
  bool is_valid() const;
  static Ordering identity(std::size_t n);
};

// Conditioning sets in ordered positions, stored CSR-style. Each set is
// sorted ascending.
struct NeighborSets {
  std::size_t m = 0;
  std::vector<std::uint32_t> offsets{0};
  std::vector<std::uint32_t> indices;

  std::size_t size() const { return offsets.size() - 1; }
  std::span<const std::uint32_t> of(std::size_t i) const {
    return {indices.data() + offsets[i], indices.data() + offsets[i + 1]};
  }
};

/// Coordinates divided by the per-column scales, row-major.
RowMatrix scale_inputs(const RowMatrix& inputs, std::span<const double> scales);

/// Greedy farthest-point ordering under scaled Euclidean distance. The first
/// point is the one nearest the centroid; each following point maximizes its
/// distance to the already selected set. Ties go to the lowest original index.
Ordering maximin_order(const RowMatrix& inputs, std::span<const double> scales);

/// h(i) = the min(m, i) nearest earlier positions (0-based), exact search,
/// ties by lowest position. Inputs are in original row order; the ordering
/// maps positions to rows.
NeighborSets build_neighbors(const RowMatrix& inputs, const Ordering& ordering, std::size_t m,
                             std::span<const double> scales);

/// Vecchia log-likelihood of centered responses: the sum over positions of
/// the exact Gaussian conditional of y_i given y_{h(i)}. Inputs and responses
/// are in original row order.
double vecchia_log_likelihood(const KernelSpec& spec, const RowMatrix& inputs, const Eigen::VectorXd& centered,
                              const Ordering& ordering, const NeighborSets& neighbors);

struct VecchiaFitOptions {
  std::size_t m = kDefaultConditioningSize;
  FitOptions optimizer;        // budget applies per stage
  std::size_t max_fit_rows = 0;  // hyperparameter estimation subsample (0 = all rows)
  std::uint64_t seed = 0;      // subsample selection
};

struct VecchiaFitReport {
  FitReport stage1;
  FitReport stage2;
  bool stage2_kept = true;  // false when stage 2 lowered the training objective
  std::size_t fit_rows = 0;
  double seconds = 0.0;
};

// Fitted Scaled-Vecchia surrogate. Immutable after construction.
class VecchiaSurrogate {
 public:
  /// Builds the maximin ordering, neighbor sets and search tree for the given
  /// hyperparameters; neighbor search uses the kernel lengthscales as scales.
  VecchiaSurrogate(KernelSpec spec, const StackedDesign& data, std::size_t m);

  const KernelSpec& spec() const { return spec_; }
  std::size_t m() const { return m_; }
  std::size_t size() const { return static_cast<std::size_t>(inputs_.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(inputs_.cols()); }
  const Ordering& ordering() const { return ordering_; }
  const NeighborSets& neighbors() const { return neighbors_; }
  double response_mean() const { return mean_; }
  const std::vector<ColumnMap>& normalization() const { return normalization_; }
  std::size_t n_runs() const { return n_runs_; }
  std::size_t n_grid() const { return n_grid_; }
  const std::string& data_hash() const { return data_hash_; }
  // Training data in original stacked order.
  const RowMatrix& inputs() const { return inputs_; }
  const Eigen::VectorXd& responses() const { return responses_; }
  // Training data permuted into maximin order, and its scaled copy.
  const RowMatrix& ordered_inputs() const { return ordered_inputs_; }
  const Eigen::VectorXd& ordered_centered() const { return ordered_centered_; }
  const RowMatrix& ordered_scaled() const { return ordered_scaled_; }
  const std::vector<double>& inverse_scales() const { return inv_scales_; }

  /// Vecchia log-likelihood of the training data at this model's spec.
  double log_likelihood() const;

  /// Conditional mean/variance of the centered y at ordered position i given
  /// its conditioning set, computed from scratch.
  std::pair<double, double> conditional_moments(std::size_t i) const;
  /// Same from the cached local Cholesky factors (built on first use).
  std::pair<double, double> cached_conditional_moments(std::size_t i) const;

  /// Local kriging at a normalized input row given neighbors as ordered
  /// positions sorted by (distance, position). Returns (mean, sd); the sd is
  /// skipped (set to 0) when want_sd is false.
  std::pair<double, double> krige(const double* x, std::span<const std::uint32_t> neighbors, bool want_sd = true) const;

  /// m nearest ordered training positions under the scaled distance,
  /// ascending by (distance, position).
  void nearest(const double* x, std::size_t k, std::vector<Neighbor>& out) const;

  void save(const std::filesystem::path& path) const;
  static VecchiaSurrogate load(const std::filesystem::path& path);

  VecchiaFitReport fit_report;

 private:
  void build_cache() const;

  KernelSpec spec_;
  std::size_t m_;
  RowMatrix inputs_;
  Eigen::VectorXd responses_;
  std::vector<ColumnMap> normalization_;
  std::size_t n_runs_ = 0, n_grid_ = 0;
  double mean_ = 0.0;
  std::string data_hash_;

  Ordering ordering_;
  NeighborSets neighbors_;
  RowMatrix ordered_inputs_;
  Eigen::VectorXd ordered_centered_;
  RowMatrix ordered_scaled_;
  std::vector<double> inv_scales_;
  std::unique_ptr<KdTree> tree_;

  mutable std::vector<double> cache_;  // packed lower factors per position
  mutable std::vector<std::size_t> cache_offsets_;
};

/// Sha256 over the row-major inputs followed by the responses.
std::string training_data_hash(const RowMatrix& inputs, const Eigen::VectorXd& responses);

/// Two-stage Scaled-Vecchia fit: hyperparameters under unit-scale neighbors,
/// then ordering and neighbors rebuilt with the stage-1 lengthscales and
/// refit from there.
VecchiaSurrogate fit_vecchia(const StackedDesign& data, const VecchiaFitOptions& options);

/// Independent local predictions: each row of Xs (normalized inputs)
/// conditions on its m nearest training points.
PredictiveSummary predict_vecchia(const VecchiaSurrogate& model, const RowMatrix& Xs);

/// Predictor for a fixed set of directions with the parameters varying, as
/// inside an MCMC chain. It exploits the runs x grid structure of the
/// training data and returns the same values as predict_vecchia.
class FieldPredictor {
 public:
  FieldPredictor(std::shared_ptr<const VecchiaSurrogate> model, const std::vector<SpatialLocation>& locations);

  std::size_t size() const { return n_loc_; }
  // u_unit: parameters normalized to [0, 1]. Writes predictive means.
  void predict_means(std::span<const double> u_unit, std::span<double> out) const;
  PredictiveSummary predict(std::span<const double> u_unit) const;

 private:
  void predict_impl(std::span<const double> u_unit, std::span<double> means, std::span<double> sds) const;

  std::shared_ptr<const VecchiaSurrogate> model_;
  std::size_t n_loc_ = 0;
  std::size_t p_ = 0;
  RowMatrix loc_normalized_;  // n_loc x 3
  // Per location: candidate grid indices and their spatial partial distances.
  std::vector<std::vector<std::uint32_t>> cand_grid_;
  std::vector<std::vector<double>> cand_dist_;
  Eigen::MatrixXd run_scaled_;              // n_runs x p scaled parameters
  std::vector<std::uint32_t> position_of_;  // run * n_grid + g -> ordered position
};

}  // namespace pinv
