#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

namespace pinv {

// Squared Euclidean distance summed in two blocks (the leading `split`
// columns, then the rest) and added once. Every neighbor search uses this
// exact arithmetic so cached and uncached searches agree bit for bit.
inline double split_sq_dist(const double* a, const double* b, std::size_t d, std::size_t split = 3) {
  double left = 0.0, right = 0.0;
  const std::size_t s = split < d ? split : d;
  for (std::size_t k = 0; k < s; ++k) {
    const double t = a[k] - b[k];
    left += t * t;
  }
  for (std::size_t k = s; k < d; ++k) {
    const double t = a[k] - b[k];
    right += t * t;
  }
  return left + right;
}

using Neighbor = std::pair<double, std::uint32_t>;  // (squared distance, index)

// Exact k-d tree over a row-major point set that must outlive the tree.
// Results order by (distance, index), so ties go to the lowest index.
class KdTree {
 public:
  static constexpr std::size_t kAll = std::numeric_limits<std::size_t>::max();

  KdTree() = default;
  KdTree(std::span<const double> points, std::size_t dim, std::size_t count, std::size_t leaf_size = 16);

  std::size_t size() const { return count_; }
  std::size_t dim() const { return dim_; }

  // k nearest points whose index is < limit, ascending.
  void knn(const double* query, std::size_t k, std::vector<Neighbor>& out, std::size_t limit = kAll) const;
  // All points with squared distance <= r2 (unordered).
  void radius(const double* query, double r2, std::vector<Neighbor>& out) const;

 private:
  struct Node {
    std::uint32_t begin, end;
    std::int32_t left = -1, right = -1;
    std::uint32_t min_index;  // smallest point index below this node
  };
  std::int32_t build(std::uint32_t begin, std::uint32_t end);
  double box_sq_dist(std::size_t node, const double* q) const;
  void knn_rec(std::size_t node, const double* q, std::size_t k, std::size_t limit, std::vector<Neighbor>& heap) const;
  void radius_rec(std::size_t node, const double* q, double r2, std::vector<Neighbor>& out) const;

  const double* points_ = nullptr;
  std::size_t dim_ = 0;
  std::size_t count_ = 0;
  std::size_t leaf_size_ = 16;
  std::vector<std::uint32_t> index_;
  std::vector<Node> nodes_;
  std::vector<double> lo_, hi_;  // per node bounding boxes
};

}  // namespace pinv
