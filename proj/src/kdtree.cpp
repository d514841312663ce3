#include "pinv/kdtree.hpp"

#include <algorithm>
#include <numeric>

namespace pinv {

KdTree::KdTree(std::span<const double> points, std::size_t dim, std::size_t count, std::size_t leaf_size)
    : points_(points.data()), dim_(dim), count_(count), leaf_size_(std::max<std::size_t>(leaf_size, 1)) {
  index_.resize(count);
  std::iota(index_.begin(), index_.end(), 0u);
  nodes_.reserve(2 * count / leaf_size_ + 2);
  if (count > 0) build(0, static_cast<std::uint32_t>(count));
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{begin, end, -1, -1, 0});
  lo_.resize(lo_.size() + dim_);
  hi_.resize(hi_.size() + dim_);
  double* lo = lo_.data() + static_cast<std::size_t>(id) * dim_;
  double* hi = hi_.data() + static_cast<std::size_t>(id) * dim_;
  std::fill(lo, lo + dim_, std::numeric_limits<double>::infinity());
  std::fill(hi, hi + dim_, -std::numeric_limits<double>::infinity());
  std::uint32_t min_index = std::numeric_limits<std::uint32_t>::max();
  for (auto i = begin; i < end; ++i) {
    const double* p = points_ + static_cast<std::size_t>(index_[i]) * dim_;
    for (std::size_t k = 0; k < dim_; ++k) {
      lo[k] = std::min(lo[k], p[k]);
      hi[k] = std::max(hi[k], p[k]);
    }
    min_index = std::min(min_index, index_[i]);
  }
  nodes_[static_cast<std::size_t>(id)].min_index = min_index;
  if (end - begin <= leaf_size_) return id;

  std::size_t axis = 0;
  double widest = -1.0;
  for (std::size_t k = 0; k < dim_; ++k) {
    if (hi[k] - lo[k] > widest) {
      widest = hi[k] - lo[k];
      axis = k;
    }
  }
  if (!(widest > 0.0)) return id;  // all points identical

  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(index_.begin() + begin, index_.begin() + mid, index_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double va = points_[static_cast<std::size_t>(a) * dim_ + axis];
                     const double vb = points_[static_cast<std::size_t>(b) * dim_ + axis];
                     return va < vb || (va == vb && a < b);
                   });
  const auto left = build(begin, mid);
  const auto right = build(mid, end);
  nodes_[static_cast<std::size_t>(id)].left = left;
  nodes_[static_cast<std::size_t>(id)].right = right;
  return id;
}

double KdTree::box_sq_dist(std::size_t node, const double* q) const {
  const double* lo = lo_.data() + node * dim_;
  const double* hi = hi_.data() + node * dim_;
  double s = 0.0;
  for (std::size_t k = 0; k < dim_; ++k) {
    double t = 0.0;
    if (q[k] < lo[k]) t = lo[k] - q[k];
    else if (q[k] > hi[k]) t = q[k] - hi[k];
    s += t * t;
  }
  return s;
}

void KdTree::knn_rec(std::size_t node, const double* q, std::size_t k, std::size_t limit,
                     std::vector<Neighbor>& heap) const {
  const Node& nd = nodes_[node];
  if (nd.min_index >= limit) return;
  if (nd.left < 0) {
    for (auto i = nd.begin; i < nd.end; ++i) {
      const std::uint32_t idx = index_[i];
      if (idx >= limit) continue;
      const Neighbor cand{split_sq_dist(q, points_ + static_cast<std::size_t>(idx) * dim_, dim_), idx};
      if (heap.size() < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end());
      } else if (cand < heap.front()) {
        std::pop_heap(heap.begin(), heap.end());
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end());
      }
    }
    return;
  }
  const auto l = static_cast<std::size_t>(nd.left), r = static_cast<std::size_t>(nd.right);
  const double dl = box_sq_dist(l, q), dr = box_sq_dist(r, q);
  const std::size_t first = dl <= dr ? l : r, second = dl <= dr ? r : l;
  const double dfirst = std::min(dl, dr), dsecond = std::max(dl, dr);
  // The box bound and the split distance round differently; the slack keeps
  // pruning conservative so ties are still resolved by index.
  auto worth = [&](double bound) { return heap.size() < k || bound * (1.0 - 1e-12) <= heap.front().first; };
  if (worth(dfirst)) knn_rec(first, q, k, limit, heap);
  if (worth(dsecond)) knn_rec(second, q, k, limit, heap);
}

void KdTree::knn(const double* query, std::size_t k, std::vector<Neighbor>& out, std::size_t limit) const {
  out.clear();
  if (k == 0 || count_ == 0) return;
  knn_rec(0, query, k, limit, out);
  std::sort_heap(out.begin(), out.end());
}

void KdTree::radius_rec(std::size_t node, const double* q, double r2, std::vector<Neighbor>& out) const {
  if (box_sq_dist(node, q) * (1.0 - 1e-12) > r2) return;
  const Node& nd = nodes_[node];
  if (nd.left < 0) {
    for (auto i = nd.begin; i < nd.end; ++i) {
      const std::uint32_t idx = index_[i];
      const double d = split_sq_dist(q, points_ + static_cast<std::size_t>(idx) * dim_, dim_);
      if (d <= r2) out.emplace_back(d, idx);
    }
    return;
  }
  radius_rec(static_cast<std::size_t>(nd.left), q, r2, out);
  radius_rec(static_cast<std::size_t>(nd.right), q, r2, out);
}

void KdTree::radius(const double* query, double r2, std::vector<Neighbor>& out) const {
  out.clear();
  if (count_ == 0) return;
  radius_rec(0, query, r2, out);
}

}  // namespace pinv
