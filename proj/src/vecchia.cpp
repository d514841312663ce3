#include "pinv/vecchia.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>

#include "json.hpp"

#include "pinv/error.hpp"
#include "pinv/parallel.hpp"
#include "pinv/rng.hpp"
#include "pinv/text_io.hpp"

namespace pinv {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr int kSurrogateFormatVersion = 1;

std::vector<double> inverse_of(std::span<const double> scales) {
  std::vector<double> inv(scales.size());
  for (std::size_t k = 0; k < scales.size(); ++k) {
    if (!(scales[k] > 0.0)) throw ValidationError("neighbor-search scales must be positive");
    inv[k] = 1.0 / scales[k];
  }
  return inv;
}

RowMatrix gather_rows(const RowMatrix& X, std::span<const std::uint32_t> rows) {
  RowMatrix out(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = X.row(rows[i]);
  return out;
}

Eigen::VectorXd gather(const Eigen::VectorXd& y, std::span<const std::uint32_t> rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out(static_cast<Eigen::Index>(i)) = y(rows[i]);
  return out;
}

bool rows_equal(const double* a, const double* b, std::size_t d) {
  for (std::size_t k = 0; k < d; ++k) {
    if (a[k] != b[k]) return false;
  }
  return true;
}

// Local covariance over `count` points (row pointers), packed row-major into
// buf (count x count, lower triangle), then factorized under the jitter
// ladder. Returns the jitter used.
double local_factor(const KernelSpec& spec, const std::vector<double>& inv, const double* const* pts, std::size_t count,
                    std::size_t d, std::vector<double>& base, std::vector<double>& buf) {
  base.resize(count * count);
  for (std::size_t a = 0; a < count; ++a) {
    base[a * count + a] = spec.scale + spec.nugget;
    for (std::size_t b = 0; b < a; ++b) {
      base[a * count + b] = matern52_product(pts[a], pts[b], inv.data(), d, spec.scale);
    }
  }
  if (spec.nugget == 0.0) {
    for (std::size_t a = 0; a < count; ++a) {
      for (std::size_t b = 0; b < a; ++b) {
        if (rows_equal(pts[a], pts[b], d)) {
          throw IllConditionedError("duplicated inputs with zero nugget in a conditioning set", 0.0);
        }
      }
    }
  }
  double last = 0.0;
  for (double jitter : jitter_ladder(spec.scale)) {
    last = jitter;
    buf = base;
    for (std::size_t a = 0; a < count; ++a) buf[a * count + a] += jitter;
    if (cholesky_lower_inplace(buf.data(), count, count)) return jitter;
  }
  throw IllConditionedError("local covariance not positive definite after jitter " + std::to_string(last), last);
}

// Forward solve L z = v for row-major lower L.
void forward_solve(const double* L, std::size_t n, std::size_t lda, const double* v, double* z) {
  for (std::size_t i = 0; i < n; ++i) {
    double s = v[i];
    const double* row = L + i * lda;
    for (std::size_t k = 0; k < i; ++k) s -= row[k] * z[k];
    z[i] = s / row[i];
  }
}

double vecchia_loglik_ordered(const KernelSpec& spec, const RowMatrix& X, const Eigen::VectorXd& y,
                              const NeighborSets& nb) {
  spec.validate();
  const std::size_t n = static_cast<std::size_t>(X.rows());
  const std::size_t d = static_cast<std::size_t>(X.cols());
  if (d != spec.dim()) throw ValidationError("kernel dimension does not match inputs");
  if (nb.size() != n) throw ValidationError("neighbor sets do not match the data size");
  const auto inv = spec.inverse_lengthscales();
  std::vector<double> terms(n);
  parallel_for(n, [&](std::size_t i) {
    thread_local std::vector<const double*> pts;
    thread_local std::vector<double> base, buf, v, z;
    const auto h = nb.of(i);
    const std::size_t q = h.size();
    pts.resize(q + 1);
    v.resize(q + 1);
    z.resize(q + 1);
    for (std::size_t a = 0; a < q; ++a) {
      pts[a] = X.row(h[a]).data();
      v[a] = y(h[a]);
    }
    pts[q] = X.row(static_cast<Eigen::Index>(i)).data();
    v[q] = y(static_cast<Eigen::Index>(i));
    local_factor(spec, inv, pts.data(), q + 1, d, base, buf);
    forward_solve(buf.data(), q + 1, q + 1, v.data(), z.data());
    const double lqq = buf[q * (q + 1) + q];
    terms[i] = -0.5 * kLog2Pi - std::log(lqq) - 0.5 * z[q] * z[q];
  });
  double total = 0.0;
  for (double t : terms) total += t;
  return total;
}

}  // namespace

// ---------------------------------------------------------------------------
// Ordering and neighbors

bool Ordering::is_valid() const {
  std::vector<bool> seen(permutation.size(), false);
  for (auto p : permutation) {
    if (p >= permutation.size() || seen[p]) return false;
    seen[p] = true;
  }
  return true;
}

Ordering Ordering::identity(std::size_t n) {
  Ordering o;
  o.permutation.resize(n);
  std::iota(o.permutation.begin(), o.permutation.end(), 0u);
  o.method = OrderingMethod::Original;
  return o;
}

RowMatrix scale_inputs(const RowMatrix& inputs, std::span<const double> scales) {
  if (static_cast<std::size_t>(inputs.cols()) != scales.size()) throw ValidationError("scales dimension mismatch");
  const auto inv = inverse_of(scales);
  RowMatrix out(inputs.rows(), inputs.cols());
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    for (Eigen::Index k = 0; k < inputs.cols(); ++k) out(i, k) = inputs(i, k) * inv[static_cast<std::size_t>(k)];
  }
  return out;
}

Ordering maximin_order(const RowMatrix& inputs, std::span<const double> scales) {
  const std::size_t n = static_cast<std::size_t>(inputs.rows());
  const std::size_t d = static_cast<std::size_t>(inputs.cols());
  Ordering out;
  out.method = OrderingMethod::Maximin;
  if (n == 0) return out;
  const RowMatrix S = scale_inputs(inputs, scales);

  std::vector<double> centroid(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) centroid[k] += S(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
  }
  for (auto& c : centroid) c /= static_cast<double>(n);
  std::size_t first = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const double dist = split_sq_dist(S.row(static_cast<Eigen::Index>(i)).data(), centroid.data(), d);
    if (dist < best) {
      best = dist;
      first = i;
    }
  }

  // Lazy max-heap on (distance to selected set, then lowest index). Entries
  // go stale when a distance shrinks; they are skipped on pop.
  struct Entry {
    double dist;
    std::uint32_t idx;
    bool operator<(const Entry& o) const { return dist < o.dist || (dist == o.dist && idx > o.idx); }
  };
  std::vector<double> mind(n, std::numeric_limits<double>::infinity());
  std::vector<bool> selected(n, false);
  KdTree tree(std::span<const double>(S.data(), n * d), d, n);
  std::priority_queue<Entry> heap;
  std::vector<Neighbor> hits;

  auto select = [&](std::size_t p, double radius2) {
    selected[p] = true;
    out.permutation.push_back(static_cast<std::uint32_t>(p));
    const double* q = S.row(static_cast<Eigen::Index>(p)).data();
    if (std::isinf(radius2)) {
      for (std::size_t j = 0; j < n; ++j) {
        if (selected[j]) continue;
        mind[j] = split_sq_dist(q, S.row(static_cast<Eigen::Index>(j)).data(), d);
        heap.push({mind[j], static_cast<std::uint32_t>(j)});
      }
      return;
    }
    tree.radius(q, radius2, hits);
    for (const auto& [dist, j] : hits) {
      if (selected[j] || !(dist < mind[j])) continue;
      mind[j] = dist;
      heap.push({dist, j});
    }
  };

  select(first, std::numeric_limits<double>::infinity());
  while (out.permutation.size() < n) {
    const Entry top = heap.top();
    heap.pop();
    if (selected[top.idx] || top.dist != mind[top.idx]) continue;
    select(top.idx, top.dist);
  }
  return out;
}

NeighborSets build_neighbors(const RowMatrix& inputs, const Ordering& ordering, std::size_t m,
                             std::span<const double> scales) {
  if (m == 0) throw ValidationError("conditioning-set size m must be >= 1");
  const std::size_t n = ordering.size();
  if (n != static_cast<std::size_t>(inputs.rows())) throw ValidationError("ordering does not match inputs");
  const std::size_t d = static_cast<std::size_t>(inputs.cols());
  const RowMatrix P = scale_inputs(gather_rows(inputs, ordering.permutation), scales);

  NeighborSets nb;
  nb.m = m;
  nb.offsets.resize(n + 1);
  nb.offsets[0] = 0;
  for (std::size_t i = 0; i < n; ++i) nb.offsets[i + 1] = nb.offsets[i] + static_cast<std::uint32_t>(std::min(m, i));
  nb.indices.resize(nb.offsets[n]);

  // Trees over prefixes [0, 2^j) so at least half of every searched prefix is
  // eligible.
  const std::size_t brute_limit = std::max<std::size_t>(4 * m, 64);
  std::vector<std::unique_ptr<KdTree>> trees;
  for (std::size_t size = 2 * brute_limit; size / 2 < n; size *= 2) {
    const std::size_t count = std::min(size, n);
    trees.push_back(std::make_unique<KdTree>(std::span<const double>(P.data(), count * d), d, count));
  }

  parallel_for(n, [&](std::size_t i) {
    thread_local std::vector<Neighbor> found;
    const std::size_t k = std::min(m, i);
    if (k == 0) return;
    const double* q = P.row(static_cast<Eigen::Index>(i)).data();
    if (i <= brute_limit || k == i) {
      found.resize(i);
      for (std::size_t j = 0; j < i; ++j) {
        found[j] = {split_sq_dist(q, P.row(static_cast<Eigen::Index>(j)).data(), d), static_cast<std::uint32_t>(j)};
      }
      std::partial_sort(found.begin(), found.begin() + static_cast<std::ptrdiff_t>(k), found.end());
      found.resize(k);
    } else {
      std::size_t t = 0, size = 2 * brute_limit;
      while (size < i + 1) {
        size *= 2;
        ++t;
      }
      trees[t]->knn(q, k, found, i);
    }
    auto* dst = nb.indices.data() + nb.offsets[i];
    for (std::size_t a = 0; a < k; ++a) dst[a] = found[a].second;
    std::sort(dst, dst + k);
  });
  return nb;
}

double vecchia_log_likelihood(const KernelSpec& spec, const RowMatrix& inputs, const Eigen::VectorXd& centered,
                              const Ordering& ordering, const NeighborSets& neighbors) {
  if (inputs.rows() != centered.size()) throw ValidationError("vecchia_log_likelihood: size mismatch");
  if (ordering.size() != static_cast<std::size_t>(inputs.rows())) throw ValidationError("ordering size mismatch");
  return vecchia_loglik_ordered(spec, gather_rows(inputs, ordering.permutation), gather(centered, ordering.permutation),
                                neighbors);
}

// ---------------------------------------------------------------------------
// Surrogate

std::string training_data_hash(const RowMatrix& inputs, const Eigen::VectorXd& responses) {
  std::string bytes(reinterpret_cast<const char*>(inputs.data()), static_cast<std::size_t>(inputs.size()) * sizeof(double));
  bytes.append(reinterpret_cast<const char*>(responses.data()), static_cast<std::size_t>(responses.size()) * sizeof(double));
  return sha256_hex(bytes);
}

VecchiaSurrogate::VecchiaSurrogate(KernelSpec spec, const StackedDesign& data, std::size_t m)
    : spec_(std::move(spec)),
      m_(m),
      inputs_(data.inputs),
      responses_(data.responses),
      normalization_(data.normalization),
      n_runs_(data.n_runs),
      n_grid_(data.n_grid) {
  spec_.validate();
  if (m_ == 0) throw ValidationError("conditioning-set size m must be >= 1");
  if (inputs_.rows() == 0 || inputs_.rows() != responses_.size()) throw ValidationError("surrogate needs matching data");
  if (static_cast<std::size_t>(inputs_.cols()) != spec_.dim()) throw ValidationError("kernel dimension mismatch");
  mean_ = responses_.mean();
  data_hash_ = training_data_hash(inputs_, responses_);
  ordering_ = maximin_order(inputs_, spec_.lengthscales);
  neighbors_ = build_neighbors(inputs_, ordering_, m_, spec_.lengthscales);
  ordered_inputs_ = gather_rows(inputs_, ordering_.permutation);
  ordered_centered_ = gather(responses_, ordering_.permutation).array() - mean_;
  ordered_scaled_ = scale_inputs(ordered_inputs_, spec_.lengthscales);
  inv_scales_ = inverse_of(spec_.lengthscales);
  tree_ = std::make_unique<KdTree>(std::span<const double>(ordered_scaled_.data(), static_cast<std::size_t>(ordered_scaled_.size())),
                                   dim(), size());
}

double VecchiaSurrogate::log_likelihood() const {
  return vecchia_loglik_ordered(spec_, ordered_inputs_, ordered_centered_, neighbors_);
}

std::pair<double, double> VecchiaSurrogate::conditional_moments(std::size_t i) const {
  const auto h = neighbors_.of(i);
  const std::size_t q = h.size();
  const auto inv = spec_.inverse_lengthscales();
  std::vector<const double*> pts(q + 1);
  std::vector<double> base, buf, v(q), z(q);
  for (std::size_t a = 0; a < q; ++a) {
    pts[a] = ordered_inputs_.row(h[a]).data();
    v[a] = ordered_centered_(h[a]);
  }
  pts[q] = ordered_inputs_.row(static_cast<Eigen::Index>(i)).data();
  local_factor(spec_, inv, pts.data(), q + 1, dim(), base, buf);
  const std::size_t lda = q + 1;
  forward_solve(buf.data(), q, lda, v.data(), z.data());
  const double* last = buf.data() + q * lda;
  double mean = 0.0;
  for (std::size_t a = 0; a < q; ++a) mean += last[a] * z[a];
  return {mean, last[q] * last[q]};
}

void VecchiaSurrogate::build_cache() const {
  if (!cache_offsets_.empty()) return;
  const std::size_t n = size();
  std::vector<std::size_t> offsets(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t s = neighbors_.of(i).size() + 1;
    offsets[i + 1] = offsets[i] + s * s;
  }
  std::vector<double> cache(offsets[n]);
  const auto inv = spec_.inverse_lengthscales();
  parallel_for(n, [&](std::size_t i) {
    thread_local std::vector<const double*> pts;
    thread_local std::vector<double> base, buf;
    const auto h = neighbors_.of(i);
    pts.resize(h.size() + 1);
    for (std::size_t a = 0; a < h.size(); ++a) pts[a] = ordered_inputs_.row(h[a]).data();
    pts[h.size()] = ordered_inputs_.row(static_cast<Eigen::Index>(i)).data();
    local_factor(spec_, inv, pts.data(), h.size() + 1, dim(), base, buf);
    std::copy(buf.begin(), buf.end(), cache.begin() + static_cast<std::ptrdiff_t>(offsets[i]));
  });
  cache_ = std::move(cache);
  cache_offsets_ = std::move(offsets);
}

std::pair<double, double> VecchiaSurrogate::cached_conditional_moments(std::size_t i) const {
  build_cache();
  const auto h = neighbors_.of(i);
  const std::size_t q = h.size(), lda = q + 1;
  const double* L = cache_.data() + cache_offsets_[i];
  std::vector<double> v(q), z(q);
  for (std::size_t a = 0; a < q; ++a) v[a] = ordered_centered_(h[a]);
  forward_solve(L, q, lda, v.data(), z.data());
  const double* last = L + q * lda;
  double mean = 0.0;
  for (std::size_t a = 0; a < q; ++a) mean += last[a] * z[a];
  return {mean, last[q] * last[q]};
}

void VecchiaSurrogate::nearest(const double* x, std::size_t k, std::vector<Neighbor>& out) const {
  thread_local std::vector<double> q;
  q.resize(dim());
  for (std::size_t c = 0; c < dim(); ++c) q[c] = x[c] * inv_scales_[c];
  tree_->knn(q.data(), std::min(k, size()), out);
}

std::pair<double, double> VecchiaSurrogate::krige(const double* x, std::span<const std::uint32_t> nbrs, bool want_sd) const {
  thread_local std::vector<const double*> pts;
  thread_local std::vector<double> base, buf, kstar, v, z, w;
  thread_local std::vector<double> inv;
  inv = spec_.inverse_lengthscales();
  const std::size_t q = nbrs.size(), d = dim();
  pts.resize(q);
  v.resize(q);
  z.resize(q);
  kstar.resize(q);
  w.resize(q);
  for (std::size_t a = 0; a < q; ++a) {
    pts[a] = ordered_inputs_.row(nbrs[a]).data();
    v[a] = ordered_centered_(nbrs[a]);
    kstar[a] = matern52_product(x, pts[a], inv.data(), d, spec_.scale);
  }
  local_factor(spec_, inv, pts.data(), q, d, base, buf);
  forward_solve(buf.data(), q, q, v.data(), z.data());
  forward_solve(buf.data(), q, q, kstar.data(), w.data());
  double mean = 0.0, explained = 0.0;
  for (std::size_t a = 0; a < q; ++a) {
    mean += w[a] * z[a];
    explained += w[a] * w[a];
  }
  double sd = 0.0;
  if (want_sd) sd = std::sqrt(std::max(0.0, spec_.scale + spec_.nugget - explained));
  return {mean_ + mean, sd};
}

void VecchiaSurrogate::save(const std::filesystem::path& path) const {
  nlohmann::json norm = nlohmann::json::array();
  for (const auto& c : normalization_) norm.push_back({{"lower", c.lower}, {"upper", c.upper}});
  std::vector<double> flat(inputs_.data(), inputs_.data() + inputs_.size());
  std::vector<double> resp(responses_.data(), responses_.data() + responses_.size());
  nlohmann::json j{
      {"format", "pinv-vecchia-surrogate"},
      {"version", kSurrogateFormatVersion},
      {"kernel", to_json(spec_)},
      {"m", m_},
      {"ordering", {{"method", ordering_.method == OrderingMethod::Maximin ? "maximin" : "original"},
                    {"permutation", ordering_.permutation}}},
      {"normalization", norm},
      {"n_runs", n_runs_},
      {"n_grid", n_grid_},
      {"data_hash", data_hash_},
      {"training", {{"rows", inputs_.rows()}, {"cols", inputs_.cols()}, {"inputs", flat}, {"responses", resp}}},
      {"fit", {{"stage1_loglik", fit_report.stage1.log_likelihood},
               {"stage2_loglik", fit_report.stage2.log_likelihood},
               {"stage2_kept", fit_report.stage2_kept},
               {"fit_rows", fit_report.fit_rows},
               {"evaluations", fit_report.stage1.evaluations + fit_report.stage2.evaluations}}},
  };
  write_text_file(path, j.dump() + "\n");
}

VecchiaSurrogate VecchiaSurrogate::load(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  try {
    if (j.at("format") != "pinv-vecchia-surrogate") throw ValidationError(path.string() + ": not a surrogate file");
    const int version = j.at("version").get<int>();
    if (version != kSurrogateFormatVersion) {
      throw ValidationError(path.string() + ": unsupported surrogate version " + std::to_string(version));
    }
    StackedDesign data;
    const auto rows = j.at("training").at("rows").get<Eigen::Index>();
    const auto cols = j.at("training").at("cols").get<Eigen::Index>();
    const auto flat = j.at("training").at("inputs").get<std::vector<double>>();
    const auto resp = j.at("training").at("responses").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(flat.size()) != rows * cols || static_cast<Eigen::Index>(resp.size()) != rows) {
      throw ValidationError(path.string() + ": training block has inconsistent sizes");
    }
    data.inputs = Eigen::Map<const RowMatrix>(flat.data(), rows, cols);
    data.responses = Eigen::Map<const Eigen::VectorXd>(resp.data(), rows);
    for (const auto& c : j.at("normalization")) data.normalization.push_back({c.at("lower").get<double>(), c.at("upper").get<double>()});
    data.n_runs = j.at("n_runs").get<std::size_t>();
    data.n_grid = j.at("n_grid").get<std::size_t>();
    if (training_data_hash(data.inputs, data.responses) != j.at("data_hash").get<std::string>()) {
      throw ValidationError(path.string() + ": training data hash mismatch");
    }
    VecchiaSurrogate model(kernel_from_json(j.at("kernel")), data, j.at("m").get<std::size_t>());
    if (model.ordering().permutation != j.at("ordering").at("permutation").get<std::vector<std::uint32_t>>()) {
      throw ValidationError(path.string() + ": stored ordering does not match the rebuilt ordering");
    }
    if (j.contains("fit")) {
      const auto& f = j.at("fit");
      model.fit_report.stage1.log_likelihood = f.at("stage1_loglik").get<double>();
      model.fit_report.stage2.log_likelihood = f.at("stage2_loglik").get<double>();
      model.fit_report.stage2_kept = f.at("stage2_kept").get<bool>();
      model.fit_report.fit_rows = f.at("fit_rows").get<std::size_t>();
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Fitting and prediction

VecchiaSurrogate fit_vecchia(const StackedDesign& data, const VecchiaFitOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = data.size();
  if (n < 2) throw ValidationError("fit_vecchia needs at least two training rows");
  if (options.m == 0) throw ValidationError("conditioning-set size m must be >= 1");

  std::vector<std::uint32_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0u);
  if (options.max_fit_rows > 0 && options.max_fit_rows < n) {
    Rng rng(derive_seed(options.seed, "vecchia-fit-subsample"));
    // Partial Fisher-Yates with the portable uniform draw.
    for (std::size_t i = 0; i < options.max_fit_rows; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n - i));
      std::swap(rows[i], rows[std::min(j, n - 1)]);
    }
    rows.resize(options.max_fit_rows);
    std::sort(rows.begin(), rows.end());
  }
  const RowMatrix X = gather_rows(data.inputs, rows);
  const Eigen::VectorXd y = gather(data.responses, rows);
  const Eigen::VectorXd centered = y.array() - y.mean();
  const double var = sample_variance(y);
  const std::size_t d = data.dim();

  auto run_stage = [&](std::span<const double> scales, const KernelSpec& init) {
    const Ordering ord = maximin_order(X, scales);
    const NeighborSets nb = build_neighbors(X, ord, options.m, scales);
    const RowMatrix Xo = gather_rows(X, ord.permutation);
    const Eigen::VectorXd yo = gather(centered, ord.permutation);
    return maximize_log_likelihood([&](const KernelSpec& s) { return vecchia_loglik_ordered(s, Xo, yo, nb); }, init,
                                   var, options.optimizer);
  };

  const std::vector<double> unit(d, 1.0);
  VecchiaFitReport report;
  report.fit_rows = rows.size();
  report.stage1 = run_stage(unit, default_initial_spec(d, var));
  report.stage2 = run_stage(report.stage1.spec.lengthscales, report.stage1.spec);
  report.stage2_kept = report.stage2.log_likelihood >= report.stage1.log_likelihood - 1e-6;
  const KernelSpec& chosen = report.stage2_kept ? report.stage2.spec : report.stage1.spec;

  VecchiaSurrogate model(chosen, data, options.m);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  model.fit_report = report;
  return model;
}

PredictiveSummary predict_vecchia(const VecchiaSurrogate& model, const RowMatrix& Xs) {
  if (static_cast<std::size_t>(Xs.cols()) != model.dim()) throw ValidationError("prediction inputs have the wrong width");
  const std::size_t n = static_cast<std::size_t>(Xs.rows());
  PredictiveSummary out;
  out.means.resize(n);
  out.sds.resize(n);
  parallel_for(n, [&](std::size_t i) {
    thread_local std::vector<Neighbor> found;
    thread_local std::vector<std::uint32_t> idx;
    const double* x = Xs.row(static_cast<Eigen::Index>(i)).data();
    model.nearest(x, model.m(), found);
    idx.resize(found.size());
    for (std::size_t a = 0; a < found.size(); ++a) idx[a] = found[a].second;
    const auto [mean, sd] = model.krige(x, idx, true);
    out.means[i] = mean;
    out.sds[i] = sd;
  });
  return out;
}

// ---------------------------------------------------------------------------
// FieldPredictor

FieldPredictor::FieldPredictor(std::shared_ptr<const VecchiaSurrogate> model, const std::vector<SpatialLocation>& locations)
    : model_(std::move(model)), n_loc_(locations.size()) {
  const auto& M = *model_;
  if (M.dim() <= kSpatialDims) throw ValidationError("surrogate has no parameter columns");
  p_ = M.dim() - kSpatialDims;
  const std::size_t runs = M.n_runs(), ng = M.n_grid();
  if (runs * ng != M.size()) throw ValidationError("surrogate training data is not a runs x grid stack");
  const auto& inv = M.inverse_scales();
  const auto& S = M.ordered_scaled();

  position_of_.assign(runs * ng, 0);
  for (std::size_t pos = 0; pos < M.size(); ++pos) position_of_[M.ordering().permutation[pos]] = static_cast<std::uint32_t>(pos);

  // Scaled coordinates are read back from the surrogate so the distances use
  // the very same doubles as the tree search.
  RowMatrix grid_scaled(static_cast<Eigen::Index>(ng), static_cast<Eigen::Index>(kSpatialDims));
  for (std::size_t g = 0; g < ng; ++g) {
    const auto pos = position_of_[g];  // run 0
    for (std::size_t k = 0; k < kSpatialDims; ++k) grid_scaled(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(k)) = S(pos, static_cast<Eigen::Index>(k));
  }
  run_scaled_.resize(static_cast<Eigen::Index>(runs), static_cast<Eigen::Index>(p_));
  for (std::size_t r = 0; r < runs; ++r) {
    const auto pos = position_of_[r * ng];
    for (std::size_t k = 0; k < p_; ++k) run_scaled_(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = S(pos, static_cast<Eigen::Index>(kSpatialDims + k));
  }

  loc_normalized_.resize(static_cast<Eigen::Index>(n_loc_), static_cast<Eigen::Index>(kSpatialDims));
  cand_grid_.resize(n_loc_);
  cand_dist_.resize(n_loc_);
  const std::size_t keep = std::min(M.m(), ng);
  std::vector<std::pair<double, std::uint32_t>> all(ng);
  for (std::size_t f = 0; f < n_loc_; ++f) {
    double qs[kSpatialDims];
    for (std::size_t k = 0; k < kSpatialDims; ++k) {
      loc_normalized_(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(k)) = M.normalization()[k].apply(locations[f].direction[k]);
      qs[k] = loc_normalized_(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(k)) * inv[k];
    }
    for (std::size_t g = 0; g < ng; ++g) {
      double left = 0.0;
      for (std::size_t k = 0; k < kSpatialDims; ++k) {
        const double t = qs[k] - grid_scaled(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(k));
        left += t * t;
      }
      all[g] = {left, static_cast<std::uint32_t>(g)};
    }
    // Within one run only the `keep` spatially closest grid points (plus ties
    // at the boundary) can enter the overall m nearest.
    std::nth_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep - 1), all.end());
    const double threshold = all[keep - 1].first;
    for (const auto& [dist, g] : all) {
      if (dist <= threshold) {
        cand_grid_[f].push_back(g);
        cand_dist_[f].push_back(dist);
      }
    }
  }
}

void FieldPredictor::predict_impl(std::span<const double> u_unit, std::span<double> means, std::span<double> sds) const {
  if (u_unit.size() != p_) throw ValidationError("parameter vector has the wrong length");
  const auto& M = *model_;
  const auto& inv = M.inverse_scales();
  const std::size_t runs = M.n_runs(), ng = M.n_grid();
  std::vector<double> us(p_);
  for (std::size_t k = 0; k < p_; ++k) us[k] = u_unit[k] * inv[kSpatialDims + k];
  std::vector<double> run_dist(runs);
  for (std::size_t r = 0; r < runs; ++r) {
    double right = 0.0;
    for (std::size_t k = 0; k < p_; ++k) {
      const double t = us[k] - run_scaled_(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k));
      right += t * t;
    }
    run_dist[r] = right;
  }
  const std::size_t k_nn = std::min(M.m(), M.size());
  const bool want_sd = !sds.empty();
  parallel_for(n_loc_, [&](std::size_t f) {
    thread_local std::vector<Neighbor> cand;
    thread_local std::vector<std::uint32_t> idx;
    thread_local std::vector<double> x;
    const auto& grid = cand_grid_[f];
    const auto& gd = cand_dist_[f];
    cand.clear();
    for (std::size_t r = 0; r < runs; ++r) {
      for (std::size_t c = 0; c < grid.size(); ++c) {
        cand.emplace_back(gd[c] + run_dist[r], position_of_[r * ng + grid[c]]);
      }
    }
    const std::size_t k = std::min(k_nn, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    idx.resize(k);
    for (std::size_t a = 0; a < k; ++a) idx[a] = cand[a].second;
    x.resize(kSpatialDims + p_);
    for (std::size_t c = 0; c < kSpatialDims; ++c) x[c] = loc_normalized_(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(c));
    for (std::size_t c = 0; c < p_; ++c) x[kSpatialDims + c] = u_unit[c];
    const auto [mean, sd] = M.krige(x.data(), idx, want_sd);
    means[f] = mean;
    if (want_sd) sds[f] = sd;
  });
}

void FieldPredictor::predict_means(std::span<const double> u_unit, std::span<double> out) const {
  if (out.size() != n_loc_) throw ValidationError("output span has the wrong length");
  predict_impl(u_unit, out, {});
}

PredictiveSummary FieldPredictor::predict(std::span<const double> u_unit) const {
  PredictiveSummary s;
  s.means.resize(n_loc_);
  s.sds.resize(n_loc_);
  predict_impl(u_unit, s.means, s.sds);
  return s;
}

}  // namespace pinv
