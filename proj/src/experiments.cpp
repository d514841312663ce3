#include "pinv/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "pinv/error.hpp"
#include "pinv/gp_exact.hpp"
#include "pinv/rng.hpp"
#include "pinv/text_io.hpp"

namespace pinv {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string join_doubles(std::span<const double> v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += format_double(v[i]);
  }
  return s;
}

// Seeded Fisher-Yates using the portable uniform draw.
void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = std::min(i - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i)));
    std::swap(v[i - 1], v[j]);
  }
}

std::vector<std::size_t> sample_sites(std::size_t n_grid, std::size_t n_field, std::uint64_t seed) {
  std::vector<std::size_t> all(n_grid);
  std::iota(all.begin(), all.end(), 0);
  if (n_field == 0 || n_field >= n_grid) return all;
  Rng rng(seed);
  shuffle(all, rng);
  all.resize(n_field);
  std::sort(all.begin(), all.end());
  return all;
}

double crps_or_abs(double mean, double sd, double obs) {
  return sd > 0.0 ? crps_gaussian(mean, sd, obs) : std::abs(obs - mean);
}

std::vector<double> row_of(const Eigen::MatrixXd& M, std::size_t r) {
  std::vector<double> v(static_cast<std::size_t>(M.cols()));
  for (Eigen::Index k = 0; k < M.cols(); ++k) v[static_cast<std::size_t>(k)] = M(static_cast<Eigen::Index>(r), k);
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// RunDirectory

RunDirectory::RunDirectory(std::filesystem::path root) : root_(std::move(root)) {
  std::filesystem::create_directories(root_);
}

void RunDirectory::write(const std::string& name, const std::string& text) {
  write_text_file(root_ / name, text);
  add(name);
}

void RunDirectory::write_json(const std::string& name, const nlohmann::json& j) { write(name, j.dump(2) + "\n"); }

void RunDirectory::add(const std::string& name) {
  if (std::find(files_.begin(), files_.end(), name) == files_.end()) files_.push_back(name);
}

void RunDirectory::finalize() {
  auto names = files_;
  std::sort(names.begin(), names.end());
  std::string text;
  for (const auto& n : names) text += sha256_file(root_ / n) + "  " + n + "\n";
  write_text_file(root_ / "MANIFEST", text);
}

// ---------------------------------------------------------------------------
// Toy problem

double ToyProblem::mean(std::span<const double> u, double x) {
  const double s = std::sin(2.0 * std::numbers::pi * (x - u[0]));
  return 1.0 + 20.0 * std::exp(-u[1] * x) * s * s;
}

SpatialLocation ToyProblem::location(double x) {
  const double a = std::numbers::pi * x;
  return SpatialLocation::from_vector({std::cos(a), std::sin(a), 0.0});
}

ParameterDomain ToyProblem::domain() { return {{"u1", "u2"}, {0.0, 0.0}, {1.0, 1.0}}; }

ToyProblem ToyProblem::standard(std::size_t n_field, double exposure) {
  ToyProblem t;
  for (std::size_t i = 0; i < n_field; ++i) t.field_x.push_back((static_cast<double>(i) + 0.5) / static_cast<double>(n_field));
  t.exposures.assign(n_field, exposure);
  return t;
}

SimulatorCorpus ToyProblem::corpus(std::size_t levels, std::size_t n_grid) {
  if (levels < 2 || n_grid < 2) throw ValidationError("toy corpus needs >= 2 levels and grid points");
  SimulatorCorpus c;
  c.domain = domain();
  c.designs.resize(static_cast<Eigen::Index>(levels * levels), 2);
  for (std::size_t a = 0; a < levels; ++a) {
    for (std::size_t b = 0; b < levels; ++b) {
      c.designs(static_cast<Eigen::Index>(a * levels + b), 0) = static_cast<double>(a) / static_cast<double>(levels - 1);
      c.designs(static_cast<Eigen::Index>(a * levels + b), 1) = static_cast<double>(b) / static_cast<double>(levels - 1);
    }
  }
  std::vector<double> xs(n_grid);
  for (std::size_t j = 0; j < n_grid; ++j) {
    xs[j] = static_cast<double>(j) / static_cast<double>(n_grid - 1);
    c.grid.push_back(location(xs[j]));
  }
  c.rates.resize(c.designs.rows(), static_cast<Eigen::Index>(n_grid));
  for (Eigen::Index r = 0; r < c.designs.rows(); ++r) {
    const double u[2] = {c.designs(r, 0), c.designs(r, 1)};
    for (std::size_t j = 0; j < n_grid; ++j) c.rates(r, static_cast<Eigen::Index>(j)) = mean(u, xs[j]);
  }
  return c;
}

std::vector<SpatialLocation> ToyProblem::locations() const {
  std::vector<SpatialLocation> out;
  for (double x : field_x) out.push_back(location(x));
  return out;
}

std::vector<double> ToyProblem::rates(std::span<const double> u) const {
  std::vector<double> out;
  for (double x : field_x) out.push_back(mean(u, x));
  return out;
}

// ---------------------------------------------------------------------------
// Sky-map testbed

ParameterDomain skymap_domain() { return {{"mfp", "ratio"}, {500.0, 0.001}, {3000.0, 0.1}}; }

double skymap_rate(const Vec3& d, std::span<const double> u_raw) {
  static const Vec3 nose = latlon_to_unit(5.0, 255.0);
  static const Vec3 centre = latlon_to_unit(35.0, 221.0);
  const auto dom = skymap_domain();
  const double a = dom.normalize(0, u_raw[0]);
  const double b = dom.normalize(1, u_raw[1]);
  const double gdf = 0.10 + 0.03 * (1.0 + d[0] * nose[0] + d[1] * nose[1] + d[2] * nose[2]);
  const double c = std::clamp(d[0] * centre[0] + d[1] * centre[1] + d[2] * centre[2], -1.0, 1.0);
  const double angle = std::acos(c) * 180.0 / std::numbers::pi;
  const double radius = 68.0 + 12.0 * a;
  const double width = 10.0 + 8.0 * b;
  const double amplitude = 0.12 + 0.20 * b + 0.04 * a;
  const double z = (angle - radius) / width;
  return gdf + amplitude * std::exp(-0.5 * z * z);
}

std::vector<SpatialLocation> fibonacci_grid(std::size_t n) {
  std::vector<SpatialLocation> out;
  out.reserve(n);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < n; ++i) {
    const double z = 1.0 - (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(n);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * static_cast<double>(i);
    out.push_back(SpatialLocation::from_vector({r * std::cos(phi), r * std::sin(phi), z}));
  }
  return out;
}

namespace {

SimulatorCorpus skymap_from_designs(Eigen::MatrixXd designs, std::size_t n_grid) {
  SimulatorCorpus c;
  c.domain = skymap_domain();
  c.designs = std::move(designs);
  c.grid = fibonacci_grid(n_grid);
  c.rates.resize(c.designs.rows(), static_cast<Eigen::Index>(n_grid));
  for (Eigen::Index r = 0; r < c.designs.rows(); ++r) {
    const double u[2] = {c.designs(r, 0), c.designs(r, 1)};
    for (std::size_t g = 0; g < n_grid; ++g) c.rates(r, static_cast<Eigen::Index>(g)) = skymap_rate(c.grid[g].direction, u);
  }
  c.validate();
  return c;
}

}  // namespace

SimulatorCorpus skymap_corpus(const SkyMapSpec& spec) {
  if (spec.mfp_levels < 2 || spec.ratio_levels < 2 || spec.n_grid < 1) throw ValidationError("sky-map lattice too small");
  const auto dom = skymap_domain();
  Eigen::MatrixXd designs(static_cast<Eigen::Index>(spec.mfp_levels * spec.ratio_levels), 2);
  for (std::size_t a = 0; a < spec.mfp_levels; ++a) {
    for (std::size_t b = 0; b < spec.ratio_levels; ++b) {
      const auto r = static_cast<Eigen::Index>(a * spec.ratio_levels + b);
      designs(r, 0) = dom.denormalize(0, static_cast<double>(a) / static_cast<double>(spec.mfp_levels - 1));
      designs(r, 1) = dom.denormalize(1, static_cast<double>(b) / static_cast<double>(spec.ratio_levels - 1));
    }
  }
  return skymap_from_designs(std::move(designs), spec.n_grid);
}

SimulatorCorpus skymap_random_corpus(std::size_t n_runs, std::size_t n_grid, std::uint64_t seed) {
  const auto dom = skymap_domain();
  Rng rng(derive_seed(seed, "skymap-design"));
  Eigen::MatrixXd designs(static_cast<Eigen::Index>(n_runs), 2);
  for (std::size_t r = 0; r < n_runs; ++r) {
    for (std::size_t k = 0; k < 2; ++k) designs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = dom.denormalize(k, uniform01(rng));
  }
  return skymap_from_designs(std::move(designs), n_grid);
}

std::vector<std::size_t> interior_runs(const SimulatorCorpus& corpus) {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < corpus.n_runs(); ++r) {
    bool inside = true;
    for (std::size_t k = 0; k < corpus.domain.dim(); ++k) {
      const double v = corpus.designs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k));
      inside = inside && v > corpus.domain.lower[k] && v < corpus.domain.upper[k];
    }
    if (inside) out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic field data

FieldDataset synth_generate(const std::vector<SpatialLocation>& locations, std::span<const double> true_rates,
                            std::span<const double> exposures, std::span<const double> backgrounds,
                            std::uint64_t seed, double delta) {
  const std::size_t n = locations.size();
  if (true_rates.size() != n || exposures.size() != n || backgrounds.size() != n) {
    throw ValidationError("synth_generate: input lengths differ");
  }
  if (!(delta > 0.0)) throw ValidationError("synth_generate: delta must be > 0");
  Rng rng(derive_seed(seed, "synth"));
  FieldDataset f;
  f.locations = locations;
  f.exposures.assign(exposures.begin(), exposures.end());
  f.backgrounds.assign(backgrounds.begin(), backgrounds.end());
  f.counts.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double mean = (true_rates[i] * delta + backgrounds[i]) * exposures[i];
    if (!(mean >= 0.0) || !std::isfinite(mean)) throw ValidationError("synth_generate: invalid Poisson mean");
    f.counts[i] = mean > 0.0 ? std::poisson_distribution<std::int64_t>(mean)(rng) : 0;
  }
  f.label = "synthetic seed=" + std::to_string(seed) + " delta=" + format_double(delta);
  f.validate();
  return f;
}

FieldDataset synth_generate(const SimulatorCorpus& corpus, std::span<const double> u_star,
                            std::span<const std::size_t> grid_indices, std::span<const double> exposures,
                            std::span<const double> backgrounds, std::uint64_t seed, double delta) {
  if (u_star.size() != corpus.domain.dim()) throw ValidationError("u* has the wrong length");
  std::size_t run = corpus.n_runs();
  for (std::size_t r = 0; r < corpus.n_runs() && run == corpus.n_runs(); ++r) {
    bool same = true;
    for (std::size_t k = 0; k < u_star.size(); ++k) same = same && corpus.designs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) == u_star[k];
    if (same) run = r;
  }
  if (run == corpus.n_runs()) throw ValidationError("u* is not a design row of the corpus");
  std::vector<SpatialLocation> locs;
  std::vector<double> rates;
  for (auto g : grid_indices) {
    if (g >= corpus.n_grid()) throw ValidationError("grid index out of range");
    locs.push_back(corpus.grid[g]);
    rates.push_back(corpus.rates(static_cast<Eigen::Index>(run), static_cast<Eigen::Index>(g)));
  }
  auto f = synth_generate(locs, rates, exposures, backgrounds, seed, delta);
  f.label += " u*=" + join_doubles(u_star);
  return f;
}

std::vector<double> make_exposures(std::size_t n, const ExposureSchedule& s, std::uint64_t seed) {
  if (!(s.exposure > 0.0) || !(s.spread >= 0.0 && s.spread < 1.0)) throw ValidationError("invalid exposure schedule");
  Rng rng(derive_seed(seed, "exposure"));
  std::vector<double> e(n);
  for (auto& v : e) v = s.exposure * (1.0 - s.spread + 2.0 * s.spread * uniform01(rng));
  return e;
}

// ---------------------------------------------------------------------------
// Surrogate settings

VecchiaFitOptions SurrogateConfig::fit_options(std::uint64_t seed) const {
  VecchiaFitOptions o;
  o.m = m;
  o.optimizer.budget = budget;
  o.optimizer.restarts = restarts;
  o.max_fit_rows = max_fit_rows;
  o.seed = seed;
  return o;
}

nlohmann::json SurrogateConfig::to_json() const {
  return {{"m", m}, {"budget", budget}, {"restarts", restarts}, {"max_fit_rows", max_fit_rows}, {"dense_cap", dense_cap}};
}

SurrogateConfig SurrogateConfig::from_json(const nlohmann::json& j) {
  SurrogateConfig c;
  c.m = j.value("m", c.m);
  c.budget = j.value("budget", c.budget);
  c.restarts = j.value("restarts", c.restarts);
  c.max_fit_rows = j.value("max_fit_rows", c.max_fit_rows);
  c.dense_cap = j.value("dense_cap", c.dense_cap);
  if (c.m < 1) throw ValidationError("surrogate.m must be >= 1");
  if (c.budget < 1) throw ValidationError("surrogate.budget must be >= 1");
  if (c.restarts < 0) throw ValidationError("surrogate.restarts must be >= 0");
  return c;
}

// ---------------------------------------------------------------------------
// Recovery grid

RecoveryReport run_recovery_grid(const SimulatorCorpus& corpus, std::span<const std::size_t> truth_runs,
                                 const RecoveryConfig& config, RunDirectory* out) {
  if (truth_runs.empty()) throw ValidationError("recovery grid needs at least one truth");
  corpus.validate();
  const std::size_t p = corpus.domain.dim();
  const bool with_delta = !config.deltas.empty();
  const std::size_t n_cases = with_delta ? config.deltas.size() : truth_runs.size();
  RecoveryReport report;
  std::vector<CoverageReplicate> reps;
  std::size_t delta_hits = 0;

  for (std::size_t i = 0; i < n_cases; ++i) {
    RecoveryCase rc;
    rc.index = i;
    rc.run = truth_runs[i % truth_runs.size()];
    if (rc.run >= corpus.n_runs()) throw ValidationError("truth run index out of range");
    rc.truth = row_of(corpus.designs, rc.run);
    rc.delta_true = with_delta ? config.deltas[i] : 1.0;

    const std::size_t drop[1] = {rc.run};
    const SimulatorCorpus train = corpus.without_runs(drop);
    // The truth run's responses must not appear in the training data.
    const Eigen::VectorXd truth_rates = corpus.rates.row(static_cast<Eigen::Index>(rc.run)).transpose();
    const std::string truth_hash = sha256_doubles({truth_rates.data(), static_cast<std::size_t>(truth_rates.size())});
    for (std::size_t r = 0; r < train.n_runs(); ++r) {
      const Eigen::VectorXd row = train.rates.row(static_cast<Eigen::Index>(r)).transpose();
      if (sha256_doubles({row.data(), static_cast<std::size_t>(row.size())}) == truth_hash) {
        throw ValidationError("truth run responses found in the training corpus");
      }
    }
    const StackedDesign data = stack(train);
    rc.training_hash = training_data_hash(data.inputs, data.responses);
    auto model = std::make_shared<const VecchiaSurrogate>(
        fit_vecchia(data, config.surrogate.fit_options(derive_seed(config.seed, "fit", i))));
    rc.spec = model->spec();

    const auto sites = sample_sites(corpus.n_grid(), config.n_field, derive_seed(config.seed, "sites", i));
    const auto exposures = make_exposures(sites.size(), config.schedule, derive_seed(config.seed, "exposures", i));
    const std::vector<double> backgrounds(sites.size(), config.schedule.background);
    CalibrationProblem problem;
    problem.field = synth_generate(corpus, rc.truth, sites, exposures, backgrounds, derive_seed(config.seed, "synth", i),
                                   rc.delta_true);
    problem.surrogate = std::make_shared<VecchiaRateModel>(model, problem.field.locations);
    problem.domain = corpus.domain;
    problem.discrepancy = with_delta ? DiscrepancyMode::Multiplicative : DiscrepancyMode::Off;
    McmcConfig mc = config.mcmc;
    mc.seed = derive_seed(config.seed, "chain", i);
    const PosteriorSamples s = metropolis_calibrate(problem, mc);

    rc.posterior_mean = s.posterior_mean();
    rc.hpd = s.hpd(config.mass);
    rc.covered = true;
    for (std::size_t k = 0; k < p; ++k) rc.covered = rc.covered && rc.hpd[k].contains(rc.truth[k]);
    rc.acceptance = s.acceptance_u;
    if (with_delta) {
      rc.delta_mean = std::accumulate(s.delta.begin(), s.delta.end(), 0.0) / static_cast<double>(s.delta.size());
      rc.delta_hpd = s.delta_hpd(config.mass);
      rc.delta_covered = rc.delta_hpd.contains(rc.delta_true);
      delta_hits += rc.delta_covered;
    }
    reps.push_back({rc.truth, rc.hpd});

    if (out) {
      char tag[32];
      std::snprintf(tag, sizeof tag, "case_%03zu", i);
      write_posterior_csv(s, out->path(std::string(tag) + "_posterior.csv"));
      out->add(std::string(tag) + "_posterior.csv");
      // Marginal posterior densities over the domain, one block per parameter.
      std::string dens = "parameter,bin_lower,bin_upper,density\n";
      for (std::size_t k = 0; k < p; ++k) {
        const double lo = corpus.domain.lower[k], hi = corpus.domain.upper[k];
        const double w = (hi - lo) / static_cast<double>(config.density_bins);
        std::vector<std::size_t> h(config.density_bins, 0);
        for (Eigen::Index r = 0; r < s.u.rows(); ++r) {
          const auto b = std::min(config.density_bins - 1,
                                  static_cast<std::size_t>((s.u(r, static_cast<Eigen::Index>(k)) - lo) / w));
          ++h[b];
        }
        for (std::size_t b = 0; b < config.density_bins; ++b) {
          dens += corpus.domain.names[k] + "," + format_double(lo + w * static_cast<double>(b)) + "," +
                  format_double(lo + w * static_cast<double>(b + 1)) + "," +
                  format_double(static_cast<double>(h[b]) / (static_cast<double>(s.size()) * w)) + "\n";
        }
      }
      out->write(std::string(tag) + "_density.csv", dens);
    }
    report.cases.push_back(std::move(rc));
  }
  report.coverage = coverage_tally(reps);
  report.delta_coverage = with_delta ? static_cast<double>(delta_hits) / static_cast<double>(n_cases) : 0.0;

  if (out) {
    std::string m = "case,run";
    for (std::size_t k = 0; k < p; ++k) m += ",truth_" + std::to_string(k + 1);
    for (std::size_t k = 0; k < p; ++k) m += ",mean_" + std::to_string(k + 1);
    for (std::size_t k = 0; k < p; ++k) m += ",hpd_lower_" + std::to_string(k + 1) + ",hpd_upper_" + std::to_string(k + 1);
    m += ",covered";
    if (with_delta) m += ",delta_true,delta_mean,delta_lower,delta_upper,delta_covered";
    m += ",acceptance\n";
    for (const auto& c : report.cases) {
      m += std::to_string(c.index) + "," + std::to_string(c.run) + "," + join_doubles(c.truth) + "," +
           join_doubles(c.posterior_mean);
      for (const auto& h : c.hpd) m += "," + format_double(h.lower) + "," + format_double(h.upper);
      m += std::string(",") + (c.covered ? "1" : "0");
      if (with_delta) {
        m += "," + format_double(c.delta_true) + "," + format_double(c.delta_mean) + "," + format_double(c.delta_hpd.lower) +
             "," + format_double(c.delta_hpd.upper) + "," + (c.delta_covered ? "1" : "0");
      }
      m += "," + format_double(c.acceptance) + "\n";
    }
    out->write("metrics.csv", m);
    std::string cov = "target,coverage,replicates\n";
    for (std::size_t k = 0; k < p; ++k) {
      cov += corpus.domain.names[k] + "," + format_double(report.coverage.per_coordinate[k]) + "," +
             std::to_string(report.coverage.replicates) + "\n";
    }
    cov += "joint," + format_double(report.coverage.joint) + "," + std::to_string(report.coverage.replicates) + "\n";
    if (with_delta) cov += "delta," + format_double(report.delta_coverage) + "," + std::to_string(n_cases) + "\n";
    out->write("coverage.csv", cov);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Hold-one-out

std::vector<HoldoutRow> holdout_benchmark(const SimulatorCorpus& corpus, const HoldoutConfig& config) {
  corpus.validate();
  if (corpus.n_runs() < 3) throw ValidationError("hold-one-out needs at least three runs");
  if (config.m_values.empty()) throw ValidationError("hold-one-out needs at least one m value");
  std::vector<std::size_t> runs = config.runs;
  if (runs.empty()) {
    runs.resize(corpus.n_runs());
    std::iota(runs.begin(), runs.end(), 0);
  }
  std::vector<HoldoutRow> rows;
  for (std::size_t idx = 0; idx < runs.size(); ++idx) {
    const std::size_t r = runs[idx];
    if (r >= corpus.n_runs()) throw ValidationError("held-out run index out of range");
    const std::size_t one[1] = {r};
    const StackedDesign data = stack(corpus.without_runs(one));
    const StackedDesign test = stack(corpus.select_runs(one));
    const std::span<const double> actual(test.responses.data(), test.size());

    auto score = [&](HoldoutRow& row, const PredictiveSummary& pred) {
      row.rmse = rmse(pred.means, actual);
      double c = 0.0;
      for (std::size_t i = 0; i < actual.size(); ++i) c += crps_or_abs(pred.means[i], pred.sds[i], actual[i]);
      row.crps = c / static_cast<double>(actual.size());
    };

    KernelSpec shared;
    for (std::size_t mi = 0; mi < config.m_values.size(); ++mi) {
      HoldoutRow row;
      row.run = r;
      row.method = "vecchia";
      row.m = config.m_values[mi];
      auto opts = config.surrogate.fit_options(derive_seed(config.seed, "holdout-fit", idx));
      opts.m = row.m;
      auto t0 = Clock::now();
      const VecchiaSurrogate model = fit_vecchia(data, opts);
      row.fit_seconds = seconds_since(t0);
      t0 = Clock::now();
      const auto pred = predict_vecchia(model, test.inputs);
      row.predict_seconds = seconds_since(t0);
      score(row, pred);
      if (mi == 0) shared = model.spec();
      rows.push_back(row);
    }
    if (config.include_dense) {
      HoldoutRow row;
      row.run = r;
      row.method = "dense";
      row.m = data.size();
      if (data.size() > config.surrogate.dense_cap) {
        row.skipped = true;
        row.note = "n_train " + std::to_string(data.size()) + " exceeds dense cap " + std::to_string(config.surrogate.dense_cap);
      } else {
        auto t0 = Clock::now();
        const ExactGP gp(shared, data.inputs, data.responses);
        row.fit_seconds = seconds_since(t0);
        t0 = Clock::now();
        const auto pred = gp.predict(test.inputs);
        row.predict_seconds = seconds_since(t0);
        score(row, pred);
        row.note = "hyperparameters from vecchia m=" + std::to_string(config.m_values.front());
      }
      rows.push_back(row);
    }
  }
  return rows;
}

std::string holdout_csv(const std::vector<HoldoutRow>& rows) {
  std::string s = "run,method,m,rmse,crps,skipped,note,fit_seconds,predict_seconds\n";
  for (const auto& r : rows) {
    s += std::to_string(r.run) + "," + r.method + "," + std::to_string(r.m) + "," +
         (r.skipped ? std::string("NA,NA") : format_double(r.rmse) + "," + format_double(r.crps)) + "," +
         (r.skipped ? "1" : "0") + "," + r.note + "," + format_double(r.fit_seconds) + "," + format_double(r.predict_seconds) + "\n";
  }
  return s;
}

// ---------------------------------------------------------------------------
// Cross-validation

std::vector<std::size_t> assign_folds(std::size_t n, std::size_t folds, std::uint64_t seed) {
  if (folds < 2) throw ValidationError("need at least two folds");
  if (n < folds) throw ValidationError("fewer field sites than folds");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  shuffle(perm, rng);
  std::vector<std::size_t> fold_of(n);
  for (std::size_t i = 0; i < n; ++i) fold_of[perm[i]] = i % folds;
  return fold_of;
}

CvResult cv_crps_grid(const FieldDataset& field, std::shared_ptr<const VecchiaSurrogate> surrogate,
                      const ParameterDomain& domain, const CvConfig& config) {
  field.validate();
  domain.validate();
  const std::size_t p = domain.dim();
  if (surrogate->dim() != kSpatialDims + p) throw ValidationError("surrogate does not match the domain");
  if (config.line_points < 2 || config.lattice < 2) throw ValidationError("grid sizes must be >= 2");
  CvResult res;
  res.fold_of = assign_folds(field.size(), config.folds, derive_seed(config.seed, "folds"));
  res.fold_means.resize(static_cast<Eigen::Index>(config.folds), static_cast<Eigen::Index>(p));
  const std::size_t L = config.line_points, G = config.lattice;
  auto grid_value = [&](std::size_t k, std::size_t t, std::size_t count) {
    return domain.denormalize(k, static_cast<double>(t) / static_cast<double>(count - 1));
  };
  res.line_values.resize(p);
  res.line_crps.assign(p, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(L)));
  for (std::size_t k = 0; k < p; ++k) {
    res.line_values[k].resize(static_cast<Eigen::Index>(L));
    for (std::size_t t = 0; t < L; ++t) res.line_values[k][static_cast<Eigen::Index>(t)] = grid_value(k, t, L);
  }
  const bool lattice = p >= 2;
  if (lattice) {
    res.lattice_values_1.resize(static_cast<Eigen::Index>(G));
    res.lattice_values_2.resize(static_cast<Eigen::Index>(G));
    for (std::size_t t = 0; t < G; ++t) {
      res.lattice_values_1[static_cast<Eigen::Index>(t)] = grid_value(0, t, G);
      res.lattice_values_2[static_cast<Eigen::Index>(t)] = grid_value(1, t, G);
    }
    res.lattice_crps = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(G), static_cast<Eigen::Index>(G));
  }

  for (std::size_t f = 0; f < config.folds; ++f) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < field.size(); ++i) (res.fold_of[i] == f ? test : train).push_back(i);
    CalibrationProblem problem;
    problem.field = field.subset(train);
    problem.surrogate = std::make_shared<VecchiaRateModel>(surrogate, problem.field.locations);
    problem.domain = domain;
    McmcConfig mc = config.mcmc;
    mc.seed = derive_seed(config.seed, "chain", f);
    const auto samples = metropolis_calibrate(problem, mc);
    const auto mean = samples.posterior_mean();
    for (std::size_t k = 0; k < p; ++k) res.fold_means(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(k)) = mean[k];

    const FieldDataset held = field.subset(test);
    const FieldPredictor predictor(surrogate, held.locations);
    auto score = [&](const std::vector<double>& u_raw) {
      const auto pred = predictor.predict(domain.normalize(u_raw));
      double c = 0.0;
      for (std::size_t i = 0; i < held.size(); ++i) {
        c += crps_or_abs(pred.means[i] + held.backgrounds[i], pred.sds[i], held.observed_rate(i));
      }
      return c / static_cast<double>(held.size());
    };
    for (std::size_t k = 0; k < p; ++k) {
      for (std::size_t t = 0; t < L; ++t) {
        auto u = mean;
        u[k] = res.line_values[k][static_cast<Eigen::Index>(t)];
        res.line_crps[k][static_cast<Eigen::Index>(t)] += score(u) / static_cast<double>(config.folds);
      }
    }
    if (lattice) {
      for (std::size_t a = 0; a < G; ++a) {
        for (std::size_t b = 0; b < G; ++b) {
          auto u = mean;
          u[0] = res.lattice_values_1[static_cast<Eigen::Index>(a)];
          u[1] = res.lattice_values_2[static_cast<Eigen::Index>(b)];
          res.lattice_crps(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += score(u) / static_cast<double>(config.folds);
        }
      }
    }
  }
  return res;
}

void write_cv_outputs(const CvResult& r, const ParameterDomain& domain, RunDirectory& out) {
  const std::size_t p = domain.dim();
  std::string header;
  for (std::size_t k = 0; k < p; ++k) header += "u_" + std::to_string(k + 1) + ",";
  header += "crps\n";
  for (std::size_t k = 0; k < p; ++k) {
    std::string s = header;
    for (Eigen::Index t = 0; t < r.line_values[k].size(); ++t) {
      std::vector<double> u(p, std::numeric_limits<double>::quiet_NaN());
      for (std::size_t j = 0; j < p; ++j) {
        // Other coordinates vary by fold; report their fold-averaged mean.
        u[j] = j == k ? r.line_values[k][t] : r.fold_means.col(static_cast<Eigen::Index>(j)).mean();
      }
      s += join_doubles(u) + "," + format_double(r.line_crps[k][t]) + "\n";
    }
    out.write("crps_line_" + std::to_string(k + 1) + ".csv", s);
  }
  if (r.lattice_crps.size() > 0) {
    std::string s = header;
    for (Eigen::Index a = 0; a < r.lattice_crps.rows(); ++a) {
      for (Eigen::Index b = 0; b < r.lattice_crps.cols(); ++b) {
        std::vector<double> u(p);
        u[0] = r.lattice_values_1[a];
        u[1] = r.lattice_values_2[b];
        for (std::size_t j = 2; j < p; ++j) u[j] = r.fold_means.col(static_cast<Eigen::Index>(j)).mean();
        s += join_doubles(u) + "," + format_double(r.lattice_crps(a, b)) + "\n";
      }
    }
    out.write("crps_grid.csv", s);
  }
  std::string m = "fold";
  for (std::size_t k = 0; k < p; ++k) m += ",mean_" + std::to_string(k + 1);
  m += "\n";
  for (Eigen::Index f = 0; f < r.fold_means.rows(); ++f) {
    m += std::to_string(f) + "," + join_doubles(row_of(r.fold_means, static_cast<std::size_t>(f))) + "\n";
  }
  out.write("metrics.csv", m);
}

// ---------------------------------------------------------------------------
// Timing

std::string to_string(SweepAxis a) { return a == SweepAxis::ResponseDimension ? "dimension" : "runs"; }

SweepAxis sweep_axis_from_string(const std::string& s) {
  if (s == "dimension" || s == "response-dimension") return SweepAxis::ResponseDimension;
  if (s == "runs" || s == "run-count") return SweepAxis::RunCount;
  throw ValidationError("unknown sweep axis '" + s + "' (expected dimension or runs)");
}

std::vector<TimingRow> timing_sweep(const TimingConfig& config) {
  if (config.sizes.empty()) throw ValidationError("timing sweep needs sizes");
  if (!std::is_sorted(config.sizes.begin(), config.sizes.end())) throw ValidationError("timing sizes must be ascending");
  if (config.repetitions < 1) throw ValidationError("repetitions must be >= 1");
  struct Method {
    std::string name;
    std::size_t m;
    bool censored = false;
  };
  std::vector<Method> methods;
  for (auto m : config.m_values) methods.push_back({"vecchia", m});
  if (config.include_dense) methods.push_back({"dense", 0});

  std::vector<TimingRow> rows;
  for (std::size_t size : config.sizes) {
    const bool by_dim = config.axis == SweepAxis::ResponseDimension;
    const std::size_t n_runs = by_dim ? config.fixed_runs : size;
    const std::size_t n_grid = by_dim ? size : config.fixed_grid;
    if (n_runs < 2 || n_grid < 1) throw ValidationError("timing cell too small");
    // One extra run is held out as the prediction target.
    const auto corpus = skymap_random_corpus(n_runs + 1, n_grid, derive_seed(config.seed, "timing", size));
    const std::size_t last[1] = {n_runs};
    const StackedDesign data = stack(corpus.without_runs(last));
    const StackedDesign test = stack(corpus.select_runs(last));
    const double var = sample_variance(data.responses);
    KernelSpec fixed{{0.1, 0.1, 0.1, 0.3, 0.3}, var, 1e-6 * var};

    for (auto& method : methods) {
      TimingRow row;
      row.size = size;
      row.n_runs = n_runs;
      row.n_grid = n_grid;
      row.n_train = data.size();
      row.method = method.name;
      row.m = method.name == "dense" ? data.size() : method.m;
      const bool too_big = method.name == "dense" && data.size() > config.dense_cap;
      if (method.censored || too_big) {
        row.censored = true;
        rows.push_back(row);
        continue;
      }
      for (std::size_t rep = 0; rep < config.repetitions; ++rep) {
        double fit = 0.0, pred = 0.0;
        auto t0 = Clock::now();
        if (method.name == "vecchia") {
          VecchiaSurrogate model = [&] {
            if (config.fit_budget > 0) {
              VecchiaFitOptions o;
              o.m = method.m;
              o.optimizer.budget = config.fit_budget;
              o.optimizer.restarts = 0;
              return fit_vecchia(data, o);
            }
            return VecchiaSurrogate(fixed, data, method.m);
          }();
          volatile double ll = model.log_likelihood();
          (void)ll;
          fit = seconds_since(t0);
          t0 = Clock::now();
          (void)predict_vecchia(model, test.inputs);
          pred = seconds_since(t0);
        } else {
          KernelSpec spec = fixed;
          if (config.fit_budget > 0) {
            FitOptions o;
            o.budget = config.fit_budget;
            o.restarts = 0;
            spec = fit_mle_dense(data.inputs, data.responses, fixed, o, config.dense_cap).spec;
          }
          const ExactGP gp(spec, data.inputs, data.responses);
          fit = seconds_since(t0);
          t0 = Clock::now();
          (void)gp.predict(test.inputs);
          pred = seconds_since(t0);
        }
        row.fit_seconds += fit;
        row.predict_seconds += pred;
        ++row.repetitions;
        if (fit + pred > config.cell_timeout_seconds) {
          row.censored = true;
          method.censored = true;
          break;
        }
      }
      row.fit_seconds /= static_cast<double>(row.repetitions);
      row.predict_seconds /= static_cast<double>(row.repetitions);
      row.total_seconds = row.fit_seconds + row.predict_seconds;
      rows.push_back(row);
    }
  }
  return rows;
}

std::string timing_csv(const std::vector<TimingRow>& rows, SweepAxis axis) {
  std::string s = "axis,size,n_runs,n_grid,n_train,method,m,repetitions,censored,fit_seconds,predict_seconds,total_seconds\n";
  for (const auto& r : rows) {
    s += to_string(axis) + "," + std::to_string(r.size) + "," + std::to_string(r.n_runs) + "," + std::to_string(r.n_grid) + "," +
         std::to_string(r.n_train) + "," + r.method + "," + std::to_string(r.m) + "," + std::to_string(r.repetitions) + "," +
         (r.censored ? "1" : "0") + "," + format_double(r.fit_seconds) + "," + format_double(r.predict_seconds) + "," +
         format_double(r.total_seconds) + "\n";
  }
  return s;
}

double loglog_slope(std::span<const double> sizes, std::span<const double> times) {
  if (sizes.size() != times.size() || sizes.size() < 2) throw ValidationError("loglog_slope needs >= 2 paired points");
  double mx = 0.0, my = 0.0;
  const double n = static_cast<double>(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (!(sizes[i] > 0.0 && times[i] > 0.0)) throw ValidationError("loglog_slope needs positive values");
    mx += std::log(sizes[i]) / n;
    my += std::log(times[i]) / n;
  }
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const double dx = std::log(sizes[i]) - mx;
    sxy += dx * (std::log(times[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

}  // namespace pinv
