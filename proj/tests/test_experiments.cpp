#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <gtest/gtest.h>

#include "pinv/error.hpp"
#include "pinv/experiments.hpp"
#include "pinv/rng.hpp"

using namespace pinv;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  const auto d = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(d);
  return d;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Synth, CountsFollowPoissonMeans) {
  const std::size_t n = 4000;
  std::vector<SpatialLocation> locs(n, SpatialLocation::from_latlon(10, 20));
  const std::vector<double> rates(n, 2.5), exposures(n, 4.0), bg(n, 0.5);
  const auto f = synth_generate(locs, rates, exposures, bg, 3);
  double sum = 0.0;
  for (auto y : f.counts) sum += static_cast<double>(y);
  const double expected = 12.0;
  EXPECT_NEAR(sum / n, expected, 4.0 * std::sqrt(expected / n));

  const auto g = synth_generate(locs, rates, exposures, bg, 3);
  EXPECT_EQ(f.counts, g.counts);

  const std::vector<double> doubled(n, 8.0);
  const auto h = synth_generate(locs, rates, doubled, bg, 4);
  double sum2 = 0.0;
  for (auto y : h.counts) sum2 += static_cast<double>(y);
  EXPECT_NEAR(sum2 / sum, 2.0, 0.05);

  const auto half = synth_generate(locs, rates, exposures, bg, 5, 0.5);
  double sum3 = 0.0;
  for (auto y : half.counts) sum3 += static_cast<double>(y);
  EXPECT_NEAR(sum3 / n, (1.25 + 0.5) * 4.0, 4.0 * std::sqrt(7.0 / n));
}

TEST(Synth, ZeroMeanGivesZeroCounts) {
  std::vector<SpatialLocation> locs(50, SpatialLocation::from_latlon(0, 0));
  const std::vector<double> zeros(50, 0.0), exposures(50, 100.0);
  const auto f = synth_generate(locs, zeros, exposures, zeros, 1);
  for (auto y : f.counts) EXPECT_EQ(y, 0);
  const std::vector<double> negative(50, -1.0);
  EXPECT_THROW(synth_generate(locs, negative, exposures, zeros, 1), ValidationError);
}

TEST(Synth, FromCorpusUsesMatchingRun) {
  const auto corpus = ToyProblem::corpus(3, 12);
  const std::vector<std::size_t> idx{0, 5, 11};
  const std::vector<double> e(3, 1e6), bg(3, 0.0);
  const std::vector<double> u{corpus.designs(4, 0), corpus.designs(4, 1)};
  const auto f = synth_generate(corpus, u, idx, e, bg, 2);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(f.observed_rate(i), corpus.rates(4, static_cast<Eigen::Index>(idx[i])), 0.01);
  }
  const std::vector<double> off{0.123, 0.456};
  EXPECT_THROW(synth_generate(corpus, off, idx, e, bg, 2), ValidationError);
}

TEST(Synth, ExposureSchedule) {
  const ExposureSchedule s{100.0, 0.5, 0.01};
  const auto e = make_exposures(1000, s, 7);
  for (double x : e) {
    EXPECT_GE(x, 50.0);
    EXPECT_LE(x, 150.0);
  }
  EXPECT_EQ(e, make_exposures(1000, s, 7));
  EXPECT_THROW(make_exposures(3, ExposureSchedule{0.0, 0.5, 0.0}, 1), ValidationError);
}

TEST(Toy, MeanIsAtLeastOne) {
  double lo = 1e300;
  for (int a = 0; a < 100; ++a) {
    for (int b = 0; b < 100; ++b) {
      const double u[2] = {a / 99.0, b / 99.0};
      lo = std::min(lo, ToyProblem::mean(u, (a * 37 + b * 11) % 100 / 99.0));
    }
  }
  EXPECT_GT(lo, 0.99);
  const double u[2] = {0.25, 0.0};
  EXPECT_NEAR(ToyProblem::mean(u, 0.5), 21.0, 1e-12);
}

TEST(SkyMap, GridAndRates) {
  const auto grid = fibonacci_grid(500);
  ASSERT_EQ(grid.size(), 500u);
  double zsum = 0.0;
  for (const auto& g : grid) {
    const auto& d = g.direction;
    EXPECT_NEAR(d[0] * d[0] + d[1] * d[1] + d[2] * d[2], 1.0, 1e-12);
    zsum += d[2];
  }
  EXPECT_NEAR(zsum / 500.0, 0.0, 1e-2);
  const auto corpus = skymap_corpus(SkyMapSpec{3, 3, 50});
  EXPECT_EQ(corpus.n_runs(), 9u);
  EXPECT_GT(corpus.rates.minCoeff(), 0.0);
  const auto inner = interior_runs(corpus);
  ASSERT_EQ(inner.size(), 1u);
  EXPECT_EQ(inner[0], 4u);
}

TEST(Folds, BalancedAndSeeded) {
  const auto f = assign_folds(103, 10, 5);
  std::vector<int> counts(10, 0);
  for (auto k : f) ++counts[k];
  EXPECT_EQ(*std::max_element(counts.begin(), counts.end()) - *std::min_element(counts.begin(), counts.end()), 1);
  EXPECT_EQ(f, assign_folds(103, 10, 5));
  EXPECT_NE(f, assign_folds(103, 10, 6));
  EXPECT_THROW(assign_folds(5, 10, 0), ValidationError);
}

TEST(RunDir, ManifestHashes) {
  const auto d = fresh_dir("pinv_rundir_test");
  RunDirectory out(d);
  out.write("b.txt", "abc");
  out.write("a.txt", "");
  out.finalize();
  EXPECT_EQ(slurp(d / "MANIFEST"),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855  a.txt\n"
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad  b.txt\n");
  std::filesystem::remove_all(d);
}

TEST(Holdout, FullConditioningMatchesDense) {
  const auto corpus = ToyProblem::corpus(3, 10);
  HoldoutConfig c;
  c.surrogate.budget = 80;
  c.surrogate.restarts = 0;
  c.m_values = {79};
  c.runs = {4};
  const auto rows = holdout_benchmark(corpus, c);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].method, "vecchia");
  EXPECT_EQ(rows[1].method, "dense");
  EXPECT_FALSE(rows[1].skipped);
  EXPECT_NEAR(rows[0].rmse, rows[1].rmse, 1e-6);
  EXPECT_NEAR(rows[0].crps, rows[1].crps, 1e-6);

  c.surrogate.dense_cap = 50;
  const auto capped = holdout_benchmark(corpus, c);
  EXPECT_TRUE(capped[1].skipped);
  const auto csv = holdout_csv(capped);
  EXPECT_NE(csv.find("fit_seconds"), std::string::npos);
}

TEST(Recovery, ExcludesTruthRun) {
  const auto corpus = ToyProblem::corpus(4, 25);
  RecoveryConfig c;
  c.surrogate.budget = 60;
  c.surrogate.restarts = 0;
  c.mcmc.iterations = 1500;
  c.mcmc.burn_in = 500;
  c.mcmc.thin = 5;
  c.n_field = 20;
  c.schedule.exposure = 5.0;
  c.seed = 3;
  const std::vector<std::size_t> truths{5};
  const auto d = fresh_dir("pinv_recovery_test");
  RunDirectory out(d);
  const auto rep = run_recovery_grid(corpus, truths, c, &out);
  out.finalize();
  ASSERT_EQ(rep.cases.size(), 1u);
  const auto& rc = rep.cases[0];
  EXPECT_EQ(rc.run, 5u);
  EXPECT_EQ(rc.truth[0], corpus.designs(5, 0));
  const std::size_t drop[1] = {5};
  const auto kept = stack(corpus.without_runs(drop));
  EXPECT_EQ(rc.training_hash, training_data_hash(kept.inputs, kept.responses));
  const auto full = stack(corpus);
  EXPECT_NE(rc.training_hash, training_data_hash(full.inputs, full.responses));
  EXPECT_EQ(rep.coverage.replicates, 1u);
  EXPECT_TRUE(std::filesystem::exists(d / "case_000_posterior.csv"));
  EXPECT_TRUE(std::filesystem::exists(d / "coverage.csv"));
  EXPECT_TRUE(std::filesystem::exists(d / "MANIFEST"));
  std::filesystem::remove_all(d);
}

TEST(Cv, SmallRunShapes) {
  const auto corpus = ToyProblem::corpus(4, 20);
  VecchiaFitOptions opts;
  opts.m = 10;
  opts.optimizer.budget = 60;
  opts.optimizer.restarts = 0;
  auto model = std::make_shared<const VecchiaSurrogate>(fit_vecchia(stack(corpus), opts));

  const auto toy = ToyProblem::standard(20, 5.0);
  const std::vector<double> u_star{0.3, 0.6}, bg(20, 0.0);
  const auto field = synth_generate(toy.locations(), toy.rates(u_star), toy.exposures, bg, 4);
  CvConfig c;
  c.folds = 2;
  c.line_points = 5;
  c.lattice = 4;
  c.mcmc.iterations = 600;
  c.mcmc.burn_in = 100;
  c.mcmc.thin = 5;
  const auto r = cv_crps_grid(field, model, ToyProblem::domain(), c);
  EXPECT_EQ(r.fold_of.size(), 20u);
  EXPECT_EQ(r.fold_means.rows(), 2);
  ASSERT_EQ(r.line_crps.size(), 2u);
  EXPECT_EQ(r.line_crps[0].size(), 5);
  EXPECT_EQ(r.lattice_crps.rows(), 4);
  EXPECT_EQ(r.lattice_crps.cols(), 4);
  EXPECT_TRUE(r.lattice_crps.allFinite());
  EXPECT_GT(r.lattice_crps.minCoeff(), 0.0);

  const auto d = fresh_dir("pinv_cv_test");
  RunDirectory out(d);
  write_cv_outputs(r, ToyProblem::domain(), out);
  out.finalize();
  EXPECT_TRUE(std::filesystem::exists(d / "crps_grid.csv"));
  EXPECT_TRUE(std::filesystem::exists(d / "crps_line_1.csv"));
  std::filesystem::remove_all(d);
}

TEST(Timing, SmokeAndCensoring) {
  TimingConfig c;
  c.sizes = {40, 80};
  c.repetitions = 1;
  c.fixed_runs = 4;
  c.dense_cap = 200;
  const auto rows = timing_sweep(c);
  std::size_t dense_censored = 0, vecchia = 0;
  for (const auto& r : rows) {
    if (r.method == "dense" && r.censored) ++dense_censored;
    if (r.method == "vecchia") {
      ++vecchia;
      EXPECT_FALSE(r.censored);
      EXPECT_GT(r.total_seconds, 0.0);
      EXPECT_EQ(r.n_grid, r.size);
    }
  }
  EXPECT_EQ(vecchia, 2u);
  EXPECT_EQ(dense_censored, 1u);
  EXPECT_NE(timing_csv(rows, c.axis).find("total_seconds"), std::string::npos);
  EXPECT_EQ(sweep_axis_from_string(to_string(SweepAxis::RunCount)), SweepAxis::RunCount);
  EXPECT_THROW(sweep_axis_from_string("bogus"), ValidationError);
}

TEST(Timing, LogLogSlope) {
  const std::vector<double> n{100, 200, 400, 800};
  std::vector<double> t;
  for (double x : n) t.push_back(3e-4 * std::pow(x, 1.5));
  EXPECT_NEAR(loglog_slope(n, t), 1.5, 1e-12);
}
