// pinv: command-line front end for the surrogate, calibration and
// experiment runners. Exit codes: 0 ok, 2 invalid input, 3 numerical
// failure, 64 usage.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pinv/data_model.hpp"
#include "pinv/diagnostics.hpp"
#include "pinv/error.hpp"
#include "pinv/experiments.hpp"
#include "pinv/inversion.hpp"
#include "pinv/parallel.hpp"
#include "pinv/rng.hpp"
#include "pinv/text_io.hpp"
#include "pinv/vecchia.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pinv;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitUsage = 64;

struct Globals {
  std::string config_path;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string out_dir = "pinv_out";
  json config = json::object();

  CLI::Option* seed_opt = nullptr;
  CLI::Option* threads_opt = nullptr;
  CLI::Option* out_opt = nullptr;

  const json& section(const char* name) const {
    static const json empty = json::object();
    return config.contains(name) ? config.at(name) : empty;
  }
};

// Command-line value wins, then the config file, then the default.
template <class T>
void merge(const CLI::Option* opt, const json& section, const char* key, T& value) {
  if (opt != nullptr && opt->count() > 0) return;
  if (section.contains(key)) value = section.at(key).get<T>();
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ValidationError(std::string("missing required path: ") + what);
  if (!fs::exists(path)) throw ValidationError(std::string(what) + " not found: " + path);
}

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

json run_header(const Globals& g, const std::string& command) {
  return {{"command", command}, {"seed", g.seed}, {"threads", g.threads}};
}

// ---------------------------------------------------------------------------

struct PathOpts {
  std::string simulator, domain, field, surrogate;
  CLI::Option *simulator_opt = nullptr, *domain_opt = nullptr, *field_opt = nullptr, *surrogate_opt = nullptr;

  void add(CLI::App* sub, bool simulator_, bool domain_, bool field_, bool surrogate_) {
    if (simulator_) simulator_opt = sub->add_option("--simulator", simulator, "Simulator corpus CSV");
    if (domain_) domain_opt = sub->add_option("--domain", domain, "Parameter domain JSON");
    if (field_) field_opt = sub->add_option("--field", field, "Field data CSV");
    if (surrogate_) surrogate_opt = sub->add_option("--surrogate", surrogate, "Fitted surrogate file");
  }
  void merge_from(const Globals& g) {
    const json& p = g.section("paths");
    merge(simulator_opt, p, "simulator", simulator);
    merge(domain_opt, p, "domain", domain);
    merge(field_opt, p, "field", field);
    merge(surrogate_opt, p, "surrogate", surrogate);
  }
};

struct SurrogateOpts {
  SurrogateConfig cfg;
  CLI::Option *m_opt = nullptr, *budget_opt = nullptr, *restarts_opt = nullptr, *rows_opt = nullptr, *cap_opt = nullptr;

  void add(CLI::App* sub) {
    m_opt = sub->add_option("--m", cfg.m, "Conditioning set size")->capture_default_str();
    budget_opt = sub->add_option("--budget", cfg.budget, "Likelihood evaluations per fit stage")->capture_default_str();
    restarts_opt = sub->add_option("--restarts", cfg.restarts, "Optimizer restarts")->capture_default_str();
    rows_opt = sub->add_option("--max-fit-rows", cfg.max_fit_rows, "Rows used for hyperparameter estimation (0 = all)")
                   ->capture_default_str();
    cap_opt = sub->add_option("--dense-cap", cfg.dense_cap, "Largest training set for the dense GP")->capture_default_str();
  }
  void merge_from(const Globals& g) {
    const json& s = g.section("surrogate");
    merge(m_opt, s, "m", cfg.m);
    merge(budget_opt, s, "budget", cfg.budget);
    merge(restarts_opt, s, "restarts", cfg.restarts);
    merge(rows_opt, s, "max_fit_rows", cfg.max_fit_rows);
    merge(cap_opt, s, "dense_cap", cfg.dense_cap);
    cfg = SurrogateConfig::from_json(cfg.to_json());  // range checks
  }
};

struct McmcOpts {
  McmcConfig cfg;
  std::string likelihood = "poisson";
  std::string discrepancy = "off";
  CLI::Option *iter_opt = nullptr, *burn_opt = nullptr, *thin_opt = nullptr, *sd_opt = nullptr, *target_opt = nullptr,
              *lik_opt = nullptr, *disc_opt = nullptr;

  void add(CLI::App* sub, bool modes) {
    iter_opt = sub->add_option("--iterations", cfg.iterations, "MCMC iterations")->capture_default_str();
    burn_opt = sub->add_option("--burn-in", cfg.burn_in, "Burn-in iterations")->capture_default_str();
    thin_opt = sub->add_option("--thin", cfg.thin, "Thinning interval")->capture_default_str();
    sd_opt = sub->add_option("--proposal-sd", cfg.proposal_sds, "Initial proposal sds, normalized units (default 0.05)");
    target_opt = sub->add_option("--target-acceptance", cfg.target_acceptance, "Burn-in adaptation target")
                     ->capture_default_str();
    if (modes) {
      lik_opt = sub->add_option("--likelihood", likelihood, "poisson or gaussian")
                    ->check(CLI::IsMember({"poisson", "gaussian"}))
                    ->capture_default_str();
      disc_opt = sub->add_option("--discrepancy", discrepancy, "off or multiplicative")
                     ->check(CLI::IsMember({"off", "multiplicative"}))
                     ->capture_default_str();
    }
  }
  void merge_from(const Globals& g) {
    const json& s = g.section("mcmc");
    merge(iter_opt, s, "iterations", cfg.iterations);
    merge(burn_opt, s, "burn_in", cfg.burn_in);
    merge(thin_opt, s, "thin", cfg.thin);
    merge(sd_opt, s, "proposal_sds", cfg.proposal_sds);
    merge(target_opt, s, "target_acceptance", cfg.target_acceptance);
    merge(nullptr, s, "delta_proposal_sd", cfg.delta_proposal_sd);
    merge(nullptr, s, "adapt", cfg.adapt);
    merge(nullptr, s, "initial_u", cfg.initial_u);
    merge(lik_opt, s, "likelihood", likelihood);
    merge(disc_opt, s, "discrepancy", discrepancy);
    if (likelihood != "poisson" && likelihood != "gaussian") throw ValidationError("mcmc.likelihood must be poisson or gaussian");
    if (discrepancy != "off" && discrepancy != "multiplicative") {
      throw ValidationError("mcmc.discrepancy must be off or multiplicative");
    }
    cfg.seed = derive_seed(g.seed, "chain");
  }
  LikelihoodMode likelihood_mode() const {
    return likelihood == "gaussian" ? LikelihoodMode::GaussianMarginal : LikelihoodMode::Poisson;
  }
  DiscrepancyMode discrepancy_mode() const {
    return discrepancy == "multiplicative" ? DiscrepancyMode::Multiplicative : DiscrepancyMode::Off;
  }
  json to_json() const {
    json j = pinv::to_json(cfg);
    j["likelihood"] = likelihood;
    j["discrepancy"] = discrepancy;
    return j;
  }
};

// ---------------------------------------------------------------------------
// fit

struct FitCmd {
  PathOpts paths;
  SurrogateOpts surrogate;

  void add(CLI::App& app, std::function<void()>& run, Globals& g) {
    auto* sub = app.add_subcommand("fit", "Fit a Scaled-Vecchia surrogate to a simulator corpus");
    paths.add(sub, true, true, false, false);
    surrogate.add(sub);
    sub->callback([this, &run, &g] { run = [this, &g] { exec(g); }; });
  }
  void exec(Globals& g) {
    paths.merge_from(g);
    surrogate.merge_from(g);
    require_file(paths.simulator, "simulator CSV");
    require_file(paths.domain, "domain file");
    const auto domain = load_domain(paths.domain);
    const auto corpus = load_simulator_csv(paths.simulator, domain);
    RunDirectory out(g.out_dir);
    json echo = run_header(g, "fit");
    echo["paths"] = {{"simulator", paths.simulator}, {"domain", paths.domain}};
    echo["surrogate"] = surrogate.cfg.to_json();
    out.write_json("config_echo.json", echo);

    const auto t0 = std::chrono::steady_clock::now();
    const auto model = fit_vecchia(stack(corpus), surrogate.cfg.fit_options(derive_seed(g.seed, "fit")));
    const double seconds = elapsed(t0);
    model.save(out.path("surrogate.json"));
    out.add("surrogate.json");
    const auto& r = model.fit_report;
    json report = {{"kernel", to_json(model.spec())},
                   {"m", model.m()},
                   {"n_train", model.size()},
                   {"fit_rows", r.fit_rows},
                   {"log_likelihood", model.log_likelihood()},
                   {"stage1_log_likelihood", r.stage1.log_likelihood},
                   {"stage2_log_likelihood", r.stage2.log_likelihood},
                   {"stage2_kept", r.stage2_kept},
                   {"evaluations", r.stage1.evaluations + r.stage2.evaluations},
                   {"training_hash", model.data_hash()},
                   {"wall_seconds", seconds}};
    out.write_json("fit_report.json", report);
    out.finalize();
    std::cout << "fit: " << model.size() << " rows, loglik " << model.log_likelihood() << " -> " << g.out_dir << "\n";
  }
};

// ---------------------------------------------------------------------------
// predict

struct PredictCmd {
  PathOpts paths;
  std::vector<double> u;
  CLI::Option* u_opt = nullptr;

  void add(CLI::App& app, std::function<void()>& run, Globals& g) {
    auto* sub = app.add_subcommand("predict", "Surrogate predictive mean and sd at field locations for one u");
    paths.add(sub, false, true, true, true);
    u_opt = sub->add_option("--u", u, "Parameter values in raw units")->delimiter(',');
    sub->callback([this, &run, &g] { run = [this, &g] { exec(g); }; });
  }
  void exec(Globals& g) {
    paths.merge_from(g);
    merge(u_opt, g.section("predict"), "u", u);
    require_file(paths.surrogate, "surrogate file");
    require_file(paths.field, "field CSV");
    require_file(paths.domain, "domain file");
    const auto domain = load_domain(paths.domain);
    if (u.size() != domain.dim()) throw ValidationError("--u needs " + std::to_string(domain.dim()) + " values");
    if (!domain.contains(u)) throw ValidationError("--u lies outside the parameter domain");
    const auto field = load_field_csv(paths.field);
    auto model = std::make_shared<const VecchiaSurrogate>(VecchiaSurrogate::load(paths.surrogate));
    if (model->dim() != kSpatialDims + domain.dim()) throw ValidationError("surrogate does not match the domain");

    RunDirectory out(g.out_dir);
    json echo = run_header(g, "predict");
    echo["paths"] = {{"surrogate", paths.surrogate}, {"field", paths.field}, {"domain", paths.domain}};
    echo["u"] = u;
    out.write_json("config_echo.json", echo);

    const FieldPredictor predictor(model, field.locations);
    const auto pred = predictor.predict(domain.normalize(u));
    std::string text = "index,lat,lon,mean,sd\n";
    for (std::size_t i = 0; i < field.size(); ++i) {
      text += std::to_string(i) + "," + format_double(field.locations[i].lat_deg()) + "," +
              format_double(field.locations[i].lon_deg()) + "," + format_double(pred.means[i]) + "," +
              format_double(pred.sds[i]) + "\n";
    }
    out.write("predictions.csv", text);
    out.finalize();
    std::cout << "predict: " << field.size() << " locations -> " << g.out_dir << "\n";
  }
};

// ---------------------------------------------------------------------------
// calibrate

json pit_outputs(const CalibrationProblem& problem, const PosteriorSamples& s, std::uint64_t seed, RunDirectory& out) {
  const auto& f = problem.field;
  std::vector<double> rates(f.size());
  std::vector<double> u_unit(problem.domain.dim());
  for (std::size_t k = 0; k < u_unit.size(); ++k) u_unit[k] = s.u_unit.col(static_cast<Eigen::Index>(k)).mean();
  problem.surrogate->rates(u_unit, rates);
  double delta = 1.0;
  if (!s.delta.empty()) {
    delta = 0.0;
    for (double d : s.delta) delta += d;
    delta /= static_cast<double>(s.delta.size());
  }
  std::vector<double> means(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    means[i] = std::max(rates[i] * delta + f.backgrounds[i], kRateFloor) * f.exposures[i];
  }
  Rng rng(derive_seed(seed, "pit"));
  const auto pit = randomized_pit(f.counts, means, rng);
  std::string text = "index,count,mean,pit\n";
  for (std::size_t i = 0; i < f.size(); ++i) {
    text += std::to_string(i) + "," + std::to_string(f.counts[i]) + "," + format_double(means[i]) + "," +
            format_double(pit.values[i]) + "\n";
  }
  out.write("pit.csv", text);
  return {{"ks_statistic", pit.ks_statistic}, {"ks_p_value", pit.ks_p_value}, {"mean", pit.mean}, {"density", pit.density}};
}

struct CalibrateCmd {
  PathOpts paths;
  McmcOpts mcmc;
  bool pit = false;
  CLI::Option* pit_opt = nullptr;

  void add(CLI::App& app, std::function<void()>& run, Globals& g) {
    auto* sub = app.add_subcommand("calibrate", "Sample the posterior of u given field counts");
    paths.add(sub, false, true, true, true);
    mcmc.add(sub, true);
    pit_opt = sub->add_flag("--pit", pit, "Also write randomized PIT values at the posterior mean");
    sub->callback([this, &run, &g] { run = [this, &g] { exec(g); }; });
  }
  void exec(Globals& g) {
    paths.merge_from(g);
    mcmc.merge_from(g);
    merge(pit_opt, g.section("calibrate"), "pit", pit);
    require_file(paths.surrogate, "surrogate file");
    require_file(paths.field, "field CSV");
    require_file(paths.domain, "domain file");
    CalibrationProblem problem;
    problem.domain = load_domain(paths.domain);
    problem.field = load_field_csv(paths.field);
    auto model = std::make_shared<const VecchiaSurrogate>(VecchiaSurrogate::load(paths.surrogate));
    if (model->dim() != kSpatialDims + problem.domain.dim()) throw ValidationError("surrogate does not match the domain");
    problem.surrogate = std::make_shared<VecchiaRateModel>(model, problem.field.locations);
    problem.likelihood = mcmc.likelihood_mode();
    problem.discrepancy = mcmc.discrepancy_mode();

    RunDirectory out(g.out_dir);
    json echo = run_header(g, "calibrate");
    echo["paths"] = {{"surrogate", paths.surrogate}, {"field", paths.field}, {"domain", paths.domain}};
    echo["mcmc"] = mcmc.to_json();
    echo["pit"] = pit;
    out.write_json("config_echo.json", echo);

    const auto t0 = std::chrono::steady_clock::now();
    const auto s = metropolis_calibrate(problem, mcmc.cfg);
    const double seconds = elapsed(t0);
    write_posterior_csv(s, out.path("posterior.csv"));
    out.add("posterior.csv");
    json summary = posterior_summary(s);
    summary["wall_seconds"] = seconds;
    if (pit) summary["pit"] = pit_outputs(problem, s, g.seed, out);
    out.write_json("summary.json", summary);
    out.finalize();
    if (s.stalled) std::cerr << "warning: chain stalled (no acceptance over " << mcmc.cfg.stall_window << " iterations)\n";
    std::cout << "calibrate: " << s.size() << " draws, acceptance " << s.acceptance_u << " -> " << g.out_dir << "\n";
  }
};

// ---------------------------------------------------------------------------
// synth

struct SynthCmd {
  PathOpts paths;
  std::string testbed;
  std::size_t n_grid = 500;
  std::vector<std::size_t> levels{7, 6};
  std::vector<double> u;
  std::size_t n_field = 200;
  ExposureSchedule schedule;
  double delta = 1.0;
  CLI::Option *testbed_opt = nullptr, *grid_opt = nullptr, *levels_opt = nullptr, *u_opt = nullptr, *nf_opt = nullptr,
              *exp_opt = nullptr, *spread_opt = nullptr, *bg_opt = nullptr, *delta_opt = nullptr;

  void add(CLI::App& app, std::function<void()>& run, Globals& g) {
    auto* sub = app.add_subcommand(
        "synth", "Write a synthetic corpus (--testbed) or draw field counts at a corpus run (--u)");
    paths.add(sub, true, true, false, false);
    testbed_opt = sub->add_option("--testbed", testbed, "skymap or toy: write simulator.csv and domain.json")
                      ->check(CLI::IsMember({"skymap", "toy"}));
    grid_opt = sub->add_option("--n-grid", n_grid, "Grid size for --testbed")->capture_default_str();
    levels_opt = sub->add_option("--levels", levels, "Design levels per parameter for --testbed")
                     ->delimiter(',')
                     ->capture_default_str();
    u_opt = sub->add_option("--u", u, "Truth in raw units; must equal a design row")->delimiter(',');
    nf_opt = sub->add_option("--n-field", n_field, "Field sites drawn from the grid (0 = all)")->capture_default_str();
    exp_opt = sub->add_option("--exposure", schedule.exposure, "Mean exposure (s)")->capture_default_str();
    spread_opt = sub->add_option("--spread", schedule.spread, "Relative exposure spread")->capture_default_str();
    bg_opt = sub->add_option("--background", schedule.background, "Background rate")->capture_default_str();
    delta_opt = sub->add_option("--delta", delta, "Multiplicative discrepancy applied to the truth")->capture_default_str();
    sub->callback([this, &run, &g] { run = [this, &g] { exec(g); }; });
  }
  void exec(Globals& g) {
    paths.merge_from(g);
    const json& s = g.section("synth");
    merge(testbed_opt, s, "testbed", testbed);
    merge(grid_opt, s, "n_grid", n_grid);
    merge(levels_opt, s, "levels", levels);
    merge(u_opt, s, "u", u);
    merge(nf_opt, s, "n_field", n_field);
    merge(exp_opt, s, "exposure", schedule.exposure);
    merge(spread_opt, s, "spread", schedule.spread);
    merge(bg_opt, s, "background", schedule.background);
    merge(delta_opt, s, "delta", delta);

    RunDirectory out(g.out_dir);
    json echo = run_header(g, "synth");
    if (!testbed.empty()) {
      SimulatorCorpus corpus;
      if (testbed == "skymap") {
        if (levels.size() != 2) throw ValidationError("--levels needs two values for the sky-map testbed");
        corpus = skymap_corpus(SkyMapSpec{levels[0], levels[1], n_grid});
      } else {
        if (levels.empty()) throw ValidationError("--levels needs a value");
        corpus = ToyProblem::corpus(levels[0], n_grid);
      }
      echo["testbed"] = {{"name", testbed}, {"n_grid", n_grid}, {"levels", levels}};
      out.write_json("config_echo.json", echo);
      write_simulator_csv(corpus, out.path("simulator.csv"));
      out.add("simulator.csv");
      write_domain(corpus.domain, out.path("domain.json"));
      out.add("domain.json");
      out.finalize();
      std::cout << "synth: " << corpus.n_runs() << " runs x " << corpus.n_grid() << " grid -> " << g.out_dir << "\n";
      return;
    }
    require_file(paths.simulator, "simulator CSV");
    require_file(paths.domain, "domain file");
    const auto domain = load_domain(paths.domain);
    const auto corpus = load_simulator_csv(paths.simulator, domain);
    if (u.empty()) throw ValidationError("synth needs --u (or --testbed)");
    std::vector<std::size_t> sites(corpus.n_grid());
    std::iota(sites.begin(), sites.end(), 0);
    if (n_field > 0 && n_field < sites.size()) {
      Rng rng(derive_seed(g.seed, "sites"));
      std::shuffle(sites.begin(), sites.end(), rng);
      sites.resize(n_field);
      std::sort(sites.begin(), sites.end());
    }
    const auto exposures = make_exposures(sites.size(), schedule, derive_seed(g.seed, "exposures"));
    const std::vector<double> bg(sites.size(), schedule.background);
    auto field = synth_generate(corpus, u, sites, exposures, bg, derive_seed(g.seed, "synth"), delta);
    echo["paths"] = {{"simulator", paths.simulator}, {"domain", paths.domain}};
    echo["synth"] = {{"u", u},
                     {"n_field", n_field},
                     {"exposure", schedule.exposure},
                     {"spread", schedule.spread},
                     {"background", schedule.background},
                     {"delta", delta}};
    out.write_json("config_echo.json", echo);
    write_field_csv(field, out.path("field.csv"));
    out.add("field.csv");
    out.write_json("truth.json", {{"u", u}, {"delta", delta}, {"grid_indices", sites}, {"seed", g.seed}});
    out.finalize();
    std::cout << "synth: " << field.size() << " field sites -> " << g.out_dir << "\n";
  }
};

// ---------------------------------------------------------------------------
// holdout

struct HoldoutCmd {
  PathOpts paths;
  SurrogateOpts surrogate;
  HoldoutConfig cfg;
  bool no_dense = false;
  CLI::Option *m_opt = nullptr, *runs_opt = nullptr, *nd_opt = nullptr;

  void add(CLI::App& app, std::function<void()>& run, Globals& g) {
    auto* sub = app.add_subcommand("holdout", "Hold-one-out surrogate benchmark (Vecchia at each m, dense GP)");
    paths.add(sub, true, true, false, false);
    surrogate.add(sub);
    m_opt = sub->add_option("--m-values", cfg.m_values, "Conditioning sizes")->delimiter(',')->capture_default_str();
    runs_opt = sub->add_option("--runs", cfg.runs, "Held-out run indices (default all)")->delimiter(',');
    nd_opt = sub->add_flag("--no-dense", no_dense, "Skip the dense GP");
    sub->callback([this, &run, &g] { run = [this, &g] { exec(g); }; });
  }
  void exec(Globals& g) {
    paths.merge_from(g);
    surrogate.merge_from(g);
    const json& s = g.section("holdout");
    merge(m_opt, s, "m_values", cfg.m_values);
    merge(runs_opt, s, "runs", cfg.runs);
    merge(nd_opt, s, "no_dense", no_dense);
    require_file(paths.simulator, "simulator CSV");
    require_file(paths.domain, "domain file");
    const auto domain = load_domain(paths.domain);
    const auto corpus = load_simulator_csv(paths.simulator, domain);
    cfg.surrogate = surrogate.cfg;
    cfg.include_dense = !no_dense;
    cfg.seed = g.seed;

    RunDirectory out(g.out_dir);
    json echo = run_header(g, "holdout");
    echo["paths"] = {{"simulator", paths.simulator}, {"domain", paths.domain}};
    echo["surrogate"] = surrogate.cfg.to_json();
    echo["holdout"] = {{"m_values", cfg.m_values}, {"runs", cfg.runs}, {"include_dense", cfg.include_dense}};
    out.write_json("config_echo.json", echo);
    const auto rows = holdout_benchmark(corpus, cfg);
    out.write("metrics.csv", holdout_csv(rows));
    out.finalize();
    std::cout << "holdout: " << rows.size() << " rows -> " << g.out_dir << "\n";
  }
};

// ---------------------------------------------------------------------------
// cv

struct CvCmd {
  PathOpts paths;
  McmcOpts mcmc;
  CvConfig cfg;
  CLI::Option *folds_opt = nullptr, *line_opt = nullptr, *lattice_opt = nullptr;

  void add(CLI::App& app, std::function<void()>& run, Globals& g) {
    auto* sub = app.add_subcommand("cv", "Cross-validated CRPS over parameter lines and a lattice");
    paths.add(sub, false, true, true, true);
    mcmc.add(sub, false);
    folds_opt = sub->add_option("--folds", cfg.folds, "Number of folds")->capture_default_str();
    line_opt = sub->add_option("--line-points", cfg.line_points, "Points per parameter line")->capture_default_str();
    lattice_opt = sub->add_option("--lattice", cfg.lattice, "Lattice points per axis")->capture_default_str();
    sub->callback([this, &run, &g] { run = [this, &g] { exec(g); }; });
  }
  void exec(Globals& g) {
    paths.merge_from(g);
    mcmc.merge_from(g);
    const json& s = g.section("cv");
    merge(folds_opt, s, "folds", cfg.folds);
    merge(line_opt, s, "line_points", cfg.line_points);
    merge(lattice_opt, s, "lattice", cfg.lattice);
    require_file(paths.surrogate, "surrogate file");
    require_file(paths.field, "field CSV");
    require_file(paths.domain, "domain file");
    const auto domain = load_domain(paths.domain);
    const auto field = load_field_csv(paths.field);
    auto model = std::make_shared<const VecchiaSurrogate>(VecchiaSurrogate::load(paths.surrogate));
    cfg.mcmc = mcmc.cfg;
    cfg.seed = derive_seed(g.seed, "folds");

    RunDirectory out(g.out_dir);
    json echo = run_header(g, "cv");
    echo["paths"] = {{"surrogate", paths.surrogate}, {"field", paths.field}, {"domain", paths.domain}};
    echo["mcmc"] = pinv::to_json(mcmc.cfg);
    echo["cv"] = {{"folds", cfg.folds}, {"line_points", cfg.line_points}, {"lattice", cfg.lattice}};
    out.write_json("config_echo.json", echo);
    const auto r = cv_crps_grid(field, model, domain, cfg);
    write_cv_outputs(r, domain, out);
    out.finalize();
    std::cout << "cv: " << cfg.folds << " folds -> " << g.out_dir << "\n";
  }
};

// ---------------------------------------------------------------------------
// bench

struct BenchCmd {
  TimingConfig cfg;
  std::string axis = "dimension";
  bool no_dense = false;
  CLI::Option *axis_opt = nullptr, *sizes_opt = nullptr, *m_opt = nullptr, *reps_opt = nullptr, *nd_opt = nullptr,
              *cap_opt = nullptr, *timeout_opt = nullptr, *runs_opt = nullptr, *grid_opt = nullptr,
              *budget_opt = nullptr;

  void add(CLI::App& app, std::function<void()>& run, Globals& g) {
    auto* sub = app.add_subcommand("bench", "Timing sweep over response dimension or run count");
    axis_opt = sub->add_option("--axis", axis, "dimension or runs")
                   ->check(CLI::IsMember({"dimension", "runs"}))
                   ->capture_default_str();
    sizes_opt = sub->add_option("--sizes", cfg.sizes, "Ascending sizes along the axis")->delimiter(',')->capture_default_str();
    m_opt = sub->add_option("--m-values", cfg.m_values, "Conditioning sizes")->delimiter(',')->capture_default_str();
    reps_opt = sub->add_option("--repetitions", cfg.repetitions, "Repetitions per cell")->capture_default_str();
    nd_opt = sub->add_flag("--no-dense", no_dense, "Skip the dense GP");
    cap_opt = sub->add_option("--dense-cap", cfg.dense_cap, "Largest training set for the dense GP")->capture_default_str();
    timeout_opt = sub->add_option("--cell-timeout", cfg.cell_timeout_seconds, "Seconds before larger cells are censored")
                      ->capture_default_str();
    runs_opt = sub->add_option("--fixed-runs", cfg.fixed_runs, "Runs on the dimension axis")->capture_default_str();
    grid_opt = sub->add_option("--fixed-grid", cfg.fixed_grid, "Grid size on the runs axis")->capture_default_str();
    budget_opt = sub->add_option("--fit-budget", cfg.fit_budget, "Likelihood evaluations per fit (0 = fixed hyperparameters)")
                     ->capture_default_str();
    sub->callback([this, &run, &g] { run = [this, &g] { exec(g); }; });
  }
  void exec(Globals& g) {
    const json& s = g.section("bench");
    merge(axis_opt, s, "axis", axis);
    merge(sizes_opt, s, "sizes", cfg.sizes);
    merge(m_opt, s, "m_values", cfg.m_values);
    merge(reps_opt, s, "repetitions", cfg.repetitions);
    merge(nd_opt, s, "no_dense", no_dense);
    merge(cap_opt, s, "dense_cap", cfg.dense_cap);
    merge(timeout_opt, s, "cell_timeout_seconds", cfg.cell_timeout_seconds);
    merge(runs_opt, s, "fixed_runs", cfg.fixed_runs);
    merge(grid_opt, s, "fixed_grid", cfg.fixed_grid);
    merge(budget_opt, s, "fit_budget", cfg.fit_budget);
    cfg.axis = sweep_axis_from_string(axis);
    cfg.include_dense = !no_dense;
    cfg.seed = g.seed;

    RunDirectory out(g.out_dir);
    json echo = run_header(g, "bench");
    echo["bench"] = {{"axis", axis},
                     {"sizes", cfg.sizes},
                     {"m_values", cfg.m_values},
                     {"repetitions", cfg.repetitions},
                     {"include_dense", cfg.include_dense},
                     {"dense_cap", cfg.dense_cap},
                     {"cell_timeout_seconds", cfg.cell_timeout_seconds},
                     {"fixed_runs", cfg.fixed_runs},
                     {"fixed_grid", cfg.fixed_grid},
                     {"fit_budget", cfg.fit_budget}};
    out.write_json("config_echo.json", echo);
    const auto rows = timing_sweep(cfg);
    out.write("timing.csv", timing_csv(rows, cfg.axis));
    out.finalize();
    std::cout << "bench: " << rows.size() << " cells -> " << g.out_dir << "\n";
  }
};

// ---------------------------------------------------------------------------
// toy

struct ToyCmd {
  McmcOpts mcmc;
  SurrogateOpts surrogate;
  std::vector<double> u{0.3, 0.6};
  std::size_t levels = 6, n_grid = 60, n_field = 60;
  double exposure = 5.0;
  CLI::Option *u_opt = nullptr, *levels_opt = nullptr, *grid_opt = nullptr, *nf_opt = nullptr, *exp_opt = nullptr;

  void add(CLI::App& app, std::function<void()>& run, Globals& g) {
    auto* sub = app.add_subcommand("toy", "End-to-end run on the two-parameter toy problem");
    mcmc.add(sub, true);
    surrogate.add(sub);
    u_opt = sub->add_option("--u", u, "Truth in [0,1]^2")->delimiter(',')->capture_default_str();
    levels_opt = sub->add_option("--levels", levels, "Design levels per parameter")->capture_default_str();
    grid_opt = sub->add_option("--n-grid", n_grid, "Simulator grid points")->capture_default_str();
    nf_opt = sub->add_option("--n-field", n_field, "Field sites")->capture_default_str();
    exp_opt = sub->add_option("--exposure", exposure, "Exposure per field site")->capture_default_str();
    sub->callback([this, &run, &g] { run = [this, &g] { exec(g); }; });
  }
  void exec(Globals& g) {
    mcmc.merge_from(g);
    surrogate.merge_from(g);
    const json& s = g.section("toy");
    merge(u_opt, s, "u", u);
    merge(levels_opt, s, "levels", levels);
    merge(grid_opt, s, "n_grid", n_grid);
    merge(nf_opt, s, "n_field", n_field);
    merge(exp_opt, s, "exposure", exposure);
    const auto domain = ToyProblem::domain();
    if (u.size() != 2 || !domain.contains(u)) throw ValidationError("--u must be two values in [0, 1]");

    RunDirectory out(g.out_dir);
    json echo = run_header(g, "toy");
    echo["toy"] = {{"u", u}, {"levels", levels}, {"n_grid", n_grid}, {"n_field", n_field}, {"exposure", exposure}};
    echo["surrogate"] = surrogate.cfg.to_json();
    echo["mcmc"] = mcmc.to_json();
    out.write_json("config_echo.json", echo);

    const auto corpus = ToyProblem::corpus(levels, n_grid);
    auto model = std::make_shared<const VecchiaSurrogate>(
        fit_vecchia(stack(corpus), surrogate.cfg.fit_options(derive_seed(g.seed, "fit"))));
    const auto toy = ToyProblem::standard(n_field, exposure);
    const std::vector<double> bg(n_field, 0.0);
    CalibrationProblem problem;
    problem.domain = domain;
    problem.field = synth_generate(toy.locations(), toy.rates(u), toy.exposures, bg, derive_seed(g.seed, "synth"));
    problem.surrogate = std::make_shared<VecchiaRateModel>(model, problem.field.locations);
    problem.likelihood = mcmc.likelihood_mode();
    problem.discrepancy = mcmc.discrepancy_mode();
    if (problem.likelihood == LikelihoodMode::GaussianMarginal) {
      problem.field.values.resize(n_field);
      for (std::size_t i = 0; i < n_field; ++i) problem.field.values[i] = problem.field.observed_rate(i);
    }
    write_field_csv(problem.field, out.path("field.csv"));
    out.add("field.csv");

    const auto samples = metropolis_calibrate(problem, mcmc.cfg);
    write_posterior_csv(samples, out.path("posterior.csv"));
    out.add("posterior.csv");
    json summary = posterior_summary(samples);
    const auto hpd = samples.hpd();
    bool covered = true;
    for (std::size_t k = 0; k < u.size(); ++k) covered = covered && hpd[k].contains(u[k]);
    summary["truth"] = u;
    summary["covered"] = covered;
    summary["surrogate_kernel"] = to_json(model->spec());
    out.write_json("summary.json", summary);
    out.finalize();
    std::cout << "toy: truth " << (covered ? "inside" : "outside") << " the 95% HPD box -> " << g.out_dir << "\n";
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Poisson inversion with Scaled-Vecchia Gaussian-process surrogates"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "JSON config file");
  g.seed_opt = app.add_option("--seed", g.seed, "Master seed")->capture_default_str();
  g.threads_opt = app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  g.out_opt = app.add_option("--out-dir", g.out_dir, "Output directory")->capture_default_str();

  std::function<void()> run;
  FitCmd fit;
  PredictCmd predict;
  CalibrateCmd calibrate;
  SynthCmd synth;
  HoldoutCmd holdout;
  CvCmd cv;
  BenchCmd bench;
  ToyCmd toy;
  fit.add(app, run, g);
  predict.add(app, run, g);
  calibrate.add(app, run, g);
  synth.add(app, run, g);
  holdout.add(app, run, g);
  cv.add(app, run, g);
  bench.add(app, run, g);
  toy.add(app, run, g);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (!g.config_path.empty()) {
      require_file(g.config_path, "config file");
      try {
        g.config = json::parse(read_text_file(g.config_path));
      } catch (const json::parse_error& e) {
        throw ValidationError("config file " + g.config_path + ": " + e.what());
      }
      if (!g.config.is_object()) throw ValidationError("config file must hold a JSON object");
    }
    merge(g.seed_opt, g.config, "seed", g.seed);
    merge(g.threads_opt, g.config, "threads", g.threads);
    merge(g.out_opt, g.config, "out_dir", g.out_dir);
    if (g.threads < 1) throw ValidationError("threads must be >= 1");
    set_worker_count(g.threads);
    run();
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const json::exception& e) {
    std::cerr << "error: bad config value: " << e.what() << "\n";
    return kExitValidation;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
