#include "pinv/inversion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "pinv/error.hpp"
#include "pinv/rng.hpp"
#include "pinv/text_io.hpp"

namespace pinv {

ExactRateModel::ExactRateModel(std::shared_ptr<const ExactGP> gp, std::vector<ColumnMap> normalization,
                               const std::vector<SpatialLocation>& locations)
    : gp_(std::move(gp)) {
  const auto d = static_cast<std::size_t>(gp_->inputs().cols());
  if (d <= kSpatialDims || normalization.size() != d) throw ValidationError("ExactRateModel: bad input width");
  p_ = d - kSpatialDims;
  spatial_.resize(static_cast<Eigen::Index>(locations.size()), static_cast<Eigen::Index>(kSpatialDims));
  for (std::size_t i = 0; i < locations.size(); ++i) {
    for (std::size_t k = 0; k < kSpatialDims; ++k) {
      spatial_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = normalization[k].apply(locations[i].direction[k]);
    }
  }
}

void ExactRateModel::rates(std::span<const double> u_unit, std::span<double> out) const {
  if (u_unit.size() != p_ || out.size() != size()) throw ValidationError("ExactRateModel: size mismatch");
  RowMatrix X(spatial_.rows(), static_cast<Eigen::Index>(kSpatialDims + p_));
  X.leftCols(kSpatialDims) = spatial_;
  for (std::size_t k = 0; k < p_; ++k) X.col(static_cast<Eigen::Index>(kSpatialDims + k)).setConstant(u_unit[k]);
  const auto m = gp_->predict_means(X);
  std::copy(m.begin(), m.end(), out.begin());
}

double poisson_log_pmf(std::int64_t y, double mu, double exposure) {
  const double lambda = std::max(mu, kRateFloor) * exposure;
  const double yd = static_cast<double>(y);
  return (y == 0 ? 0.0 : yd * std::log(lambda)) - lambda - std::lgamma(yd + 1.0);
}

double poisson_loglik(const FieldDataset& field, std::span<const double> rates, double delta) {
  if (rates.size() != field.size()) throw ValidationError("poisson_loglik: rates do not match the field");
  double total = 0.0;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    if (!std::isfinite(rates[i])) throw NumericalError("non-finite surrogate rate at field index " + std::to_string(i));
    total += poisson_log_pmf(field.counts[i], rates[i] * delta + field.backgrounds[i], field.exposures[i]);
  }
  return total;
}

std::string to_string(LikelihoodMode m) { return m == LikelihoodMode::Poisson ? "poisson" : "gaussian"; }
std::string to_string(DiscrepancyMode m) { return m == DiscrepancyMode::Off ? "off" : "multiplicative"; }

void CalibrationProblem::validate() const {
  field.validate();
  domain.validate();
  if (!surrogate) throw ValidationError("calibration problem has no surrogate");
  if (surrogate->dim() != domain.dim()) throw ValidationError("surrogate parameter count does not match the domain");
  if (surrogate->size() != field.size()) throw ValidationError("surrogate locations do not match the field");
  if (likelihood == LikelihoodMode::GaussianMarginal && field.size() < 2) {
    throw ValidationError("gaussian likelihood needs at least two field observations");
  }
}

void McmcConfig::validate(std::size_t p) const {
  if (!(iterations > burn_in)) throw ValidationError("mcmc: iterations must exceed burn_in");
  if (thin < 1) throw ValidationError("mcmc: thin must be >= 1");
  if (!proposal_sds.empty() && proposal_sds.size() != p) throw ValidationError("mcmc: need one proposal sd per parameter");
  for (double s : proposal_sds) {
    if (!(s > 0.0)) throw ValidationError("mcmc: proposal sds must be > 0");
  }
  if (!(delta_proposal_sd > 0.0)) throw ValidationError("mcmc: delta proposal sd must be > 0");
  if (!(target_acceptance > 0.0 && target_acceptance < 1.0)) throw ValidationError("mcmc: target acceptance in (0, 1)");
  if (adapt_window < 1) throw ValidationError("mcmc: adapt_window must be >= 1");
  if (!initial_u.empty()) {
    if (initial_u.size() != p) throw ValidationError("mcmc: initial_u has the wrong length");
    for (double v : initial_u) {
      if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("mcmc: initial_u must lie in [0, 1]");
    }
  }
}

nlohmann::json to_json(const McmcConfig& c) {
  return {{"iterations", c.iterations},       {"burn_in", c.burn_in},
          {"thin", c.thin},                   {"proposal_sds", c.proposal_sds},
          {"delta_proposal_sd", c.delta_proposal_sd}, {"adapt", c.adapt},
          {"target_acceptance", c.target_acceptance}, {"adapt_window", c.adapt_window},
          {"stall_window", c.stall_window},   {"initial_u", c.initial_u},
          {"seed", c.seed}};
}

McmcConfig mcmc_config_from_json(const nlohmann::json& j) {
  McmcConfig c;
  c.iterations = j.value("iterations", c.iterations);
  c.burn_in = j.value("burn_in", c.burn_in);
  c.thin = j.value("thin", c.thin);
  c.proposal_sds = j.value("proposal_sds", c.proposal_sds);
  c.delta_proposal_sd = j.value("delta_proposal_sd", c.delta_proposal_sd);
  c.adapt = j.value("adapt", c.adapt);
  c.target_acceptance = j.value("target_acceptance", c.target_acceptance);
  c.adapt_window = j.value("adapt_window", c.adapt_window);
  c.stall_window = j.value("stall_window", c.stall_window);
  c.initial_u = j.value("initial_u", c.initial_u);
  c.seed = j.value("seed", c.seed);
  return c;
}

std::vector<double> adapt_proposal(std::span<const double> sds, double observed_rate, double target_rate) {
  const double f = std::exp(observed_rate - target_rate);
  std::vector<double> out(sds.begin(), sds.end());
  for (auto& s : out) s *= f;
  return out;
}

std::vector<double> PosteriorSamples::posterior_mean() const {
  std::vector<double> m(static_cast<std::size_t>(u.cols()));
  for (Eigen::Index k = 0; k < u.cols(); ++k) m[static_cast<std::size_t>(k)] = u.col(k).mean();
  return m;
}

std::vector<HpdInterval> PosteriorSamples::hpd(double mass) const {
  std::vector<HpdInterval> out;
  for (Eigen::Index k = 0; k < u.cols(); ++k) {
    const Eigen::VectorXd col = u.col(k);
    out.push_back(hpd_interval({col.data(), static_cast<std::size_t>(col.size())}, mass));
  }
  return out;
}

HpdInterval PosteriorSamples::delta_hpd(double mass) const {
  if (delta.empty()) throw ValidationError("no delta draws");
  return hpd_interval(delta, mass);
}

namespace {

// Log-likelihood of the field at given surrogate rates.
class FieldLikelihood {
 public:
  FieldLikelihood(const FieldDataset& field, LikelihoodMode mode) : field_(field), mode_(mode) {
    if (mode_ == LikelihoodMode::Poisson) {
      log_factorial_.resize(field.size());
      for (std::size_t i = 0; i < field.size(); ++i) {
        log_factorial_[i] = std::lgamma(static_cast<double>(field.counts[i]) + 1.0);
      }
    } else {
      observed_.resize(field.size());
      for (std::size_t i = 0; i < field.size(); ++i) observed_[i] = field.observed_rate(i);
    }
    scratch_.resize(field.size());
  }

  double operator()(std::span<const double> rates, double delta) {
    for (std::size_t i = 0; i < rates.size(); ++i) {
      if (!std::isfinite(rates[i])) throw NumericalError("non-finite surrogate rate at field index " + std::to_string(i));
    }
    if (mode_ == LikelihoodMode::GaussianMarginal) {
      for (std::size_t i = 0; i < rates.size(); ++i) {
        scratch_[i] = observed_[i] - (rates[i] * delta + field_.backgrounds[i]);
      }
      return gaussian_marginal_loglik(scratch_);
    }
    double total = 0.0;
    for (std::size_t i = 0; i < rates.size(); ++i) {
      const double lambda = std::max(rates[i] * delta + field_.backgrounds[i], kRateFloor) * field_.exposures[i];
      const auto y = field_.counts[i];
      total += (y == 0 ? 0.0 : static_cast<double>(y) * std::log(lambda)) - lambda - log_factorial_[i];
    }
    return total;
  }

 private:
  const FieldDataset& field_;
  LikelihoodMode mode_;
  std::vector<double> log_factorial_;
  std::vector<double> observed_;
  std::vector<double> scratch_;
};

}  // namespace

PosteriorSamples metropolis_calibrate(const CalibrationProblem& problem, const McmcConfig& config) {
  problem.validate();
  const std::size_t p = problem.domain.dim();
  config.validate(p);
  const bool with_delta = problem.discrepancy == DiscrepancyMode::Multiplicative;
  const std::size_t T = config.iterations, B = config.burn_in, k = config.thin;

  Rng rng(derive_seed(config.seed, "chain"));
  std::normal_distribution<double> normal;
  FieldLikelihood loglik_of(problem.field, problem.likelihood);

  std::vector<double> sds = config.proposal_sds.empty() ? std::vector<double>(p, 0.05) : config.proposal_sds;
  double delta_sd = config.delta_proposal_sd;
  std::vector<double> u = config.initial_u.empty() ? std::vector<double>(p, 0.5) : config.initial_u;
  double log_delta = 0.0;

  const std::size_t n = problem.field.size();
  std::vector<double> rates(n), proposed_rates(n), u_new(p);
  auto predict = [&](std::span<const double> at, std::span<double> out, std::size_t t) {
    try {
      problem.surrogate->rates(at, out);
    } catch (const std::exception& e) {
      throw NumericalError("surrogate prediction failed at iteration " + std::to_string(t) + ": " + e.what());
    }
  };
  predict(u, rates, 0);
  double ll = loglik_of(rates, std::exp(log_delta));

  PosteriorSamples out;
  out.names = problem.domain.names;
  out.seed = config.seed;
  out.config = config;
  out.likelihood = problem.likelihood;
  out.discrepancy = problem.discrepancy;
  const std::size_t s = config.stored_draws();
  out.u.resize(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(p));
  out.u_unit.resize(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(p));
  out.draw_iterations.reserve(s);
  if (with_delta) out.delta.reserve(s);
  out.loglik.reserve(T);
  out.accepted_u.reserve(T);
  if (with_delta) out.accepted_delta.reserve(T);

  std::size_t window_u = 0, window_delta = 0, post_u = 0, post_delta = 0, streak = 0;
  std::size_t stored = 0;
  for (std::size_t t = 1; t <= T; ++t) {
    // u block
    bool inside = true;
    for (std::size_t j = 0; j < p; ++j) {
      u_new[j] = u[j] + sds[j] * normal(rng);
      inside = inside && u_new[j] >= 0.0 && u_new[j] <= 1.0;
    }
    RatioRecord rec;
    rec.iteration = t;
    rec.block = 0;
    bool acc = false;
    double ll_new = -std::numeric_limits<double>::infinity();
    if (inside) {
      predict(u_new, proposed_rates, t);
      ll_new = loglik_of(proposed_rates, std::exp(log_delta));
      rec.log_likelihood_ratio = ll_new - ll;
      rec.log_prior_ratio = 0.0;
      rec.log_proposal_ratio = 0.0;
      rec.log_alpha = rec.log_likelihood_ratio + rec.log_prior_ratio + rec.log_proposal_ratio;
      rec.log_uniform = std::log(uniform01(rng));
      acc = rec.log_uniform < rec.log_alpha;
    } else {
      rec.log_prior_ratio = -std::numeric_limits<double>::infinity();
      rec.log_alpha = -std::numeric_limits<double>::infinity();
      rec.log_uniform = std::numeric_limits<double>::quiet_NaN();
    }
    rec.accepted = acc;
    if (acc) {
      u = u_new;
      rates.swap(proposed_rates);
      ll = ll_new;
    }
    if (config.record_ratios) out.ratios.push_back(rec);
    out.accepted_u.push_back(acc ? 1 : 0);
    window_u += acc;

    // delta block
    if (with_delta) {
      const double ld_new = log_delta + delta_sd * normal(rng);
      RatioRecord dr;
      dr.iteration = t;
      dr.block = 1;
      const double ll_d = loglik_of(rates, std::exp(ld_new));
      dr.log_likelihood_ratio = ll_d - ll;
      dr.log_prior_ratio = -0.5 * (ld_new * ld_new - log_delta * log_delta);
      dr.log_proposal_ratio = 0.0;
      dr.log_alpha = dr.log_likelihood_ratio + dr.log_prior_ratio + dr.log_proposal_ratio;
      dr.log_uniform = std::log(uniform01(rng));
      dr.accepted = dr.log_uniform < dr.log_alpha;
      if (dr.accepted) {
        log_delta = ld_new;
        ll = ll_d;
      }
      if (config.record_ratios) out.ratios.push_back(dr);
      out.accepted_delta.push_back(dr.accepted ? 1 : 0);
      window_delta += dr.accepted;
    }
    out.loglik.push_back(ll);

    if (t <= B) {
      if (t % config.adapt_window == 0) {
        if (config.adapt) {
          const double w = static_cast<double>(config.adapt_window);
          sds = adapt_proposal(sds, static_cast<double>(window_u) / w, config.target_acceptance);
          if (with_delta) {
            delta_sd = adapt_proposal(std::span<const double>(&delta_sd, 1), static_cast<double>(window_delta) / w,
                                      config.target_acceptance)[0];
          }
        }
        window_u = window_delta = 0;
      }
    } else {
      post_u += acc;
      if (with_delta) post_delta += out.accepted_delta.back();
      streak = acc ? 0 : streak + 1;
      if (config.stall_window > 0 && streak >= config.stall_window) out.stalled = true;
      if ((t - B) % k == 0 && stored < s) {
        for (std::size_t j = 0; j < p; ++j) {
          out.u_unit(static_cast<Eigen::Index>(stored), static_cast<Eigen::Index>(j)) = u[j];
          out.u(static_cast<Eigen::Index>(stored), static_cast<Eigen::Index>(j)) = problem.domain.denormalize(j, u[j]);
        }
        if (with_delta) out.delta.push_back(std::exp(log_delta));
        out.draw_iterations.push_back(t);
        ++stored;
      }
    }
  }
  const double post = static_cast<double>(T - B);
  out.acceptance_u = static_cast<double>(post_u) / post;
  out.acceptance_delta = with_delta ? static_cast<double>(post_delta) / post : 0.0;
  out.final_sds = sds;
  if (with_delta) out.final_sds.push_back(delta_sd);
  return out;
}

PosteriorSamples metropolis_calibrate_with_discrepancy(CalibrationProblem problem, const McmcConfig& config) {
  problem.discrepancy = DiscrepancyMode::Multiplicative;
  return metropolis_calibrate(problem, config);
}

PosteriorSamples gaussian_calibrate(CalibrationProblem problem, const McmcConfig& config) {
  problem.likelihood = LikelihoodMode::GaussianMarginal;
  return metropolis_calibrate(problem, config);
}

void write_posterior_csv(const PosteriorSamples& s, const std::filesystem::path& path) {
  const bool with_delta = !s.delta.empty();
  std::string text = "iter";
  for (std::size_t j = 0; j < s.names.size(); ++j) text += ",u_" + std::to_string(j + 1);
  if (with_delta) text += ",delta";
  text += ",loglik,accepted\n";
  for (std::size_t r = 0; r < s.size(); ++r) {
    const std::size_t t = s.draw_iterations[r];
    text += std::to_string(t);
    for (Eigen::Index j = 0; j < s.u.cols(); ++j) text += "," + format_double(s.u(static_cast<Eigen::Index>(r), j));
    if (with_delta) text += "," + format_double(s.delta[r]);
    text += "," + format_double(s.loglik[t - 1]) + "," + std::to_string(static_cast<int>(s.accepted_u[t - 1]));
    text += "\n";
  }
  write_text_file(path, text);
}

nlohmann::json posterior_summary(const PosteriorSamples& s) {
  nlohmann::json j;
  j["parameters"] = s.names;
  j["posterior_mean"] = s.posterior_mean();
  const auto intervals = s.hpd();
  nlohmann::json h = nlohmann::json::array();
  for (std::size_t k = 0; k < intervals.size(); ++k) {
    h.push_back({{"name", s.names[k]}, {"lower", intervals[k].lower}, {"upper", intervals[k].upper}, {"mass", 0.95}});
  }
  j["hpd95"] = h;
  j["acceptance"] = {{"u", s.acceptance_u}};
  if (!s.delta.empty()) {
    double m = 0.0;
    for (double d : s.delta) m += d;
    m /= static_cast<double>(s.delta.size());
    const auto dh = s.delta_hpd();
    j["delta"] = {{"posterior_mean", m}, {"hpd95", {dh.lower, dh.upper}}};
    j["acceptance"]["delta"] = s.acceptance_delta;
  }
  j["draws"] = s.size();
  j["final_proposal_sds"] = s.final_sds;
  j["stalled"] = s.stalled;
  j["seed"] = s.seed;
  j["likelihood"] = to_string(s.likelihood);
  j["discrepancy"] = to_string(s.discrepancy);
  j["config"] = to_json(s.config);
  return j;
}

}  // namespace pinv
