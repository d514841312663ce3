#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "pinv/data_model.hpp"
#include "pinv/diagnostics.hpp"
#include "pinv/gp_exact.hpp"
#include "pinv/vecchia.hpp"

namespace pinv {

inline constexpr double kRateFloor = 1e-10;

// Surrogate rates at a fixed set of field locations as a function of the
// normalized parameters.
class RateModel {
 public:
  virtual ~RateModel() = default;
  virtual std::size_t size() const = 0;  // field locations
  virtual std::size_t dim() const = 0;   // parameters
  virtual void rates(std::span<const double> u_unit, std::span<double> out) const = 0;
};

class VecchiaRateModel final : public RateModel {
 public:
  VecchiaRateModel(std::shared_ptr<const VecchiaSurrogate> model, const std::vector<SpatialLocation>& locations)
      : predictor_(model, locations), p_(model->dim() - kSpatialDims) {}
  std::size_t size() const override { return predictor_.size(); }
  std::size_t dim() const override { return p_; }
  void rates(std::span<const double> u_unit, std::span<double> out) const override {
    predictor_.predict_means(u_unit, out);
  }

 private:
  FieldPredictor predictor_;
  std::size_t p_;
};

class ExactRateModel final : public RateModel {
 public:
  ExactRateModel(std::shared_ptr<const ExactGP> gp, std::vector<ColumnMap> normalization,
                 const std::vector<SpatialLocation>& locations);
  std::size_t size() const override { return static_cast<std::size_t>(spatial_.rows()); }
  std::size_t dim() const override { return p_; }
  void rates(std::span<const double> u_unit, std::span<double> out) const override;

 private:
  std::shared_ptr<const ExactGP> gp_;
  RowMatrix spatial_;  // normalized direction columns
  std::size_t p_;
};

// Rates from a known function of the normalized parameters (a simulator
// stand-in or a truth function).
class FunctionRateModel final : public RateModel {
 public:
  using Fn = std::function<void(std::span<const double>, std::span<double>)>;
  FunctionRateModel(std::size_t n, std::size_t p, Fn fn) : n_(n), p_(p), fn_(std::move(fn)) {}
  std::size_t size() const override { return n_; }
  std::size_t dim() const override { return p_; }
  void rates(std::span<const double> u_unit, std::span<double> out) const override { fn_(u_unit, out); }

 private:
  std::size_t n_, p_;
  Fn fn_;
};

/// log f(y | mu, e) = y log(mu e) - mu e - log(y!), mu floored at kRateFloor.
double poisson_log_pmf(std::int64_t y, double mu, double exposure);

/// Sum over locations of the Poisson log pmf at mu_i = max(rates_i * delta +
/// background_i, eps). Throws NumericalError naming the first non-finite rate.
double poisson_loglik(const FieldDataset& field, std::span<const double> rates, double delta = 1.0);

enum class LikelihoodMode { Poisson, GaussianMarginal };
enum class DiscrepancyMode { Off, Multiplicative };

std::string to_string(LikelihoodMode m);
std::string to_string(DiscrepancyMode m);

struct CalibrationProblem {
  FieldDataset field;
  std::shared_ptr<const RateModel> surrogate;
  ParameterDomain domain;
  LikelihoodMode likelihood = LikelihoodMode::Poisson;
  DiscrepancyMode discrepancy = DiscrepancyMode::Off;

  void validate() const;
};

struct McmcConfig {
  std::size_t iterations = 10000;
  std::size_t burn_in = 1000;
  std::size_t thin = 10;
  // Per-coordinate random-walk sds in normalized units; empty means 0.05 each.
  std::vector<double> proposal_sds;
  double delta_proposal_sd = 0.1;  // on log delta
  bool adapt = true;
  double target_acceptance = 0.30;
  std::size_t adapt_window = 100;
  std::size_t stall_window = 1000;
  std::vector<double> initial_u;  // normalized; empty means the box centre
  std::uint64_t seed = 0;
  bool record_ratios = false;

  void validate(std::size_t p) const;
  std::size_t stored_draws() const { return (iterations - burn_in) / thin; }
};

nlohmann::json to_json(const McmcConfig& c);
McmcConfig mcmc_config_from_json(const nlohmann::json& j);

// One Metropolis decision, decomposed.
struct RatioRecord {
  std::size_t iteration = 0;
  int block = 0;  // 0 = u, 1 = delta
  double log_likelihood_ratio = 0.0;
  double log_prior_ratio = 0.0;
  double log_proposal_ratio = 0.0;
  double log_alpha = 0.0;
  double log_uniform = 0.0;
  bool accepted = false;
};

struct PosteriorSamples {
  std::vector<std::string> names;
  Eigen::MatrixXd u;            // s x p, raw units
  Eigen::MatrixXd u_unit;       // s x p, normalized
  std::vector<double> delta;    // s, empty without discrepancy
  std::vector<std::size_t> draw_iterations;  // 1-based iteration of each stored draw
  std::vector<double> loglik;   // T
  std::vector<std::uint8_t> accepted_u;      // T
  std::vector<std::uint8_t> accepted_delta;  // T when discrepancy is on
  double acceptance_u = 0.0;      // post-burn-in
  double acceptance_delta = 0.0;  // post-burn-in
  std::vector<double> final_sds;  // u block then delta
  bool stalled = false;
  std::uint64_t seed = 0;
  McmcConfig config;
  LikelihoodMode likelihood = LikelihoodMode::Poisson;
  DiscrepancyMode discrepancy = DiscrepancyMode::Off;
  std::vector<RatioRecord> ratios;

  std::size_t size() const { return static_cast<std::size_t>(u.rows()); }
  std::vector<double> posterior_mean() const;
  std::vector<HpdInterval> hpd(double mass = 0.95) const;
  HpdInterval delta_hpd(double mass = 0.95) const;
};

/// sd_k * exp(observed - target) for every k.
std::vector<double> adapt_proposal(std::span<const double> sds, double observed_rate, double target_rate);

/// Random-walk Metropolis over the whole-u block (plus a log-delta block when
/// the problem's discrepancy is on), dispatching on the likelihood mode.
PosteriorSamples metropolis_calibrate(const CalibrationProblem& problem, const McmcConfig& config);
/// Same sampler with the discrepancy block forced on.
PosteriorSamples metropolis_calibrate_with_discrepancy(CalibrationProblem problem, const McmcConfig& config);
/// Same sampler with the marginalized Gaussian likelihood.
PosteriorSamples gaussian_calibrate(CalibrationProblem problem, const McmcConfig& config);

void write_posterior_csv(const PosteriorSamples& s, const std::filesystem::path& path);
nlohmann::json posterior_summary(const PosteriorSamples& s);

}  // namespace pinv
