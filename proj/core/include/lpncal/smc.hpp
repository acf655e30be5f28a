#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "lpncal/lpn_model.hpp"

namespace lpncal {

/// Diagonal Gaussian observation noise.
struct NoiseModel {
  Vector y_obs;
  Vector variance;

  /// sigma_i^2 = y_obs_i^2 / snr.
  static NoiseModel from_snr(const Vector& y_obs, double snr);
  void validate() const;
  std::size_t size() const noexcept { return static_cast<std::size_t>(y_obs.size()); }
};

/// Log of the Gaussian likelihood density. Non-finite model output yields -inf.
double log_likelihood(const NoiseModel& noise, const Vector& y);

struct PriorMarginal {
  enum class Kind { Uniform, Normal };
  Kind kind = Kind::Uniform;
  double a = 0.0;  // lower bound or mean
  double b = 1.0;  // upper bound or standard deviation

  static PriorMarginal uniform(double lower, double upper);
  static PriorMarginal normal(double mean, double stddev);
  double log_density(double x) const;
  double sample(std::mt19937_64& rng) const;
  double cdf(double x) const;
};

/// Independent marginals over theta.
class Prior {
 public:
  Prior() = default;
  explicit Prior(std::vector<PriorMarginal> marginals);
  static Prior uniform_box(std::size_t dim, double lower, double upper);

  std::size_t size() const noexcept { return marginals_.size(); }
  const PriorMarginal& marginal(std::size_t i) const { return marginals_.at(i); }
  double log_density(const Vector& theta) const;
  Vector sample(std::mt19937_64& rng) const;

 private:
  std::vector<PriorMarginal> marginals_;
};

/// theta -> model output; std::nullopt marks a failed evaluation.
/// Must be reentrant: it is called concurrently for different particles.
using ForwardModel = std::function<std::optional<Vector>(const Vector& theta)>;

/// Weighted particles. Weights are kept as unnormalized log weights.
struct ParticleSet {
  Matrix theta;           // k x d
  Vector log_weights;     // k
  Vector log_likelihood;  // k, -inf for failed evaluations
  Vector log_prior;       // k
  Matrix outputs;         // k x m cached model outputs
  double gamma = 0.0;     // cumulative tempering exponent

  std::size_t size() const noexcept { return static_cast<std::size_t>(theta.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(theta.cols()); }
  Vector normalized_weights() const;
  double ess() const;
  Vector weighted_mean() const;
  Matrix weighted_covariance() const;
};

/// Normalized weights from log weights (max-subtracted).
Vector normalize_log_weights(const Vector& log_weights);

/// 1 / sum W_i^2 over normalized weights; `weights` need not be normalized.
double ess(std::span<const double> weights);
double ess_from_log(const Vector& log_weights);

/// Tempering increment in (0, budget] such that the reweighted effective
/// sample size lands on ess_min (bisection), or budget when the full step
/// keeps it at or above ess_min.
double select_temper_step(const Vector& log_likelihood, const Vector& log_weights, double ess_min,
                          double budget);

ParticleSet reweight(const ParticleSet& set, double zeta);

/// Ancestor indices of systematic resampling with offset u in [0, 1).
std::vector<std::size_t> systematic_resample_indices(const Vector& normalized_weights, double u);
/// Systematic resampling; offspring weights are reset to 1.
ParticleSet resample(const ParticleSet& set, double u);

/// Independent random stream for (seed, a, b, c); stable across thread scheduling.
std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                            std::uint64_t c = 0);

struct RejuvenationStats {
  std::size_t proposals = 0;
  std::size_t accepted = 0;
  std::size_t evaluations = 0;
  std::size_t failed = 0;
  double acceptance_rate() const noexcept {
    return proposals == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposals);
  }
};

struct RejuvenationConfig {
  int steps = 2;
  double proposal_scale = 0.5;
  std::uint64_t seed = 0;
  std::uint64_t iteration = 0;
  unsigned threads = 0;
};

/// Random-walk Metropolis moves targeting prior * likelihood^gamma, with a
/// Gaussian proposal of covariance scale^2 * weighted particle covariance.
/// Weights are not modified.
ParticleSet rejuvenate(const ParticleSet& set, const ForwardModel& model, const NoiseModel& noise,
                       const Prior& prior, const RejuvenationConfig& config,
                       RejuvenationStats* stats = nullptr);

struct SmcConfig {
  std::size_t particles = 10000;
  double ess_min = 5000;
  int rejuvenation_steps = 2;
  std::uint64_t seed = 0;
  double proposal_scale = 0.5;
  int max_iterations = 1000;
  unsigned threads = 0;  // 0 = hardware concurrency

  void validate() const;
};

struct SmcIteration {
  double zeta = 0.0;
  double gamma = 0.0;
  double ess = 0.0;  // after reweighting
  bool resampled = false;
  double acceptance_rate = 0.0;
};

struct SmcResult {
  ParticleSet posterior;
  Vector map;
  std::vector<SmcIteration> history;
  std::size_t evaluations = 0;
  std::size_t failed_evaluations = 0;
  std::uint64_t seed = 0;
};

/// Adaptive-tempering SMC from prior to posterior.
/// Throws AllParticlesFailed when no initial particle evaluates.
SmcResult run_smc(const ForwardModel& model, const Prior& prior, const NoiseModel& noise,
                  const SmcConfig& config);

/// Index of the MAP particle: highest weight, ties broken by highest
/// unnormalized log posterior.
std::size_t map_index(const ParticleSet& set);

}  // namespace lpncal
