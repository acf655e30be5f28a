#include "lpncal/smc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Cholesky>

#include "lpncal/errors.hpp"
#include "lpncal/parallel.hpp"

namespace lpncal {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// 0 * (-inf) is taken as 0: an untempered likelihood contributes nothing.
double tempered(double zeta, double ll) { return zeta == 0.0 ? 0.0 : zeta * ll; }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double standard_normal(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return n(rng);
}

}  // namespace

NoiseModel NoiseModel::from_snr(const Vector& y_obs, double snr) {
  if (!(snr > 0.0)) throw InvalidInput("SNR must be positive");
  NoiseModel n;
  n.y_obs = y_obs;
  n.variance = y_obs.array().square() / snr;
  n.validate();
  return n;
}

void NoiseModel::validate() const {
  if (y_obs.size() != variance.size()) throw DimensionMismatch("noise variance does not match observations");
  for (Eigen::Index i = 0; i < variance.size(); ++i) {
    if (!(variance[i] > 0.0) || !std::isfinite(variance[i])) {
      throw InvalidInput("noise variance must be positive and finite (entry " + std::to_string(i) + ")");
    }
  }
}

double log_likelihood(const NoiseModel& noise, const Vector& y) {
  if (y.size() != noise.y_obs.size()) {
    throw DimensionMismatch("model output has " + std::to_string(y.size()) + " entries, observations " +
                            std::to_string(noise.y_obs.size()));
  }
  if (!y.allFinite()) return kNegInf;
  const auto n = static_cast<double>(y.size());
  const double quad = ((y - noise.y_obs).array().square() / noise.variance.array()).sum();
  return -0.5 * (n * std::log(2.0 * std::numbers::pi) + noise.variance.array().log().sum() + quad);
}

PriorMarginal PriorMarginal::uniform(double lower, double upper) {
  if (!std::isfinite(lower) || !std::isfinite(upper) || !(upper > lower)) {
    throw InvalidInput("uniform prior needs finite bounds with lower < upper");
  }
  return {Kind::Uniform, lower, upper};
}

PriorMarginal PriorMarginal::normal(double mean, double stddev) {
  if (!std::isfinite(mean) || !(stddev > 0.0) || !std::isfinite(stddev)) {
    throw InvalidInput("normal prior needs a finite mean and positive standard deviation");
  }
  return {Kind::Normal, mean, stddev};
}

double PriorMarginal::log_density(double x) const {
  if (kind == Kind::Uniform) return (x >= a && x <= b) ? -std::log(b - a) : kNegInf;
  const double z = (x - a) / b;
  return -0.5 * z * z - std::log(b) - 0.5 * std::log(2.0 * std::numbers::pi);
}

double PriorMarginal::sample(std::mt19937_64& rng) const {
  if (kind == Kind::Uniform) return a + (b - a) * uniform01(rng);
  return a + b * standard_normal(rng);
}

double PriorMarginal::cdf(double x) const {
  if (kind == Kind::Uniform) return std::clamp((x - a) / (b - a), 0.0, 1.0);
  return 0.5 * std::erfc(-(x - a) / (b * std::numbers::sqrt2));
}

Prior::Prior(std::vector<PriorMarginal> marginals) : marginals_(std::move(marginals)) {}

Prior Prior::uniform_box(std::size_t dim, double lower, double upper) {
  return Prior(std::vector<PriorMarginal>(dim, PriorMarginal::uniform(lower, upper)));
}

double Prior::log_density(const Vector& theta) const {
  if (static_cast<std::size_t>(theta.size()) != marginals_.size()) {
    throw DimensionMismatch("theta dimension does not match the prior");
  }
  double lp = 0.0;
  for (std::size_t i = 0; i < marginals_.size(); ++i) {
    lp += marginals_[i].log_density(theta[static_cast<Eigen::Index>(i)]);
    if (lp == kNegInf) return lp;
  }
  return lp;
}

Vector Prior::sample(std::mt19937_64& rng) const {
  Vector theta(static_cast<Eigen::Index>(marginals_.size()));
  for (std::size_t i = 0; i < marginals_.size(); ++i) theta[static_cast<Eigen::Index>(i)] = marginals_[i].sample(rng);
  return theta;
}

Vector normalize_log_weights(const Vector& log_weights) {
  if (log_weights.size() == 0) throw InvalidInput("no weights");
  const double m = log_weights.maxCoeff();
  if (!(m > kNegInf) || std::isnan(m)) throw InvalidInput("all weights are zero");
  // Scalar exp: the vectorized one maps -inf to a denormal instead of 0.
  Vector w = (log_weights.array() - m).unaryExpr([](double x) { return std::exp(x); });
  return w / w.sum();
}

double ess(std::span<const double> weights) {
  double sum = 0.0, sq = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw InvalidInput("weights must be non-negative");
    sum += w;
    sq += w * w;
  }
  if (!(sum > 0.0)) throw InvalidInput("all weights are zero");
  return sum * sum / sq;
}

double ess_from_log(const Vector& log_weights) {
  const Vector w = normalize_log_weights(log_weights);
  return 1.0 / w.squaredNorm();
}

Vector ParticleSet::normalized_weights() const { return normalize_log_weights(log_weights); }

double ParticleSet::ess() const { return ess_from_log(log_weights); }

Vector ParticleSet::weighted_mean() const {
  const Vector w = normalized_weights();
  return theta.transpose() * w;
}

Matrix ParticleSet::weighted_covariance() const {
  const Vector w = normalized_weights();
  const Vector mu = theta.transpose() * w;
  const Matrix centered = theta.rowwise() - mu.transpose();
  return centered.transpose() * w.asDiagonal() * centered;
}

double select_temper_step(const Vector& log_likelihood, const Vector& log_weights, double ess_min,
                          double budget) {
  if (!(budget > 0.0) || budget > 1.0) throw InvalidInput("tempering budget must lie in (0, 1]");
  if (log_likelihood.size() != log_weights.size()) throw DimensionMismatch("likelihood and weight counts differ");
  Vector trial(log_weights.size());
  auto f = [&](double zeta) {
    for (Eigen::Index i = 0; i < trial.size(); ++i) trial[i] = log_weights[i] + tempered(zeta, log_likelihood[i]);
    if (!(trial.maxCoeff() > kNegInf)) return -ess_min;
    return ess_from_log(trial) - ess_min;
  };
  if (f(budget) >= 0.0) return budget;
  // Invariant: f(lo) >= 0 > f(hi); the returned hi lands just below the target.
  double lo = 0.0, hi = budget;
  for (int it = 0; it < 200 && hi - lo > 1e-12 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (f(mid) >= 0.0) lo = mid;
    else hi = mid;
  }
  return hi;
}

ParticleSet reweight(const ParticleSet& set, double zeta) {
  if (!(zeta >= 0.0)) throw InvalidInput("tempering increment must be non-negative");
  ParticleSet out = set;
  for (Eigen::Index i = 0; i < out.log_weights.size(); ++i) {
    out.log_weights[i] += tempered(zeta, set.log_likelihood[i]);
  }
  const double m = out.log_weights.maxCoeff();
  if (m > kNegInf && std::isfinite(m)) out.log_weights.array() -= m;
  out.gamma = std::min(1.0, set.gamma + zeta);
  return out;
}

std::vector<std::size_t> systematic_resample_indices(const Vector& w, double u) {
  if (!(u >= 0.0 && u < 1.0)) throw InvalidInput("systematic offset must lie in [0, 1)");
  const auto k = static_cast<std::size_t>(w.size());
  std::vector<std::size_t> idx(k);
  double cum = w[0];
  std::size_t j = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double pos = (u + static_cast<double>(i)) / static_cast<double>(k);
    while (pos >= cum && j + 1 < k) cum += w[static_cast<Eigen::Index>(++j)];
    idx[i] = j;
  }
  return idx;
}

ParticleSet resample(const ParticleSet& set, double u) {
  const auto idx = systematic_resample_indices(set.normalized_weights(), u);
  ParticleSet out;
  const auto k = static_cast<Eigen::Index>(idx.size());
  out.theta.resize(k, set.theta.cols());
  out.outputs.resize(k, set.outputs.cols());
  out.log_likelihood.resize(k);
  out.log_prior.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto a = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(i)]);
    out.theta.row(i) = set.theta.row(a);
    if (set.outputs.cols() > 0) out.outputs.row(i) = set.outputs.row(a);
    out.log_likelihood[i] = set.log_likelihood[a];
    out.log_prior[i] = set.log_prior[a];
  }
  out.log_weights = Vector::Zero(k);
  out.gamma = set.gamma;
  return out;
}

std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ (b + 0x632be59bd9b4e019ULL));
  h = splitmix64(h ^ (c + 0x8cb92ba72f3d8dd7ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                    static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(a)};
  return std::mt19937_64(seq);
}

namespace {

Matrix proposal_factor(const Matrix& cov, double scale) {
  const Eigen::Index d = cov.rows();
  Matrix sigma = scale * scale * cov;
  const double base = std::max(sigma.trace() / static_cast<double>(std::max<Eigen::Index>(d, 1)), 1e-300);
  double jitter = 0.0;
  for (int attempt = 0; attempt < 20; ++attempt) {
    Eigen::LLT<Matrix> llt(sigma + jitter * Matrix::Identity(d, d));
    if (llt.info() == Eigen::Success) return llt.matrixL();
    jitter = jitter == 0.0 ? 1e-12 * base : jitter * 10.0;
  }
  return std::sqrt(base) * Matrix::Identity(d, d);
}

void store_output(Matrix& outputs, Eigen::Index row, const std::optional<Vector>& y) {
  if (outputs.cols() == 0) return;
  if (y && y->size() == outputs.cols()) outputs.row(row) = y->transpose();
  else outputs.row(row).setConstant(std::numeric_limits<double>::quiet_NaN());
}

}  // namespace

ParticleSet rejuvenate(const ParticleSet& set, const ForwardModel& model, const NoiseModel& noise,
                       const Prior& prior, const RejuvenationConfig& config, RejuvenationStats* stats) {
  ParticleSet out = set;
  if (config.steps <= 0 || set.size() == 0) return out;
  const Matrix L = proposal_factor(set.weighted_covariance(), config.proposal_scale);
  const Eigen::Index d = set.theta.cols();
  const double gamma = set.gamma;
  const std::size_t k = set.size();
  if (out.outputs.cols() == 0) out.outputs.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(noise.size()));

  std::vector<RejuvenationStats> local(k);
  parallel_for(k, config.threads, [&](std::size_t i) {
    const auto row = static_cast<Eigen::Index>(i);
    auto rng = make_stream(config.seed, config.iteration, i, 3);
    Vector cur = out.theta.row(row).transpose();
    double cur_lp = out.log_prior[row];
    double cur_ll = out.log_likelihood[row];
    Vector z(d);
    for (int s = 0; s < config.steps; ++s) {
      for (Eigen::Index c = 0; c < d; ++c) z[c] = standard_normal(rng);
      const Vector prop = cur + L * z;
      const double log_u = std::log(uniform01(rng));
      local[i].proposals++;
      const double lp = prior.log_density(prop);
      if (lp == kNegInf) continue;
      local[i].evaluations++;
      std::optional<Vector> y;
      try {
        y = model(prop);
      } catch (const Error&) {
        y.reset();
      }
      const double ll = y ? log_likelihood(noise, *y) : kNegInf;
      if (!(ll > kNegInf)) local[i].failed++;
      const double log_ratio = (lp + tempered(gamma, ll)) - (cur_lp + tempered(gamma, cur_ll));
      if (log_u < log_ratio) {
        cur = prop;
        cur_lp = lp;
        cur_ll = ll;
        store_output(out.outputs, row, y);
        local[i].accepted++;
      }
    }
    out.theta.row(row) = cur.transpose();
    out.log_prior[row] = cur_lp;
    out.log_likelihood[row] = cur_ll;
  });
  if (stats) {
    for (const auto& l : local) {
      stats->proposals += l.proposals;
      stats->accepted += l.accepted;
      stats->evaluations += l.evaluations;
      stats->failed += l.failed;
    }
  }
  return out;
}

void SmcConfig::validate() const {
  if (particles < 1) throw InvalidInput("SMC needs at least one particle");
  if (!(ess_min > 0.0) || ess_min > static_cast<double>(particles)) {
    throw InvalidInput("ESS threshold must lie in (0, particles]");
  }
  if (rejuvenation_steps < 0) throw InvalidInput("rejuvenation steps must be non-negative");
  if (!(proposal_scale > 0.0)) throw InvalidInput("proposal scale must be positive");
  if (max_iterations < 1) throw InvalidInput("SMC needs at least one iteration");
}

std::size_t map_index(const ParticleSet& set) {
  const Vector& lw = set.log_weights;
  std::size_t best = 0;
  auto post = [&](Eigen::Index i) { return set.log_prior[i] + set.log_likelihood[i]; };
  for (Eigen::Index i = 1; i < lw.size(); ++i) {
    const auto b = static_cast<Eigen::Index>(best);
    const double diff = lw[i] - lw[b];
    const bool tie = std::abs(diff) <= 1e-12;
    if ((!tie && diff > 0.0) || (tie && post(i) > post(b))) best = static_cast<std::size_t>(i);
  }
  return best;
}

SmcResult run_smc(const ForwardModel& model, const Prior& prior, const NoiseModel& noise, const SmcConfig& config) {
  config.validate();
  noise.validate();
  if (prior.size() == 0) throw InvalidInput("prior has no parameters");
  const std::size_t k = config.particles;
  const auto kk = static_cast<Eigen::Index>(k);
  const auto d = static_cast<Eigen::Index>(prior.size());
  const auto m = static_cast<Eigen::Index>(noise.size());

  SmcResult result;
  result.seed = config.seed;
  ParticleSet set;
  set.theta.resize(kk, d);
  set.outputs.resize(kk, m);
  set.log_likelihood.resize(kk);
  set.log_prior.resize(kk);
  set.log_weights = Vector::Zero(kk);

  std::vector<char> failed(k, 0);
  parallel_for(k, config.threads, [&](std::size_t i) {
    const auto row = static_cast<Eigen::Index>(i);
    auto rng = make_stream(config.seed, 0, i, 1);
    const Vector theta = prior.sample(rng);
    set.theta.row(row) = theta.transpose();
    set.log_prior[row] = prior.log_density(theta);
    std::optional<Vector> y;
    try {
      y = model(theta);
    } catch (const Error&) {
      y.reset();
    }
    store_output(set.outputs, row, y);
    set.log_likelihood[row] = y ? log_likelihood(noise, *y) : kNegInf;
    if (!(set.log_likelihood[row] > kNegInf)) failed[i] = 1;
  });
  result.evaluations = k;
  result.failed_evaluations = static_cast<std::size_t>(std::count(failed.begin(), failed.end(), 1));
  if (result.failed_evaluations == k) throw AllParticlesFailed("every initial particle failed to evaluate");
  // Failed particles carry zero weight from the start.
  for (std::size_t i = 0; i < k; ++i) {
    if (failed[i]) set.log_weights[static_cast<Eigen::Index>(i)] = kNegInf;
  }

  for (int it = 1;; ++it) {
    if (it > config.max_iterations) {
      throw Error("SMC reached " + std::to_string(config.max_iterations) + " iterations before gamma = 1");
    }
    const double budget = 1.0 - set.gamma;
    const double zeta = select_temper_step(set.log_likelihood, set.log_weights, config.ess_min, budget);
    set = reweight(set, zeta);
    if (zeta >= budget) set.gamma = 1.0;
    SmcIteration rec;
    rec.zeta = zeta;
    rec.gamma = set.gamma;
    rec.ess = set.ess();
    if (rec.ess < config.ess_min) {
      auto rng = make_stream(config.seed, static_cast<std::uint64_t>(it), 0, 2);
      set = resample(set, uniform01(rng));
      rec.resampled = true;
      RejuvenationConfig rc;
      rc.steps = config.rejuvenation_steps;
      rc.proposal_scale = config.proposal_scale;
      rc.seed = config.seed;
      rc.iteration = static_cast<std::uint64_t>(it);
      rc.threads = config.threads;
      RejuvenationStats stats;
      set = rejuvenate(set, model, noise, prior, rc, &stats);
      result.evaluations += stats.evaluations;
      result.failed_evaluations += stats.failed;
      rec.acceptance_rate = stats.acceptance_rate();
    }
    result.history.push_back(rec);
    if (set.gamma >= 1.0) break;
  }
  result.map = set.theta.row(static_cast<Eigen::Index>(map_index(set))).transpose();
  result.posterior = std::move(set);
  return result;
}

}  // namespace lpncal
