#include "lpncal/observations.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "lpncal/errors.hpp"
#include "lpncal/parallel.hpp"
#include "lpncal/spline.hpp"

namespace lpncal {

Vector ObservationVector::to_vector() const {
  Vector v(static_cast<Eigen::Index>(size()));
  v[0] = p_in_min;
  v[1] = p_in_max;
  for (std::size_t i = 0; i < q_mean.size(); ++i) v[static_cast<Eigen::Index>(2 + i)] = q_mean[i];
  return v;
}

ObservationVector ObservationVector::from_vector(const Vector& v) {
  if (v.size() < 2) throw DimensionMismatch("observation vector needs at least two entries");
  ObservationVector o;
  o.p_in_min = v[0];
  o.p_in_max = v[1];
  for (Eigen::Index i = 2; i < v.size(); ++i) o.q_mean.push_back(v[i]);
  return o;
}

namespace {

// Cycle mean by the trapezoidal rule, closing the last interval onto the
// first sample when the trajectory does not repeat it at t0 + period.
double cycle_mean(const std::vector<double>& t, const Matrix& y, Eigen::Index col, double period) {
  const std::size_t n = t.size();
  if (n == 1) return y(0, col);
  double integral = 0.0;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const auto a = static_cast<Eigen::Index>(k);
    integral += 0.5 * (t[k + 1] - t[k]) * (y(a, col) + y(a + 1, col));
  }
  const double span = t[n - 1] - t[0];
  const double gap = period - span;
  if (gap > 1e-9 * period) {
    integral += 0.5 * gap * (y(static_cast<Eigen::Index>(n - 1), col) + y(0, col));
    return integral / period;
  }
  return integral / span;
}

void require_columns(const Trajectory& traj, const LpnModel& model) {
  traj.validate();
  if (traj.unknown_count() != model.unknown_count()) {
    throw DimensionMismatch("trajectory has " + std::to_string(traj.unknown_count()) + " columns, model has " +
                            std::to_string(model.unknown_count()) + " unknowns");
  }
  if (traj.sample_count() == 0) throw InvalidInput("trajectory is empty");
}

}  // namespace

ObservationVector extract_observations(const Trajectory& traj, const LpnModel& model) {
  require_columns(traj, model);
  const auto pin = static_cast<Eigen::Index>(LpnModel::pressure_dof(model.inflow().node));
  ObservationVector o;
  o.p_in_min = traj.y.col(pin).minCoeff();
  o.p_in_max = traj.y.col(pin).maxCoeff();
  for (const auto& w : model.outlets()) {
    o.q_mean.push_back(cycle_mean(traj.times, traj.y, static_cast<Eigen::Index>(LpnModel::flow_dof(w.node)),
                                  model.period()));
  }
  return o;
}

NoisyObservations synthesize_noisy_observations(const ObservationVector& y_true, double snr, std::uint64_t seed) {
  if (!(snr > 0.0)) throw InvalidInput("SNR must be positive");
  NoisyObservations out;
  out.y_true = y_true.to_vector();
  out.snr = snr;
  out.seed = seed;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  out.y_obs.resize(out.y_true.size());
  for (Eigen::Index i = 0; i < out.y_true.size(); ++i) {
    const double sigma = std::abs(out.y_true[i]) / std::sqrt(snr);
    out.y_obs[i] = out.y_true[i] + sigma * normal(rng);
  }
  out.noise = NoiseModel::from_snr(out.y_obs, snr);
  return out;
}

ErrorReport error_metrics(const Trajectory& lo_in, const Trajectory& hi_in, const LpnModel& model) {
  require_columns(lo_in, model);
  require_columns(hi_in, model);
  const Trajectory* lo = &lo_in;
  const Trajectory* hi = &hi_in;
  Trajectory resampled;
  bool same = lo_in.times.size() == hi_in.times.size();
  for (std::size_t k = 0; same && k < lo_in.times.size(); ++k) {
    same = std::abs(lo_in.times[k] - hi_in.times[k]) <= 1e-9 * model.period();
  }
  if (!same) {
    if (hi_in.sample_count() >= lo_in.sample_count()) {
      resampled = resample_periodic(hi_in, model.period(), lo_in.times);
      hi = &resampled;
    } else {
      resampled = resample_periodic(lo_in, model.period(), hi_in.times);
      lo = &resampled;
    }
  }

  ErrorReport rep;
  std::vector<std::size_t> pressure_nodes{model.inflow().node};
  rep.pressure_caps.push_back(model.nodes()[model.inflow().node]);
  for (const auto& w : model.outlets()) {
    pressure_nodes.push_back(w.node);
    rep.pressure_caps.push_back(model.nodes()[w.node]);
    rep.flow_caps.push_back(model.nodes()[w.node]);
  }
  const auto nt = static_cast<double>(lo->sample_count());
  double psum = 0.0;
  for (std::size_t node : pressure_nodes) {
    const auto c = static_cast<Eigen::Index>(LpnModel::pressure_dof(node));
    const double maxdiff = (lo->y.col(c) - hi->y.col(c)).cwiseAbs().maxCoeff();
    const double e = nt * maxdiff / hi->y.col(c).sum();
    rep.pressure_by_cap.push_back(e);
    psum += e;
  }
  rep.pressure_max = psum / static_cast<double>(pressure_nodes.size());

  double qsum = 0.0;
  std::size_t qcount = 0;
  for (const auto& w : model.outlets()) {
    const auto c = static_cast<Eigen::Index>(LpnModel::flow_dof(w.node));
    const double range = hi->y.col(c).maxCoeff() - hi->y.col(c).minCoeff();
    if (!(range > 0.0)) {
      rep.flow_by_cap.push_back(std::numeric_limits<double>::quiet_NaN());
      rep.warnings.push_back("reference flow range is zero at " + model.nodes()[w.node] +
                             "; excluded from the flow error");
      continue;
    }
    const double e = (lo->y.col(c) - hi->y.col(c)).cwiseAbs().maxCoeff() / range;
    rep.flow_by_cap.push_back(e);
    qsum += e;
    ++qcount;
  }
  rep.flow_max = qcount == 0 ? std::numeric_limits<double>::quiet_NaN() : qsum / static_cast<double>(qcount);
  return rep;
}

WindkesselForwardModel::WindkesselForwardModel(LpnModel model, ElementParams alpha, WindkesselParamVector bcs,
                                               IntegratorConfig config)
    : model_(std::make_shared<const LpnModel>(std::move(model))),
      alpha_(std::make_shared<const ElementParams>(std::move(alpha))),
      bcs_(std::move(bcs)),
      config_(config) {
  config_.validate();
  if (bcs_.size() != model_->outlets().size()) throw DimensionMismatch("Windkessel count does not match outlets");
  if (alpha_->size() != model_->layout()->size()) throw DimensionMismatch("alpha does not match the model layout");
}

ForwardResult WindkesselForwardModel::simulate(const Vector& theta) const {
  const auto bcs = bcs_.with_theta(theta).decode();
  return run_cycles(*model_, *alpha_, bcs, config_);
}

std::optional<Vector> WindkesselForwardModel::operator()(const Vector& theta) const {
  try {
    const ForwardResult r = simulate(theta);
    if (!r.trajectory.y.allFinite()) return std::nullopt;
    return extract_observations(r.trajectory, *model_).to_vector();
  } catch (const Error&) {
    return std::nullopt;
  }
}

ForwardModel WindkesselForwardModel::as_function() const {
  return [self = *this](const Vector& theta) { return self(theta); };
}

double GridAxis::node(std::size_t i) const {
  return lower + static_cast<double>(i) * spacing();
}

double GridAxis::spacing() const {
  return (upper - lower) / static_cast<double>(points - 1);
}

double GridAxis::weight(std::size_t i) const { return (i == 0 || i + 1 == points) ? 0.5 : 1.0; }

std::size_t GridPosterior::flat_index(std::span<const std::size_t> idx) const {
  if (idx.size() != axes.size()) throw DimensionMismatch("grid index rank does not match the grid");
  std::size_t flat = 0, stride = 1;
  for (std::size_t a = 0; a < axes.size(); ++a) {
    if (idx[a] >= axes[a].points) throw InvalidInput("grid index out of range");
    flat += idx[a] * stride;
    stride *= axes[a].points;
  }
  return flat;
}

std::vector<std::size_t> GridPosterior::unflatten(std::size_t flat) const {
  std::vector<std::size_t> idx(axes.size());
  for (std::size_t a = 0; a < axes.size(); ++a) {
    idx[a] = flat % axes[a].points;
    flat /= axes[a].points;
  }
  return idx;
}

double GridPosterior::cell_weight(std::size_t flat) const {
  const auto idx = unflatten(flat);
  double w = 1.0;
  for (std::size_t a = 0; a < axes.size(); ++a) w *= axes[a].weight(idx[a]);
  return w;
}

Vector GridPosterior::theta_at(std::size_t flat) const {
  const auto idx = unflatten(flat);
  Vector theta(static_cast<Eigen::Index>(coupling.size()));
  for (std::size_t c = 0; c < coupling.size(); ++c) {
    theta[static_cast<Eigen::Index>(c)] = axes[coupling[c]].node(idx[coupling[c]]);
  }
  return theta;
}

Vector GridPosterior::marginal(std::size_t axis) const {
  if (axis >= axes.size()) throw InvalidInput("grid axis out of range");
  Vector m = Vector::Zero(static_cast<Eigen::Index>(axes[axis].points));
  for (Eigen::Index f = 0; f < density.size(); ++f) {
    const auto idx = unflatten(static_cast<std::size_t>(f));
    double w = 1.0;
    for (std::size_t a = 0; a < axes.size(); ++a) {
      if (a != axis) w *= axes[a].weight(idx[a]);
    }
    m[static_cast<Eigen::Index>(idx[axis])] += w * density[f];
  }
  return m;
}

GridPosterior grid_posterior(const ForwardModel& model, std::vector<GridAxis> axes,
                             std::vector<std::size_t> coupling, const NoiseModel& noise, const Prior* prior) {
  noise.validate();
  if (axes.empty()) throw InvalidInput("grid needs at least one axis");
  std::size_t total = 1;
  for (const auto& a : axes) {
    if (!std::isfinite(a.lower) || !std::isfinite(a.upper) || !(a.upper > a.lower)) {
      throw InvalidInput("grid bounds must be finite with lower < upper");
    }
    if (a.points < 2) throw InvalidInput("grid axes need at least two points");
    total *= a.points;
  }
  if (coupling.empty()) throw InvalidInput("coupling map is empty");
  for (std::size_t c : coupling) {
    if (c >= axes.size()) throw InvalidInput("coupling map references a missing axis");
  }
  if (prior && prior->size() != coupling.size()) throw DimensionMismatch("prior dimension does not match theta");

  GridPosterior g;
  g.axes = std::move(axes);
  g.coupling = std::move(coupling);
  Vector logp(static_cast<Eigen::Index>(total));
  std::vector<char> failed(total, 0);
  parallel_for(total, 0, [&](std::size_t f) {
    const Vector theta = g.theta_at(f);
    double lp = prior ? prior->log_density(theta) : 0.0;
    if (lp > -std::numeric_limits<double>::infinity()) {
      std::optional<Vector> y;
      try {
        y = model(theta);
      } catch (const Error&) {
        y.reset();
      }
      if (!y) failed[f] = 1;
      lp += y ? log_likelihood(noise, *y) : -std::numeric_limits<double>::infinity();
    }
    logp[static_cast<Eigen::Index>(f)] = lp;
  });
  for (std::size_t f = 0; f < total; ++f) {
    if (failed[f]) {
      std::string where;
      const Vector th = g.theta_at(f);
      for (Eigen::Index i = 0; i < th.size(); ++i) where += (i ? "," : "") + std::to_string(th[i]);
      g.warnings.push_back("model failed at theta=(" + where + "); density set to 0");
    }
  }
  const double mx = logp.maxCoeff();
  if (!(mx > -std::numeric_limits<double>::infinity())) throw InvalidInput("posterior is zero on the whole grid");
  Vector p = (logp.array() - mx).unaryExpr([](double x) { return std::exp(x); });
  double norm = 0.0;
  for (std::size_t f = 0; f < total; ++f) norm += g.cell_weight(f) * p[static_cast<Eigen::Index>(f)];
  g.density = p / norm;
  Eigen::Index best = 0;
  g.density.maxCoeff(&best);
  g.argmax = g.unflatten(static_cast<std::size_t>(best));
  return g;
}

}  // namespace lpncal
