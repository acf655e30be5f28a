#include "lpncal/forward_solver.hpp"

#include <cmath>
#include <limits>

#include "lpncal/elements.hpp"
#include "lpncal/errors.hpp"

namespace lpncal {

namespace {
constexpr std::size_t kNoRow = std::numeric_limits<std::size_t>::max();
}

void IntegratorConfig::validate() const {
  if (!(spectral_radius >= 0.0 && spectral_radius <= 1.0)) throw InvalidInput("spectral radius must lie in [0, 1]");
  if (time_step) {
    if (!(*time_step > 0.0)) throw InvalidInput("time step must be positive");
  } else if (steps_per_cycle == 0) {
    throw InvalidInput("steps per cycle must be positive");
  }
  if (max_newton_iters < 1) throw InvalidInput("max Newton iterations must be at least 1");
  if (!(newton_abs_tol > 0.0)) throw InvalidInput("Newton tolerance must be positive");
  if (cycles_max < 1) throw InvalidInput("cycles_max must be at least 1");
  if (!(periodicity_tol > 0.0)) throw InvalidInput("periodicity tolerance must be positive");
}

std::size_t IntegratorConfig::steps_for(double period) const {
  if (!time_step) return steps_per_cycle;
  const double steps = std::round(period / *time_step);
  return steps < 1.0 ? 1 : static_cast<std::size_t>(steps);
}

GenAlphaCoefficients GenAlphaCoefficients::from_spectral_radius(double rho) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw InvalidInput("spectral radius must lie in [0, 1]");
  GenAlphaCoefficients c;
  c.alpha_m = (3.0 - rho) / (2.0 * (1.0 + rho));
  c.alpha_f = 1.0 / (1.0 + rho);
  c.gamma = 0.5 + c.alpha_m - c.alpha_f;
  return c;
}

bool newton_converged(double residual_norm, double tol, double residual_scale) noexcept {
  if (residual_norm < tol) return true;
  return residual_norm <= 128.0 * std::numeric_limits<double>::epsilon() * residual_scale;
}

LpnSystem::LpnSystem(const LpnModel& model, const ElementParams& alpha,
                     std::span<const WindkesselBc> bcs, Inflow inflow)
    : model_(&model),
      n_(model.unknown_count()),
      inflow_mode_(inflow),
      mean_inflow_(model.mean_inflow()) {
  if (alpha.size() != model.layout()->size()) throw DimensionMismatch("alpha does not match the model layout");
  if (bcs.size() != model.outlets().size()) throw DimensionMismatch("Windkessel count does not match outlets");
  const auto n = static_cast<Eigen::Index>(n_);
  E_ = Matrix::Zero(n, n);
  F_ = Matrix::Zero(n, n);
  c0_ = Vector::Zero(n);
  auto P = [](std::size_t node) { return static_cast<Eigen::Index>(LpnModel::pressure_dof(node)); };
  auto Q = [](std::size_t node) { return static_cast<Eigen::Index>(LpnModel::flow_dof(node)); };

  for (std::size_t v = 0; v < model.vessels().size(); ++v) {
    const auto& ves = model.vessels()[v];
    const VesselParams p = alpha.vessel(v);
    const auto r0 = static_cast<Eigen::Index>(model.vessel_row(v));
    const auto r1 = r0 + 1;
    F_(r0, P(ves.inlet)) += 1.0;
    F_(r0, Q(ves.inlet)) += -p.R;
    F_(r0, P(ves.outlet)) += -1.0;
    E_(r0, Q(ves.outlet)) += -p.L;
    F_(r1, Q(ves.inlet)) += 1.0;
    F_(r1, Q(ves.outlet)) += -1.0;
    E_(r1, P(ves.inlet)) += -p.C;
    E_(r1, Q(ves.inlet)) += p.C * p.R;
    if (p.S != 0.0) {
      stenoses_.push_back({static_cast<std::size_t>(r0), static_cast<std::size_t>(r1),
                           LpnModel::flow_dof(ves.inlet), p.S, p.C});
    }
  }
  for (std::size_t j = 0; j < model.junctions().size(); ++j) {
    const auto& jun = model.junctions()[j];
    const JunctionParams p = alpha.junction(j);
    const auto row = static_cast<Eigen::Index>(model.junction_row(j));
    F_(row, Q(jun.inlet)) += 1.0;
    for (std::size_t i = 0; i < jun.outlets.size(); ++i) {
      const std::size_t o = jun.outlets[i];
      const auto ri = row + 1 + static_cast<Eigen::Index>(i);
      F_(row, Q(o)) += -1.0;
      F_(ri, P(jun.inlet)) += 1.0;
      F_(ri, P(o)) += -1.0;
      F_(ri, Q(o)) += -p.R[i];
      E_(ri, Q(o)) += -p.L[i];
      if (p.S[i] != 0.0) {
        stenoses_.push_back({static_cast<std::size_t>(ri), kNoRow, LpnModel::flow_dof(o), p.S[i], 0.0});
      }
    }
  }
  for (std::size_t k = 0; k < model.outlets().size(); ++k) {
    const auto& bc = bcs[k];
    const std::size_t node = model.outlets()[k].node;
    const auto row = static_cast<Eigen::Index>(model.outlet_row(k));
    E_(row, P(node)) += -bc.Rd * bc.C;
    E_(row, Q(node)) += bc.Rp * bc.Rd * bc.C;
    F_(row, P(node)) += -1.0;
    F_(row, Q(node)) += bc.Rp + bc.Rd;
    c0_[row] = bc.Pref;
  }
  F_(static_cast<Eigen::Index>(model.inflow_row()), Q(model.inflow().node)) = 1.0;
  abs_E_ = E_.cwiseAbs();
  abs_F_ = F_.cwiseAbs();
}

void LpnSystem::residual(double t, const Vector& y, const Vector& ydot, Vector& r) const {
  r.noalias() = E_ * ydot;
  r.noalias() += F_ * y;
  r += c0_;
  const double qin = inflow_mode_ == Inflow::Mean ? mean_inflow_ : model_->inflow_at(t);
  r[static_cast<Eigen::Index>(model_->inflow_row())] -= qin;
  for (const auto& s : stenoses_) {
    const auto qd = static_cast<Eigen::Index>(s.q_dof);
    const double q = y[qd];
    r[static_cast<Eigen::Index>(s.row_momentum)] -= s.S * std::abs(q) * q;
    if (s.row_mass != kNoRow) r[static_cast<Eigen::Index>(s.row_mass)] += 2.0 * s.S * s.C * std::abs(q) * ydot[qd];
  }
}

double LpnSystem::residual_scale(double t, const Vector& y, const Vector& ydot) const {
  Vector m = abs_E_ * ydot.cwiseAbs() + abs_F_ * y.cwiseAbs() + c0_.cwiseAbs();
  const double qin = inflow_mode_ == Inflow::Mean ? mean_inflow_ : model_->inflow_at(t);
  m[static_cast<Eigen::Index>(model_->inflow_row())] += std::abs(qin);
  for (const auto& s : stenoses_) {
    const auto qd = static_cast<Eigen::Index>(s.q_dof);
    const double q = y[qd];
    m[static_cast<Eigen::Index>(s.row_momentum)] += std::abs(s.S * q * q);
    if (s.row_mass != kNoRow) m[static_cast<Eigen::Index>(s.row_mass)] += std::abs(2.0 * s.S * s.C * q * ydot[qd]);
  }
  return m.maxCoeff();
}

void LpnSystem::tangent(double /*t*/, const Vector& y, const Vector& ydot, double w_ydot, double w_y,
                        Matrix& K) const {
  K.noalias() = w_ydot * E_;
  K.noalias() += w_y * F_;
  for (const auto& s : stenoses_) {
    const auto qd = static_cast<Eigen::Index>(s.q_dof);
    const double q = y[qd];
    K(static_cast<Eigen::Index>(s.row_momentum), qd) += w_y * (-2.0 * s.S * std::abs(q));
    if (s.row_mass != kNoRow) {
      const auto rm = static_cast<Eigen::Index>(s.row_mass);
      K(rm, qd) += w_y * 2.0 * s.S * s.C * signum(q) * ydot[qd] + w_ydot * 2.0 * s.S * s.C * std::abs(q);
    }
  }
}

GeneralizedAlpha::GeneralizedAlpha(const DaeSystem& system, const IntegratorConfig& config, double dt)
    : system_(&system),
      config_(config),
      coeff_(GenAlphaCoefficients::from_spectral_radius(config.spectral_radius)),
      dt_(dt) {
  config_.validate();
  if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidInput("time step must be positive");
  const auto n = static_cast<Eigen::Index>(system.size());
  y_prev_.resize(n);
  ydot_prev_.resize(n);
  y_af_.resize(n);
  ydot_am_.resize(n);
  r_.resize(n);
  delta_.resize(n);
  K_.resize(n, n);
}

void GeneralizedAlpha::factorize(double t) {
  system_->tangent(t, y_af_, ydot_am_, coeff_.alpha_m, coeff_.alpha_f * coeff_.gamma * dt_, K_);
  lu_.compute(K_);
  factorized_ = true;
}

StepStats GeneralizedAlpha::step(Vector& y, Vector& ydot, double t) {
  const auto n = static_cast<Eigen::Index>(system_->size());
  if (y.size() != n || ydot.size() != n) throw DimensionMismatch("state size does not match the system");
  const double am = coeff_.alpha_m;
  const double af = coeff_.alpha_f;
  const double g = coeff_.gamma;
  y_prev_ = y;
  ydot_prev_ = ydot;
  // Predict: constant y, consistent rate.
  ydot *= (g - 1.0) / g;
  stage_t_ = t + af * dt_;
  StepStats stats;
  for (int iter = 0;; ++iter) {
    y_af_ = y_prev_ + af * (y - y_prev_);
    ydot_am_ = ydot_prev_ + am * (ydot - ydot_prev_);
    system_->residual(stage_t_, y_af_, ydot_am_, r_);
    const double norm = r_.lpNorm<Eigen::Infinity>();
    stats.newton_iterations = iter;
    stats.residual_norm = norm;
    if (!std::isfinite(norm)) throw NewtonDivergence(t, iter, norm);
    if (norm < config_.newton_abs_tol) break;
    if (iter > 0 && newton_converged(norm, config_.newton_abs_tol, system_->residual_scale(stage_t_, y_af_, ydot_am_))) break;
    if (iter >= config_.max_newton_iters) throw NewtonDivergence(t, iter, norm);
    if (!factorized_ || !system_->tangent_is_constant()) factorize(stage_t_);
    delta_.noalias() = lu_.solve(r_);
    ydot -= delta_;
    y -= (g * dt_) * delta_;
  }
  return stats;
}

SteadyState solve_steady(const LpnModel& model, const ElementParams& alpha,
                         std::span<const WindkesselBc> bcs, const IntegratorConfig& config) {
  config.validate();
  const LpnSystem system(model, alpha, bcs, LpnSystem::Inflow::Mean);
  const auto n = static_cast<Eigen::Index>(system.size());
  SteadyState out;
  out.y = Vector::Zero(n);
  const Vector zero = Vector::Zero(n);
  Vector r(n);
  Matrix K(n, n);
  Eigen::PartialPivLU<Matrix> lu;
  // The nonlinear steady problem may need more iterations than a time step.
  const int max_iters = std::max(config.max_newton_iters, 100);
  for (int iter = 0;; ++iter) {
    system.residual(0.0, out.y, zero, r);
    const double norm = r.lpNorm<Eigen::Infinity>();
    out.iterations = iter;
    out.residual_norm = norm;
    if (!std::isfinite(norm)) throw NonConvergence(iter, norm);
    if (newton_converged(norm, config.newton_abs_tol, iter > 0 ? system.residual_scale(0.0, out.y, zero) : 0.0)) {
      out.converged = true;
      return out;
    }
    if (iter >= max_iters) throw NonConvergence(iter, norm);
    if (iter == 0 || !system.tangent_is_constant()) {
      system.tangent(0.0, out.y, zero, 0.0, 1.0, K);
      lu.compute(K);
    }
    out.y -= lu.solve(r);
  }
}

std::pair<Vector, Vector> step(const LpnModel& model, const ElementParams& alpha,
                               std::span<const WindkesselBc> bcs, const Vector& y, const Vector& ydot,
                               double t, double dt, const IntegratorConfig& config) {
  const LpnSystem system(model, alpha, bcs);
  GeneralizedAlpha ga(system, config, dt);
  std::pair<Vector, Vector> out{y, ydot};
  ga.step(out.first, out.second, t);
  return out;
}

namespace {

double periodicity_error(const Matrix& current, const Matrix& previous) {
  const double tiny = 1e-12 * std::max(current.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  double err = 0.0;
  for (Eigen::Index j = 0; j < current.cols(); ++j) {
    const double diff = (current.col(j) - previous.col(j)).cwiseAbs().maxCoeff();
    const double scale = std::max(current.col(j).cwiseAbs().maxCoeff(), tiny);
    if (diff > 0.0) err = std::max(err, diff / scale);
  }
  return err;
}

}  // namespace

ForwardResult run_cycles(const LpnModel& model, const ElementParams& alpha,
                         std::span<const WindkesselBc> bcs, const IntegratorConfig& config,
                         const RunOptions& options) {
  config.validate();
  const std::size_t steps = config.steps_for(model.period());
  const double dt = model.period() / static_cast<double>(steps);
  const LpnSystem system(model, alpha, bcs);
  const auto n = static_cast<Eigen::Index>(system.size());

  Vector y, ydot;
  if (options.initial_state) {
    y = options.initial_state->first;
    ydot = options.initial_state->second;
    if (y.size() != n || ydot.size() != n) throw DimensionMismatch("initial state size does not match the model");
  } else {
    y = solve_steady(model, alpha, bcs, config).y;
    ydot = Vector::Zero(n);
  }

  GeneralizedAlpha ga(system, config, dt);
  const auto rows = static_cast<Eigen::Index>(steps + 1);
  Matrix cur_y(rows, n), cur_dot(rows, n), prev_y(rows, n);
  Matrix stage_y, stage_dot;
  std::vector<double> stage_t;
  if (options.record_stage) {
    stage_y.resize(rows - 1, n);
    stage_dot.resize(rows - 1, n);
    stage_t.resize(steps);
  }

  ForwardResult result;
  for (int cycle = 1; cycle <= config.cycles_max; ++cycle) {
    cur_y.row(0) = y.transpose();
    cur_dot.row(0) = ydot.transpose();
    for (std::size_t k = 0; k < steps; ++k) {
      const double t = static_cast<double>(k) * dt;
      const StepStats s = ga.step(y, ydot, t);
      result.total_newton_iterations += s.newton_iterations;
      const auto row = static_cast<Eigen::Index>(k + 1);
      cur_y.row(row) = y.transpose();
      cur_dot.row(row) = ydot.transpose();
      if (options.record_stage) {
        stage_y.row(row - 1) = ga.stage_y().transpose();
        stage_dot.row(row - 1) = ga.stage_ydot().transpose();
        stage_t[k] = ga.stage_time();
      }
    }
    result.cycles = cycle;
    if (cycle > 1) {
      result.periodicity_error = periodicity_error(cur_y, prev_y);
      if (result.periodicity_error < config.periodicity_tol) {
        result.periodic = true;
        break;
      }
    }
    prev_y.swap(cur_y);
    if (cycle == config.cycles_max) prev_y.swap(cur_y);
  }

  Trajectory& traj = result.trajectory;
  traj.times.resize(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) traj.times[k] = static_cast<double>(k) * dt;
  traj.y = std::move(cur_y);
  traj.ydot = std::move(cur_dot);
  if (options.record_stage) {
    Trajectory st;
    st.times = std::move(stage_t);
    st.y = std::move(stage_y);
    st.ydot = std::move(stage_dot);
    result.stage = std::move(st);
  }
  return result;
}

}  // namespace lpncal
