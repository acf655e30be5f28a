#include "lpncal/inverse_lm.hpp"

#include <cmath>
#include <limits>

#include <Eigen/QR>

#include "lpncal/elements.hpp"
#include "lpncal/errors.hpp"

namespace lpncal {

ObservationSet ObservationSet::from_trajectory(Trajectory traj) {
  traj.validate();
  if (!traj.ydot) throw InvalidInput("observations need state derivatives");
  ObservationSet obs;
  obs.trajectory = std::move(traj);
  return obs;
}

void LmConfig::validate(std::size_t param_count) const {
  if (!(initial_damping > 0.0)) throw InvalidInput("initial damping must be positive");
  if (!(tol_grad > 0.0) || !(tol_inc > 0.0)) throw InvalidInput("LM tolerances must be positive");
  if (max_iters < 1) throw InvalidInput("LM needs at least one iteration");
  if (!freeze.empty() && freeze.size() != param_count) {
    throw DimensionMismatch("freeze mask has " + std::to_string(freeze.size()) + " entries, alpha has " +
                            std::to_string(param_count));
  }
  if (fixed_damping && !(*fixed_damping >= 0.0)) throw InvalidInput("fixed damping must be non-negative");
}

namespace {

std::vector<std::size_t> vessel_dofs(const BloodVessel& v) {
  return {LpnModel::pressure_dof(v.inlet), LpnModel::flow_dof(v.inlet),
          LpnModel::pressure_dof(v.outlet), LpnModel::flow_dof(v.outlet)};
}

std::vector<std::size_t> junction_dofs(const BloodVesselJunction& j) {
  std::vector<std::size_t> d{LpnModel::pressure_dof(j.inlet), LpnModel::flow_dof(j.inlet)};
  for (std::size_t o : j.outlets) {
    d.push_back(LpnModel::pressure_dof(o));
    d.push_back(LpnModel::flow_dof(o));
  }
  return d;
}

void gather_row(const Matrix& m, Eigen::Index k, const std::vector<std::size_t>& dofs, Vector& out) {
  out.resize(static_cast<Eigen::Index>(dofs.size()));
  for (std::size_t i = 0; i < dofs.size(); ++i) out[static_cast<Eigen::Index>(i)] = m(k, static_cast<Eigen::Index>(dofs[i]));
}

double rms(const Matrix& y, std::size_t col) {
  const double v = std::sqrt(y.col(static_cast<Eigen::Index>(col)).squaredNorm() / static_cast<double>(y.rows()));
  return v > 0.0 && std::isfinite(v) ? v : 1.0;
}

void check_observations(const LpnModel& model, const ElementParams& alpha, const ObservationSet& obs) {
  if (alpha.size() != model.layout()->size()) throw DimensionMismatch("alpha does not match the model layout");
  const Trajectory& tr = obs.trajectory;
  if (!tr.ydot) throw InvalidInput("observations need state derivatives");
  if (tr.unknown_count() != model.unknown_count()) {
    throw DimensionMismatch("observations have " + std::to_string(tr.unknown_count()) + " columns, model has " +
                            std::to_string(model.unknown_count()) + " unknowns");
  }
  if (tr.sample_count() == 0) throw InvalidInput("observations are empty");
  if (!obs.unknown_weights.empty() && obs.unknown_weights.size() != model.unknown_count()) {
    throw DimensionMismatch("unknown weights do not match the model");
  }
}

}  // namespace

Vector stack_row_scale(const LpnModel& model, const ObservationSet& obs, bool row_scaling) {
  const std::size_t m = model.element_equation_count();
  Vector scale = Vector::Ones(static_cast<Eigen::Index>(m));
  const Matrix& y = obs.trajectory.y;
  auto weight = [&](std::size_t dof) { return obs.unknown_weights.empty() ? 1.0 : obs.unknown_weights[dof]; };
  // Momentum rows balance pressures, mass rows balance flows; each is
  // normalized by the observed RMS at the element inlet.
  for (std::size_t v = 0; v < model.vessels().size(); ++v) {
    const std::size_t p = LpnModel::pressure_dof(model.vessels()[v].inlet);
    const std::size_t q = LpnModel::flow_dof(model.vessels()[v].inlet);
    const auto row = static_cast<Eigen::Index>(model.vessel_row(v));
    scale[row] = weight(p) / (row_scaling ? rms(y, p) : 1.0);
    scale[row + 1] = weight(q) / (row_scaling ? rms(y, q) : 1.0);
  }
  for (std::size_t j = 0; j < model.junctions().size(); ++j) {
    const auto& jun = model.junctions()[j];
    const std::size_t p = LpnModel::pressure_dof(jun.inlet);
    const std::size_t q = LpnModel::flow_dof(jun.inlet);
    const auto row = static_cast<Eigen::Index>(model.junction_row(j));
    scale[row] = weight(q) / (row_scaling ? rms(y, q) : 1.0);
    for (std::size_t i = 0; i < jun.outlets.size(); ++i) {
      scale[row + 1 + static_cast<Eigen::Index>(i)] = weight(p) / (row_scaling ? rms(y, p) : 1.0);
    }
  }
  return scale;
}

StackedSystem stack_system(const LpnModel& model, const ElementParams& alpha, const ObservationSet& obs,
                           const std::vector<bool>& freeze, bool row_scaling) {
  check_observations(model, alpha, obs);
  const std::size_t np = alpha.size();
  if (!freeze.empty() && freeze.size() != np) throw DimensionMismatch("freeze mask does not match alpha");

  StackedSystem out;
  std::vector<long> column(np, -1);
  for (std::size_t i = 0; i < np; ++i) {
    if (freeze.empty() || !freeze[i]) {
      column[i] = static_cast<long>(out.free.size());
      out.free.push_back(i);
    }
  }
  const std::size_t m = model.element_equation_count();
  const std::size_t nt = obs.sample_count();
  const auto rows = static_cast<Eigen::Index>(m * nt);
  out.residual = Vector::Zero(rows);
  out.jacobian = Matrix::Zero(rows, static_cast<Eigen::Index>(out.free.size()));
  out.row_scale = stack_row_scale(model, obs, row_scaling);

  const Matrix& Y = obs.trajectory.y;
  const Matrix& D = *obs.trajectory.ydot;
  const auto& layout = alpha.layout();

  std::vector<std::vector<std::size_t>> vdofs, jdofs;
  for (const auto& v : model.vessels()) vdofs.push_back(vessel_dofs(v));
  for (const auto& j : model.junctions()) jdofs.push_back(junction_dofs(j));
  std::vector<VesselParams> vparams;
  for (std::size_t v = 0; v < model.vessels().size(); ++v) vparams.push_back(alpha.vessel(v));
  std::vector<JunctionParams> jparams;
  for (std::size_t j = 0; j < model.junctions().size(); ++j) jparams.push_back(alpha.junction(j));

  Vector yl, dl;
  auto emit = [&](Eigen::Index base, std::size_t local_row0, const Vector& r, const Matrix& J,
                  std::size_t param_offset) {
    for (Eigen::Index a = 0; a < r.size(); ++a) {
      const auto erow = static_cast<Eigen::Index>(local_row0) + a;
      const double s = out.row_scale[erow];
      out.residual[base + erow] = s * r[a];
      for (Eigen::Index b = 0; b < J.cols(); ++b) {
        const long col = column[param_offset + static_cast<std::size_t>(b)];
        if (col >= 0) out.jacobian(base + erow, col) = s * J(a, b);
      }
    }
  };

  for (std::size_t k = 0; k < nt; ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const auto base = static_cast<Eigen::Index>(k * m);
    for (std::size_t v = 0; v < vdofs.size(); ++v) {
      gather_row(Y, kk, vdofs[v], yl);
      gather_row(D, kk, vdofs[v], dl);
      const auto c = blood_vessel_contribution(vparams[v], yl, dl);
      const auto J = blood_vessel_param_jacobian(vparams[v], yl, dl);
      emit(base, model.vessel_row(v), c.residual(yl, dl), J.J, layout.vessel_offset(v));
    }
    for (std::size_t j = 0; j < jdofs.size(); ++j) {
      gather_row(Y, kk, jdofs[j], yl);
      gather_row(D, kk, jdofs[j], dl);
      const auto c = junction_contribution(jparams[j], yl, dl);
      const auto J = junction_param_jacobian(jparams[j], yl, dl);
      emit(base, model.junction_row(j), c.residual(yl, dl), J.J, layout.junction_offset(j));
    }
  }
  return out;
}

LmReport lm_optimize(const LpnModel& model, const ElementParams& alpha0, const ObservationSet& obs,
                     const LmConfig& config) {
  config.validate(alpha0.size());
  check_observations(model, alpha0, obs);

  ElementParams alpha = alpha0;
  LmReport report;
  double best_sum = std::numeric_limits<double>::infinity();
  Vector best = alpha.values();
  double lambda = config.initial_damping;
  double prev_grad = 0.0;

  auto evaluate = [&](const ElementParams& a) {
    return stack_system(model, a, obs, config.freeze, config.row_scaling);
  };

  for (int iter = 1; iter <= config.max_iters; ++iter) {
    const StackedSystem sys = evaluate(alpha);
    const double sum = sys.residual.squaredNorm();
    if (!std::isfinite(sum)) throw InvalidInput("non-finite residual in LM iteration " + std::to_string(iter));
    if (sum < best_sum) {
      best_sum = sum;
      best = alpha.values();
    }
    const Vector grad = sys.jacobian.transpose() * sys.residual;
    const double gnorm = grad.norm();
    if (iter > 1 && prev_grad > 0.0) lambda *= gnorm / prev_grad;
    if (config.fixed_damping) lambda = *config.fixed_damping;
    prev_grad = gnorm;

    const Eigen::Index p = sys.jacobian.cols();
    Vector delta = Vector::Zero(p);
    if (p > 0) {
      // Marquardt damping with diag(J^T J); columns are scaled to unit norm
      // and the damped system is solved as an augmented least-squares problem.
      const Vector colnorm = sys.jacobian.colwise().norm().transpose();
      for (Eigen::Index c = 0; c < p; ++c) {
        if (!(colnorm[c] > 0.0) || !std::isfinite(colnorm[c])) {
          throw SingularNormalEquations("parameter '" + alpha.layout().slot(sys.free[static_cast<std::size_t>(c)]).name +
                                        "' has a zero Jacobian column");
        }
      }
      const Eigen::Index rows = sys.jacobian.rows();
      Matrix aug(rows + p, p);
      aug.topRows(rows) = sys.jacobian * colnorm.cwiseInverse().asDiagonal();
      aug.bottomRows(p) = std::sqrt(lambda) * Matrix::Identity(p, p);
      Vector rhs = Vector::Zero(rows + p);
      rhs.head(rows) = -sys.residual;
      const Eigen::ColPivHouseholderQR<Matrix> qr(aug);
      if (qr.rank() < p) throw SingularNormalEquations("damped normal equations are rank deficient");
      delta = qr.solve(rhs).cwiseQuotient(colnorm);
    }
    const double inc = delta.norm();
    for (Eigen::Index c = 0; c < p; ++c) {
      alpha.values()[static_cast<Eigen::Index>(sys.free[static_cast<std::size_t>(c)])] += delta[c];
    }
    report.iterations = iter;
    report.grad_norm = gnorm;
    report.inc_norm = inc;
    report.grad_history.push_back(gnorm);
    report.damping_history.push_back(lambda);
    if (gnorm < config.tol_grad && inc < config.tol_inc) {
      report.converged = true;
      break;
    }
  }

  const double final_sum = evaluate(alpha).residual.squaredNorm();
  if (report.converged || final_sum <= best_sum) {
    report.alpha = alpha.values();
    report.residual_sum = final_sum;
  } else {
    report.alpha = best;
    report.residual_sum = best_sum;
  }
  return report;
}

ElementParams project_lower_bound(const ElementParams& alpha, double bound) {
  ElementParams out = alpha;
  out.values() = out.values().cwiseMax(bound);
  return out;
}

LmReport optimize_model(const LpnModel& model, const ElementParams& alpha0, const ObservationSet& obs,
                        std::span<const WindkesselBc> bcs, const LmConfig& config,
                        const IntegratorConfig& forward) {
  auto forward_ok = [&](const LmReport& rep) {
    ElementParams a(alpha0.layout_ptr(), rep.alpha);
    if (config.export_lower_bound) a = project_lower_bound(a, *config.export_lower_bound);
    try {
      const ForwardResult fr = run_cycles(model, a, bcs, forward);
      return fr.trajectory.y.allFinite();
    } catch (const Error&) {
      return false;
    }
  };

  LmReport report = lm_optimize(model, alpha0, obs, config);
  if (forward_ok(report)) return report;

  LmConfig retry = config;
  const auto smask = alpha0.layout().mask_of(ParamKind::S);
  if (retry.freeze.empty()) retry.freeze.assign(alpha0.size(), false);
  for (std::size_t i = 0; i < smask.size(); ++i) retry.freeze[i] = retry.freeze[i] || smask[i];
  report = lm_optimize(model, alpha0, obs, retry);
  report.stenosis_frozen_retry = true;
  return report;
}

}  // namespace lpncal
