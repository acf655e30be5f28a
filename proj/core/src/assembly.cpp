#include <string>

#include "lpncal/elements.hpp"
#include "lpncal/errors.hpp"
#include "lpncal/lpn_model.hpp"

namespace lpncal {

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

Vector gather(const Vector& global, const std::vector<std::size_t>& dofs) {
  Vector local(static_cast<Eigen::Index>(dofs.size()));
  for (std::size_t i = 0; i < dofs.size(); ++i) {
    local[static_cast<Eigen::Index>(i)] = global[static_cast<Eigen::Index>(dofs[i])];
  }
  return local;
}

void scatter_rows(Vector& r, std::size_t row, const Vector& local) {
  r.segment(static_cast<Eigen::Index>(row), local.size()) = local;
}

}  // namespace

Vector assemble_residual(const LpnModel& model, const ElementParams& alpha,
                         std::span<const WindkesselBc> bcs, const Vector& y, const Vector& ydot,
                         double t) {
  const auto n = static_cast<Eigen::Index>(model.unknown_count());
  if (y.size() != n || ydot.size() != n) {
    throw DimensionMismatch("state vectors have " + std::to_string(y.size()) + "/" +
                            std::to_string(ydot.size()) + " entries, model has " +
                            std::to_string(n) + " unknowns");
  }
  if (alpha.size() != model.layout()->size()) throw DimensionMismatch("alpha does not match the model layout");
  if (bcs.size() != model.outlets().size()) throw DimensionMismatch("Windkessel count does not match outlets");

  Vector r(n);
  for (std::size_t v = 0; v < model.vessels().size(); ++v) {
    const auto dofs = vessel_dofs(model.vessels()[v]);
    const Vector yl = gather(y, dofs);
    const Vector dl = gather(ydot, dofs);
    scatter_rows(r, model.vessel_row(v), blood_vessel_contribution(alpha.vessel(v), yl, dl).residual(yl, dl));
  }
  for (std::size_t j = 0; j < model.junctions().size(); ++j) {
    const auto dofs = junction_dofs(model.junctions()[j]);
    const Vector yl = gather(y, dofs);
    const Vector dl = gather(ydot, dofs);
    scatter_rows(r, model.junction_row(j), junction_contribution(alpha.junction(j), yl, dl).residual(yl, dl));
  }
  for (std::size_t o = 0; o < model.outlets().size(); ++o) {
    const std::size_t node = model.outlets()[o].node;
    const std::vector<std::size_t> dofs{LpnModel::pressure_dof(node), LpnModel::flow_dof(node)};
    const Vector yl = gather(y, dofs);
    const Vector dl = gather(ydot, dofs);
    scatter_rows(r, model.outlet_row(o), windkessel_contribution(bcs[o], yl, dl).residual(yl, dl));
  }
  r[static_cast<Eigen::Index>(model.inflow_row())] =
      y[static_cast<Eigen::Index>(LpnModel::flow_dof(model.inflow().node))] - model.inflow_at(t);
  return r;
}

Vector assemble_residual(const LpnModel& model, const ElementParams& alpha,
                         const WindkesselParamVector& theta, const Vector& y, const Vector& ydot,
                         double t) {
  if (theta.size() != model.outlets().size()) throw DimensionMismatch("theta count does not match outlets");
  const auto bcs = theta.decode();
  return assemble_residual(model, alpha, bcs, y, ydot, t);
}

}  // namespace lpncal
