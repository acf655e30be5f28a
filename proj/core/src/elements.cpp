#include "lpncal/elements.hpp"

#include <cmath>

#include "lpncal/errors.hpp"

namespace lpncal {

namespace {

void require_size(const Vector& v, Eigen::Index n, const char* what) {
  if (v.size() != n) {
    throw DimensionMismatch(std::string(what) + " has " + std::to_string(v.size()) +
                            " entries, expected " + std::to_string(n));
  }
}

}  // namespace

ElementContribution blood_vessel_contribution(const VesselParams& p, const Vector& y,
                                              const Vector& ydot) {
  require_size(y, 4, "vessel state");
  require_size(ydot, 4, "vessel rate");
  const double q = y[1];
  const double aq = std::abs(q);
  const double sq = signum(q);

  ElementContribution out;
  out.E = Matrix::Zero(2, 4);
  out.E(0, 3) = -p.L;
  out.E(1, 0) = -p.C;
  out.E(1, 1) = p.C * p.R;

  out.F = Matrix::Zero(2, 4);
  out.F(0, 0) = 1.0;
  out.F(0, 1) = -p.R;
  out.F(0, 2) = -1.0;
  out.F(1, 1) = 1.0;
  out.F(1, 3) = -1.0;

  out.c = Vector(2);
  out.c[0] = -p.S * aq * q;
  out.c[1] = 2.0 * p.C * p.S * aq * ydot[1];

  out.dc_dy = Matrix::Zero(2, 4);
  out.dc_dy(0, 1) = -2.0 * p.S * aq;
  out.dc_dy(1, 1) = 2.0 * p.C * p.S * sq * ydot[1];

  out.dc_dydot = Matrix::Zero(2, 4);
  out.dc_dydot(1, 1) = 2.0 * p.C * p.S * aq;
  return out;
}

ElementParamJacobian blood_vessel_param_jacobian(const VesselParams& p, const Vector& y,
                                                 const Vector& ydot) {
  require_size(y, 4, "vessel state");
  require_size(ydot, 4, "vessel rate");
  const double q = y[1];
  const double aq = std::abs(q);
  ElementParamJacobian out;
  out.J = Matrix::Zero(2, 4);
  // columns R, C, L, S
  out.J(0, 0) = -q;
  out.J(0, 2) = -ydot[3];
  out.J(0, 3) = -aq * q;
  out.J(1, 0) = p.C * ydot[1];
  out.J(1, 1) = -ydot[0] + (p.R + 2.0 * p.S * aq) * ydot[1];
  out.J(1, 3) = 2.0 * p.C * aq * ydot[1];
  return out;
}

ElementContribution junction_contribution(const JunctionParams& p, const Vector& y,
                                          const Vector& ydot) {
  const auto n = static_cast<Eigen::Index>(p.outlet_count());
  require_size(y, 2 + 2 * n, "junction state");
  require_size(ydot, 2 + 2 * n, "junction rate");
  ElementContribution out;
  out.E = Matrix::Zero(1 + n, 2 + 2 * n);
  out.F = Matrix::Zero(1 + n, 2 + 2 * n);
  out.c = Vector::Zero(1 + n);
  out.dc_dy = Matrix::Zero(1 + n, 2 + 2 * n);
  out.dc_dydot = Matrix::Zero(1 + n, 2 + 2 * n);

  out.F(0, 1) = 1.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index row = 1 + i;
    const Eigen::Index pcol = 2 + 2 * i;
    const Eigen::Index qcol = pcol + 1;
    const auto k = static_cast<std::size_t>(i);
    const double q = y[qcol];
    out.F(0, qcol) = -1.0;
    out.F(row, 0) = 1.0;
    out.F(row, pcol) = -1.0;
    out.F(row, qcol) = -p.R[k];
    out.E(row, qcol) = -p.L[k];
    out.c[row] = -p.S[k] * std::abs(q) * q;
    out.dc_dy(row, qcol) = -2.0 * p.S[k] * std::abs(q);
  }
  return out;
}

ElementParamJacobian junction_param_jacobian(const JunctionParams& p, const Vector& y,
                                             const Vector& ydot) {
  const auto n = static_cast<Eigen::Index>(p.outlet_count());
  require_size(y, 2 + 2 * n, "junction state");
  require_size(ydot, 2 + 2 * n, "junction rate");
  ElementParamJacobian out;
  out.J = Matrix::Zero(1 + n, 3 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index qcol = 3 + 2 * i;
    const double q = y[qcol];
    out.J(1 + i, i) = -q;
    out.J(1 + i, n + i) = -ydot[qcol];
    out.J(1 + i, 2 * n + i) = -std::abs(q) * q;
  }
  return out;
}

ElementContribution windkessel_contribution(const WindkesselBc& bc, const Vector& y,
                                            const Vector& ydot) {
  require_size(y, 2, "Windkessel state");
  require_size(ydot, 2, "Windkessel rate");
  ElementContribution out;
  out.E = Matrix(1, 2);
  out.E << -bc.Rd * bc.C, bc.Rp * bc.Rd * bc.C;
  out.F = Matrix(1, 2);
  out.F << -1.0, bc.Rp + bc.Rd;
  out.c = Vector::Constant(1, bc.Pref);
  out.dc_dy = Matrix::Zero(1, 2);
  out.dc_dydot = Matrix::Zero(1, 2);
  return out;
}

}  // namespace lpncal
