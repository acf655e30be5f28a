#pragma once

#include <vector>

#include <Eigen/Core>

#include "lpncal/lpn_model.hpp"

namespace lpncal {

/// Local system of one element: r_local = E ydot + F y + c.
/// Rows are the element's equations, columns its local unknowns.
struct ElementContribution {
  Matrix E;
  Matrix F;
  Vector c;
  Matrix dc_dy;
  Matrix dc_dydot;
  /// Global unknown index of every local unknown (filled by the assembler).
  std::vector<std::size_t> dofs;

  Vector residual(const Vector& y, const Vector& ydot) const { return E * ydot + F * y + c; }
};

/// Derivative of the local residual with respect to the element's parameters.
struct ElementParamJacobian {
  Matrix J;
  /// Global alpha index of every local parameter column.
  std::vector<std::size_t> params;
};

/// sgn with sgn(0) = 0.
inline double signum(double x) noexcept { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

/// BloodVessel with local unknowns (P_in, Q_in, P_out, Q_out).
ElementContribution blood_vessel_contribution(const VesselParams& p, const Vector& y,
                                              const Vector& ydot);
/// 2 x 4 Jacobian with parameter columns (R, C, L, S).
ElementParamJacobian blood_vessel_param_jacobian(const VesselParams& p, const Vector& y,
                                                 const Vector& ydot);

/// BloodVesselJunction with local unknowns (P_in, Q_in, P_out_1, Q_out_1, ...).
/// Row 0 is mass conservation; row i is the momentum balance to outlet i.
ElementContribution junction_contribution(const JunctionParams& p, const Vector& y,
                                          const Vector& ydot);
/// (1 + n) x 3n Jacobian with parameter columns (R_1..R_n, L_1..L_n, S_1..S_n).
ElementParamJacobian junction_param_jacobian(const JunctionParams& p, const Vector& y,
                                             const Vector& ydot);

/// Three-element Windkessel with local unknowns (P_in, Q_in).
ElementContribution windkessel_contribution(const WindkesselBc& bc, const Vector& y,
                                            const Vector& ydot);

}  // namespace lpncal
