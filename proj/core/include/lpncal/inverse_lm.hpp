#pragma once

#include <optional>
#include <span>
#include <vector>

#include "lpncal/forward_solver.hpp"
#include "lpncal/lpn_model.hpp"
#include "lpncal/trajectory.hpp"

namespace lpncal {

/// Observed states and rates at every node point for n_obs time samples.
struct ObservationSet {
  Trajectory trajectory;  // ydot required
  /// Per-unknown weights multiplied into the scaled residual rows that the
  /// unknown's node anchors (empty = 1).
  std::vector<double> unknown_weights;

  static ObservationSet from_trajectory(Trajectory traj);
  std::size_t sample_count() const noexcept { return trajectory.sample_count(); }
};

struct LmConfig {
  double initial_damping = 1.0;
  double tol_grad = 1e-5;
  double tol_inc = 1e-10;
  int max_iters = 100;
  /// Normalize each element equation by the RMS of the observed quantity it balances.
  bool row_scaling = true;
  /// Parameters excluded from optimization (empty = none), indexed like alpha.
  std::vector<bool> freeze;
  /// Optional lower bound applied when exporting the optimized parameters.
  std::optional<double> export_lower_bound;
  /// Override the damping factor in every iteration (testing aid: 0 = Gauss-Newton).
  std::optional<double> fixed_damping;

  void validate(std::size_t param_count) const;
};

struct LmReport {
  Vector alpha;
  int iterations = 0;
  double grad_norm = 0.0;
  double inc_norm = 0.0;
  double residual_sum = 0.0;
  bool converged = false;
  std::vector<double> grad_history;
  std::vector<double> damping_history;
  /// Set when the first optimum failed a forward run and LM was rerun with
  /// stenosis coefficients frozen at their initial values.
  bool stenosis_frozen_retry = false;
};

struct StackedSystem {
  Vector residual;
  Matrix jacobian;                 // rows x free parameters
  std::vector<std::size_t> free;   // alpha index of every Jacobian column
  Vector row_scale;
};

/// Element equations (vessels and junctions, boundary rows excluded) stacked
/// over all observation samples, with the analytic parameter Jacobian.
StackedSystem stack_system(const LpnModel& model, const ElementParams& alpha,
                           const ObservationSet& obs, const std::vector<bool>& freeze = {},
                           bool row_scaling = true);

/// Row scale factors used by stack_system for the given observations.
Vector stack_row_scale(const LpnModel& model, const ObservationSet& obs, bool row_scaling);

/// Levenberg-Marquardt with diagonal (Marquardt) damping and the gradient
/// ratio damping update. Returns converged=false at max_iters with the best
/// iterate seen. Throws SingularNormalEquations.
LmReport lm_optimize(const LpnModel& model, const ElementParams& alpha0, const ObservationSet& obs,
                     const LmConfig& config = {});

/// LM followed by a forward run of the optimized model with the given
/// Windkessels; if the forward run fails, LM is repeated with every
/// stenosis coefficient frozen at its alpha0 value.
LmReport optimize_model(const LpnModel& model, const ElementParams& alpha0,
                        const ObservationSet& obs, std::span<const WindkesselBc> bcs,
                        const LmConfig& config = {}, const IntegratorConfig& forward = {});

/// alpha with every entry below `bound` raised to it.
ElementParams project_lower_bound(const ElementParams& alpha, double bound);

}  // namespace lpncal
