#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/LU>

#include "lpncal/lpn_model.hpp"
#include "lpncal/trajectory.hpp"

namespace lpncal {

struct IntegratorConfig {
  double spectral_radius = 0.2;
  std::size_t steps_per_cycle = 1000;
  /// When set, overrides steps_per_cycle with round(period / time_step).
  std::optional<double> time_step;
  int max_newton_iters = 30;
  double newton_abs_tol = 1e-8;
  int cycles_max = 100;
  /// Max relative change of any unknown's cycle waveform between cycles.
  double periodicity_tol = 1e-3;

  void validate() const;
  std::size_t steps_for(double period) const;
};

struct GenAlphaCoefficients {
  double alpha_m = 0.0;
  double alpha_f = 0.0;
  double gamma = 0.0;

  static GenAlphaCoefficients from_spectral_radius(double rho_inf);
};

/// First-order DAE r(t, y, ydot) = 0 consumed by the time integrator.
class DaeSystem {
 public:
  virtual ~DaeSystem() = default;
  virtual std::size_t size() const = 0;
  virtual void residual(double t, const Vector& y, const Vector& ydot, Vector& r) const = 0;
  /// K = w_ydot * dr/dydot + w_y * dr/dy.
  virtual void tangent(double t, const Vector& y, const Vector& ydot, double w_ydot, double w_y,
                       Matrix& K) const = 0;
  /// True when the tangent does not depend on (t, y, ydot).
  virtual bool tangent_is_constant() const { return false; }
  /// Magnitude of the largest term summed into any residual row; bounds the
  /// rounding error of the residual. 0 when unknown.
  virtual double residual_scale(double /*t*/, const Vector& /*y*/, const Vector& /*ydot*/) const {
    return 0.0;
  }
};

/// Newton acceptance: absolute tolerance, floored at the rounding level of
/// the residual terms.
bool newton_converged(double residual_norm, double tol, double residual_scale) noexcept;

/// Assembled network DAE with constant E and F and the stenosis terms in c.
class LpnSystem final : public DaeSystem {
 public:
  enum class Inflow { Pulsatile, Mean };

  LpnSystem(const LpnModel& model, const ElementParams& alpha,
            std::span<const WindkesselBc> bcs, Inflow inflow = Inflow::Pulsatile);

  std::size_t size() const override { return n_; }
  void residual(double t, const Vector& y, const Vector& ydot, Vector& r) const override;
  void tangent(double t, const Vector& y, const Vector& ydot, double w_ydot, double w_y,
               Matrix& K) const override;
  bool tangent_is_constant() const override { return stenoses_.empty(); }
  double residual_scale(double t, const Vector& y, const Vector& ydot) const override;

  const Matrix& E() const noexcept { return E_; }
  const Matrix& F() const noexcept { return F_; }

 private:
  struct Stenosis {
    std::size_t row_momentum;
    std::size_t row_mass;  // vessels only; npos for junction branches
    std::size_t q_dof;
    double S;
    double C;  // vessel capacitance, 0 for junction branches
  };

  const LpnModel* model_;
  std::size_t n_;
  Matrix E_;
  Matrix F_;
  Matrix abs_E_;
  Matrix abs_F_;
  Vector c0_;  // constant part of c (reference pressures)
  std::vector<Stenosis> stenoses_;
  Inflow inflow_mode_;
  double mean_inflow_;
};

struct StepStats {
  int newton_iterations = 0;
  double residual_norm = 0.0;
};

/// Generalized-alpha integrator with Newton-Raphson on the rate update.
/// Owns its scratch storage; one instance per thread.
class GeneralizedAlpha {
 public:
  GeneralizedAlpha(const DaeSystem& system, const IntegratorConfig& config, double dt);

  /// Advance (y, ydot) from t to t + dt in place.
  StepStats step(Vector& y, Vector& ydot, double t);

  const GenAlphaCoefficients& coefficients() const noexcept { return coeff_; }
  double dt() const noexcept { return dt_; }
  /// Intermediate state at which the last step's residual vanished:
  /// time t + alpha_f*dt, y_{n+alpha_f} and ydot_{n+alpha_m}.
  double stage_time() const noexcept { return stage_t_; }
  const Vector& stage_y() const noexcept { return y_af_; }
  const Vector& stage_ydot() const noexcept { return ydot_am_; }

 private:
  void factorize(double t);

  const DaeSystem* system_;
  IntegratorConfig config_;
  GenAlphaCoefficients coeff_;
  double dt_;
  Vector y_prev_;
  Vector ydot_prev_;
  Vector y_af_;
  Vector ydot_am_;
  Vector r_;
  Vector delta_;
  Matrix K_;
  Eigen::PartialPivLU<Matrix> lu_;
  bool factorized_ = false;
  double stage_t_ = 0.0;
};

struct SteadyState {
  Vector y;
  bool converged = false;
  int iterations = 0;
  double residual_norm = 0.0;
};

/// Newton solve of r(alpha, y, 0) = 0 under mean inflow.
/// Throws NonConvergence when the iteration budget is exhausted.
SteadyState solve_steady(const LpnModel& model, const ElementParams& alpha,
                         std::span<const WindkesselBc> bcs, const IntegratorConfig& config = {});

/// One generalized-alpha step of the network.
std::pair<Vector, Vector> step(const LpnModel& model, const ElementParams& alpha,
                               std::span<const WindkesselBc> bcs, const Vector& y,
                               const Vector& ydot, double t, double dt,
                               const IntegratorConfig& config = {});

struct RunOptions {
  /// Caller-supplied (y, ydot) at t = 0; otherwise the steady state is used.
  std::optional<std::pair<Vector, Vector>> initial_state;
  /// Also record the Newton stage states of the final cycle.
  bool record_stage = false;
};

struct ForwardResult {
  Trajectory trajectory;  // final cycle, times relative to its start, steps + 1 samples
  std::optional<Trajectory> stage;
  int cycles = 0;
  bool periodic = false;         // false: cycles_max reached (warning)
  double periodicity_error = 0.0;
  int total_newton_iterations = 0;
};

/// Integrate whole cycles until the periodicity criterion holds or
/// cycles_max is reached. Throws NewtonDivergence.
ForwardResult run_cycles(const LpnModel& model, const ElementParams& alpha,
                         std::span<const WindkesselBc> bcs, const IntegratorConfig& config = {},
                         const RunOptions& options = {});

}  // namespace lpncal
