#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lpncal/forward_solver.hpp"
#include "lpncal/lpn_model.hpp"
#include "lpncal/smc.hpp"
#include "lpncal/trajectory.hpp"

namespace lpncal {

/// Clinical-style observations: inlet pressure extrema and the cycle-mean
/// flow of every outlet, in outlet order.
struct ObservationVector {
  double p_in_min = 0.0;
  double p_in_max = 0.0;
  std::vector<double> q_mean;

  std::size_t size() const noexcept { return 2 + q_mean.size(); }
  Vector to_vector() const;
  static ObservationVector from_vector(const Vector& v);
};

/// Extract observations from a trajectory covering one cycle. Flow means use
/// the trapezoidal rule closed over the period.
ObservationVector extract_observations(const Trajectory& traj, const LpnModel& model);

struct NoisyObservations {
  Vector y_true;
  Vector y_obs;
  NoiseModel noise;  // variance from y_obs and the SNR
  double snr = 0.0;
  std::uint64_t seed = 0;
};

/// Additive Gaussian noise with variance y_true^2 / snr.
NoisyObservations synthesize_noisy_observations(const ObservationVector& y_true, double snr,
                                                std::uint64_t seed);

struct ErrorReport {
  double pressure_max = 0.0;  // epsilon_P,max
  double flow_max = 0.0;      // epsilon_Q,max
  std::vector<std::string> pressure_caps;  // inlet, then outlets
  std::vector<double> pressure_by_cap;
  std::vector<std::string> flow_caps;      // outlets
  std::vector<double> flow_by_cap;         // NaN where the reference flow range is zero
  std::vector<std::string> warnings;
};

/// Maximum pressure and flow errors of `lo` against reference `hi` at the
/// model's caps. When the time grids differ, the finer trajectory is
/// resampled (periodic spline) onto the coarser grid.
ErrorReport error_metrics(const Trajectory& lo, const Trajectory& hi, const LpnModel& model);

/// Maps a theta vector (log total resistance per outlet) to observations by
/// running the network to a periodic state.
class WindkesselForwardModel {
 public:
  WindkesselForwardModel(LpnModel model, ElementParams alpha, WindkesselParamVector bcs,
                         IntegratorConfig config);

  std::optional<Vector> operator()(const Vector& theta) const;
  ForwardResult simulate(const Vector& theta) const;
  ForwardModel as_function() const;

  const LpnModel& model() const noexcept { return *model_; }
  const ElementParams& alpha() const noexcept { return *alpha_; }
  const WindkesselParamVector& windkessels() const noexcept { return bcs_; }
  const IntegratorConfig& config() const noexcept { return config_; }

 private:
  std::shared_ptr<const LpnModel> model_;
  std::shared_ptr<const ElementParams> alpha_;
  WindkesselParamVector bcs_;
  IntegratorConfig config_;
};

struct GridAxis {
  double lower = 0.0;
  double upper = 1.0;
  std::size_t points = 10;

  double node(std::size_t i) const;
  double spacing() const;
  /// Trapezoidal weight in units of the spacing (1/2 at the ends).
  double weight(std::size_t i) const;
};

struct GridPosterior {
  std::vector<GridAxis> axes;
  std::vector<std::size_t> coupling;  // theta component -> axis
  Vector density;                     // flattened, axis 0 fastest
  std::vector<std::size_t> argmax;    // per-axis index of the maximum
  std::vector<std::string> warnings;

  std::size_t flat_index(std::span<const std::size_t> idx) const;
  std::vector<std::size_t> unflatten(std::size_t flat) const;
  double cell_weight(std::size_t flat) const;
  Vector theta_at(std::size_t flat) const;
  /// Marginal density along one axis (trapezoidal over the other axes).
  Vector marginal(std::size_t axis) const;
};

/// Prior times likelihood on a tensor grid, normalized so that the
/// trapezoidal weighted sum over the grid equals 1. Failed evaluations
/// contribute zero density.
GridPosterior grid_posterior(const ForwardModel& model, std::vector<GridAxis> axes,
                             std::vector<std::size_t> coupling, const NoiseModel& noise,
                             const Prior* prior = nullptr);

}  // namespace lpncal
