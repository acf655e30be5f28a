#pragma once

#include <random>
#include <vector>

#include "lpncal/forward_solver.hpp"
#include "lpncal/inverse_lm.hpp"
#include "lpncal/lpn_model.hpp"

namespace lpncal::testing {

struct Waveform {
  std::vector<double> times;
  std::vector<double> flows;
};

/// mean + amplitude * (sin(2 pi t / T) + 0.5 sin(4 pi t / T)) on `samples` points of [0, T).
Waveform pulsatile_inflow(double mean, double amplitude, std::size_t samples, double period);
Waveform constant_inflow(double q);

/// Inflow node feeding a single Windkessel.
LpnModel single_windkessel(const WindkesselBc& bc, const Waveform& inflow, double period = 1.0);

/// Inflow -> one BloodVessel -> Windkessel.
LpnModel vessel_into_windkessel(const VesselParams& p, const WindkesselBc& bc, const Waveform& inflow,
                                double period = 1.0);

/// Root vessel, one junction with three outlets, three outlet vessels, three
/// Windkessels. The calibration test case.
struct TreeSpec {
  VesselParams root{8.0, 2e-3, 0.8, 0.0};
  std::vector<VesselParams> branches{{20.0, 8e-4, 1.5, 0.0}, {30.0, 6e-4, 2.0, 0.5}, {25.0, 7e-4, 1.8, 0.0}};
  JunctionParams junction{{2.0, 3.0, 2.5}, {0.1, 0.15, 0.12}, {0.0, 0.0, 0.0}};
  std::vector<double> theta{5.0, 5.5, 6.0};
  double ratio = 0.1;
  double tau = 0.15;
  double mean_flow = 5.0;
  double amplitude = 3.0;
  double period = 1.0;
};
LpnModel three_outlet_tree(const TreeSpec& spec = {});

/// Root vessel, a two-outlet junction, two outlet vessels.
LpnModel two_branch_tree();

/// Random tree with at most `max_vessels` vessels and `max_junctions`
/// junctions; every parameter (vessels and junctions) drawn positive.
LpnModel random_network(std::mt19937_64& rng, std::size_t max_vessels = 10, std::size_t max_junctions = 3,
                        bool stenoses = true);

/// Converged periodic cycle at the model's nominal parameters, taken at the
/// integrator's stage states where every element equation holds.
ObservationSet stage_observations(const LpnModel& model, const IntegratorConfig& config = {});

}  // namespace lpncal::testing
