// lpncal: command line front end of the lpncal library.
//
// Exit codes: 0 success, 2 awaiting the high-fidelity hand-off, 1 error.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lpncal/calibration.hpp"
#include "lpncal/errors.hpp"
#include "lpncal/forward_solver.hpp"
#include "lpncal/inverse_lm.hpp"
#include "lpncal/io.hpp"
#include "lpncal/observations.hpp"
#include "lpncal/smc.hpp"
#include "lpncal/spline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitAwaiting = 2;

struct ForwardFlags {
  std::optional<int> cycles;
  std::optional<double> dt;
  std::optional<std::size_t> steps;
  std::optional<double> rho;
  std::optional<double> newton_tol;
  std::optional<double> periodicity_tol;

  void add(CLI::App* app) {
    app->add_option("--cycles", cycles, "Maximum number of cardiac cycles")->check(CLI::PositiveNumber);
    app->add_option("--dt", dt, "Time step (s); overrides --steps")->check(CLI::PositiveNumber);
    app->add_option("--steps", steps, "Time steps per cycle")->check(CLI::PositiveNumber);
    app->add_option("--rho", rho, "Generalized-alpha spectral radius")->check(CLI::Range(0.0, 1.0));
    app->add_option("--newton-tol", newton_tol, "Newton absolute residual tolerance")->check(CLI::PositiveNumber);
    app->add_option("--periodicity-tol", periodicity_tol, "Relative cycle-to-cycle tolerance")
        ->check(CLI::PositiveNumber);
  }

  void apply(lpncal::IntegratorConfig& c) const {
    if (cycles) c.cycles_max = *cycles;
    if (dt) c.time_step = *dt;
    if (steps) c.steps_per_cycle = *steps;
    if (rho) c.spectral_radius = *rho;
    if (newton_tol) c.newton_abs_tol = *newton_tol;
    if (periodicity_tol) c.periodicity_tol = *periodicity_tol;
  }
};

// Accepts "R,S" as well as repeated flags.
std::vector<std::string> split_kinds(const std::vector<std::string>& raw) {
  std::vector<std::string> out;
  for (const auto& item : raw) {
    std::stringstream ss(item);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (!tok.empty()) out.push_back(tok);
    }
  }
  return out;
}

lpncal::ParamKind parse_kind(const std::string& k) {
  if (k == "R") return lpncal::ParamKind::R;
  if (k == "C") return lpncal::ParamKind::C;
  if (k == "L") return lpncal::ParamKind::L;
  if (k == "S") return lpncal::ParamKind::S;
  throw lpncal::InvalidInput("unknown parameter kind '" + k + "' (expected R, C, L or S)");
}

json vec_json(const lpncal::Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw lpncal::InvalidInput("cannot write '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

// ---- simulate ---------------------------------------------------------------

struct SimulateArgs {
  std::string model;
  std::string out;
  std::string deriv_out;
  std::vector<double> theta;
  ForwardFlags forward;
};

int run_simulate(const SimulateArgs& a) {
  const lpncal::LpnModel model = lpncal::load_model(a.model);
  lpncal::IntegratorConfig cfg;
  a.forward.apply(cfg);
  auto bcs = model.nominal_bcs();
  if (!a.theta.empty()) {
    if (a.theta.size() != model.outlets().size()) {
      throw lpncal::InvalidInput("--theta needs one value per outlet");
    }
    bcs = model.nominal_windkessel()
              .with_theta(Eigen::Map<const lpncal::Vector>(a.theta.data(), static_cast<Eigen::Index>(a.theta.size())))
              .decode();
  }
  const auto result = lpncal::run_cycles(model, model.nominal_params(), bcs, cfg);
  lpncal::write_trajectory_csv(a.out, result.trajectory, model);
  if (!a.deriv_out.empty()) lpncal::write_trajectory_csv(a.deriv_out, result.trajectory, model, true);
  std::cerr << "cycles " << result.cycles << ", periodicity error " << result.periodicity_error << "\n";
  if (!result.periodic) {
    std::cerr << "warning: periodicity tolerance not reached after " << result.cycles << " cycles\n";
  }
  return kExitOk;
}

// ---- optimize ---------------------------------------------------------------

struct OptimizeArgs {
  std::string model;
  std::string obs;
  std::string obs_deriv;
  std::string out;
  std::vector<std::string> freeze;
  std::size_t resample = 100;
  bool no_row_scaling = false;
  std::optional<double> lower_bound;
  std::optional<int> max_iters;
  std::optional<double> initial_damping;
  ForwardFlags forward;
};

int run_optimize(const OptimizeArgs& a) {
  const lpncal::LpnModel model = lpncal::load_model(a.model);
  const auto deriv = a.obs_deriv.empty() ? std::nullopt : std::optional<fs::path>(a.obs_deriv);
  const lpncal::Trajectory raw = lpncal::read_trajectory_csv(a.obs, model, deriv);

  lpncal::Trajectory resampled;
  if (raw.ydot) {
    std::vector<double> grid(a.resample);
    for (std::size_t i = 0; i < a.resample; ++i) {
      grid[i] = raw.times.front() + model.period() * static_cast<double>(i) / static_cast<double>(a.resample);
    }
    resampled = lpncal::resample_periodic(raw, model.period(), grid);
  } else {
    resampled = lpncal::spline_derivative(raw, model.period(), a.resample);
  }

  const lpncal::ElementParams alpha0 = model.nominal_params();
  lpncal::LmConfig lm;
  lm.row_scaling = !a.no_row_scaling;
  lm.export_lower_bound = a.lower_bound;
  if (a.max_iters) lm.max_iters = *a.max_iters;
  if (a.initial_damping) lm.initial_damping = *a.initial_damping;
  const auto kinds = split_kinds(a.freeze);
  if (!kinds.empty()) {
    lm.freeze.assign(alpha0.size(), false);
    for (const auto& k : kinds) {
      const auto mask = alpha0.layout().mask_of(parse_kind(k));
      for (std::size_t i = 0; i < mask.size(); ++i) lm.freeze[i] = lm.freeze[i] || mask[i];
    }
  }
  lpncal::IntegratorConfig fwd;
  a.forward.apply(fwd);

  const auto report = lpncal::optimize_model(model, alpha0, lpncal::ObservationSet::from_trajectory(resampled),
                                             model.nominal_bcs(), lm, fwd);
  lpncal::ElementParams alpha_hat(alpha0.layout_ptr(), report.alpha);
  if (lm.export_lower_bound) alpha_hat = lpncal::project_lower_bound(alpha_hat, *lm.export_lower_bound);
  lpncal::export_optimized_model(a.model, a.out, model, alpha_hat, report);

  std::cerr << "LM " << (report.converged ? "converged" : "stopped") << " after " << report.iterations
            << " iterations, |J^T r| = " << report.grad_norm << ", S = " << report.residual_sum << "\n";
  if (report.stenosis_frozen_retry) std::cerr << "note: retried with stenosis coefficients frozen\n";
  return kExitOk;
}

// ---- calibrate --------------------------------------------------------------

struct CalibrateArgs {
  std::string case_file;
  bool resume = false;
  std::string surrogate;
  std::string workspace;
  std::optional<std::size_t> particles;
  std::optional<double> ess_min;
  std::optional<int> rejuvenation;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> run2_seed;
  std::optional<double> snr;
  std::optional<std::uint64_t> noise_seed;
  std::optional<unsigned> threads;
  std::vector<std::string> freeze;
  ForwardFlags forward;
};

void print_outcome(const lpncal::CalibrationOutcome& o) {
  json j{{"status", o.status == lpncal::CalibrationStatus::Complete ? "complete" : "awaiting_handoff"},
         {"workspace", o.workspace.string()},
         {"run1_map", vec_json(o.theta_map_run1)},
         {"run1_mean", vec_json(o.mean_run1)}};
  if (o.theta_map_run2) j["run2_map"] = vec_json(*o.theta_map_run2);
  if (o.mean_run2) j["run2_mean"] = vec_json(*o.mean_run2);
  if (o.variance_run2) j["run2_variance"] = vec_json(*o.variance_run2);
  std::cout << j.dump(2) << "\n";
}

int run_calibrate(const CalibrateArgs& a) {
  auto c = lpncal::CalibrationCase::from_json_file(a.case_file);
  if (!a.surrogate.empty()) c.surrogate_hifi = fs::path(a.surrogate);
  if (!a.workspace.empty()) c.workspace = fs::path(a.workspace);
  if (a.particles) {
    c.smc.particles = *a.particles;
    if (!a.ess_min) c.smc.ess_min = static_cast<double>(*a.particles) / 2.0;
  }
  if (a.ess_min) c.smc.ess_min = *a.ess_min;
  if (a.rejuvenation) c.smc.rejuvenation_steps = *a.rejuvenation;
  if (a.seed) c.smc.seed = *a.seed;
  if (a.run2_seed) c.run2_seed = *a.run2_seed;
  if (a.snr) c.snr = *a.snr;
  if (a.noise_seed) c.noise_seed = *a.noise_seed;
  if (a.threads) c.smc.threads = *a.threads;
  for (const auto& k : split_kinds(a.freeze)) c.lm_freeze_kinds.push_back(k);
  a.forward.apply(c.forward);

  const auto outcome = a.resume ? lpncal::resume(c) : lpncal::calibrate(c);
  print_outcome(outcome);
  if (outcome.status == lpncal::CalibrationStatus::AwaitingHandoff) {
    std::cerr << "awaiting high-fidelity response: write "
              << (outcome.workspace / lpncal::artifacts::kHifiResponse).string() << " for the request in "
              << (outcome.workspace / lpncal::artifacts::kHifiRequest).string() << ", then rerun with --resume\n";
    return kExitAwaiting;
  }
  return kExitOk;
}

// ---- grid-posterior ---------------------------------------------------------

struct GridArgs {
  std::string model;
  std::string obs;
  std::vector<std::string> axes;
  std::vector<std::size_t> coupling;
  std::string out;
  std::optional<double> prior_lower;
  std::optional<double> prior_upper;
  ForwardFlags forward;
};

lpncal::GridAxis parse_axis(const std::string& spec) {
  lpncal::GridAxis ax;
  char c1 = 0, c2 = 0;
  std::istringstream in(spec);
  if (!(in >> ax.lower >> c1 >> ax.upper >> c2 >> ax.points) || c1 != ':' || c2 != ':') {
    throw lpncal::InvalidInput("axis '" + spec + "' must read lower:upper:points");
  }
  return ax;
}

int run_grid(const GridArgs& a) {
  const lpncal::LpnModel model = lpncal::load_model(a.model);
  const auto obs = lpncal::read_observations(a.obs);
  std::vector<lpncal::GridAxis> axes;
  for (const auto& s : a.axes) axes.push_back(parse_axis(s));
  std::vector<std::size_t> coupling = a.coupling;
  if (coupling.empty()) {
    if (axes.size() != model.outlets().size()) {
      throw lpncal::InvalidInput("--coupling is required unless there is one axis per outlet");
    }
    for (std::size_t i = 0; i < axes.size(); ++i) coupling.push_back(i);
  }
  lpncal::IntegratorConfig cfg;
  a.forward.apply(cfg);
  const lpncal::WindkesselForwardModel fm(model, model.nominal_params(), model.nominal_windkessel(), cfg);
  std::optional<lpncal::Prior> prior;
  if (a.prior_lower || a.prior_upper) {
    if (!(a.prior_lower && a.prior_upper)) throw lpncal::InvalidInput("give both --prior-lower and --prior-upper");
    prior = lpncal::Prior::uniform_box(model.outlets().size(), *a.prior_lower, *a.prior_upper);
  }
  const auto grid = lpncal::grid_posterior(fm.as_function(), axes, coupling, {obs.y_obs, obs.variance},
                                           prior ? &*prior : nullptr);
  lpncal::write_grid_csv(a.out, grid);
  json arg = json::array();
  for (std::size_t i = 0; i < grid.axes.size(); ++i) arg.push_back(grid.axes[i].node(grid.argmax[i]));
  std::cout << json{{"argmax", arg}}.dump() << "\n";
  for (const auto& w : grid.warnings) std::cerr << "warning: " << w << "\n";
  return kExitOk;
}

// ---- metrics ----------------------------------------------------------------

struct MetricsArgs {
  std::string model;
  std::string lo;
  std::string hi;
  std::string json_out;
};

int run_metrics(const MetricsArgs& a) {
  const lpncal::LpnModel model = lpncal::load_model(a.model);
  const auto lo = lpncal::read_trajectory_csv(a.lo, model);
  const auto hi = lpncal::read_trajectory_csv(a.hi, model);
  const auto rep = lpncal::error_metrics(lo, hi, model);
  auto num = [](double x) { return std::isfinite(x) ? json(x) : json(); };
  json caps_p = json::object(), caps_q = json::object();
  for (std::size_t i = 0; i < rep.pressure_caps.size(); ++i) caps_p[rep.pressure_caps[i]] = num(rep.pressure_by_cap[i]);
  for (std::size_t i = 0; i < rep.flow_caps.size(); ++i) caps_q[rep.flow_caps[i]] = num(rep.flow_by_cap[i]);
  const json j{{"eps_p_max", num(rep.pressure_max)},
               {"eps_q_max", num(rep.flow_max)},
               {"pressure_by_cap", caps_p},
               {"flow_by_cap", caps_q},
               {"warnings", rep.warnings}};
  if (!a.json_out.empty()) write_json_file(a.json_out, j);
  std::cout << j.dump(2) << "\n";
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lumped-parameter blood flow: simulation, parameter optimization and Windkessel calibration"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Run a model to a periodic state and write the last cycle");
  s->add_option("--model", sim.model, "Model JSON")->required()->check(CLI::ExistingFile);
  s->add_option("--out", sim.out, "Trajectory CSV")->required();
  s->add_option("--deriv-out", sim.deriv_out, "Also write time derivatives to this CSV");
  s->add_option("--theta", sim.theta, "Log total resistance per outlet (keeps ratio and time constant)");
  sim.forward.add(s);

  OptimizeArgs opt;
  auto* o = app.add_subcommand("optimize", "Fit element parameters to an observed trajectory");
  o->add_option("--model", opt.model, "Model JSON")->required()->check(CLI::ExistingFile);
  o->add_option("--obs", opt.obs, "Observed trajectory CSV (one cycle)")->required()->check(CLI::ExistingFile);
  o->add_option("--obs-deriv", opt.obs_deriv, "Time derivatives of the observed trajectory")
      ->check(CLI::ExistingFile);
  o->add_option("--out", opt.out, "Optimized model JSON")->required();
  o->add_option("--freeze", opt.freeze, "Parameter kinds to hold fixed (R, C, L, S)");
  o->add_option("--resample", opt.resample, "Observation time points")->check(CLI::Range(4, 1000000));
  o->add_flag("--no-row-scaling", opt.no_row_scaling, "Disable residual row normalization");
  o->add_option("--lower-bound", opt.lower_bound, "Raise exported parameters to this bound");
  o->add_option("--max-iters", opt.max_iters, "LM iteration limit")->check(CLI::PositiveNumber);
  o->add_option("--initial-damping", opt.initial_damping, "LM initial damping")->check(CLI::PositiveNumber);
  opt.forward.add(o);

  CalibrateArgs cal;
  auto* c = app.add_subcommand("calibrate", "Two-run Bayesian Windkessel calibration");
  c->add_option("--case", cal.case_file, "Calibration case JSON")->required()->check(CLI::ExistingFile);
  c->add_flag("--resume", cal.resume, "Continue from the hand-off response");
  c->add_option("--surrogate-hifi", cal.surrogate, "0D model standing in for the high-fidelity evaluation")
      ->check(CLI::ExistingFile);
  c->add_option("--workspace", cal.workspace, "Workspace directory");
  c->add_option("--particles", cal.particles, "SMC particle count")->check(CLI::PositiveNumber);
  c->add_option("--ess-min", cal.ess_min, "Resampling threshold")->check(CLI::PositiveNumber);
  c->add_option("--rejuvenation-steps", cal.rejuvenation, "Metropolis moves per iteration")
      ->check(CLI::NonNegativeNumber);
  c->add_option("--seed", cal.seed, "Run 1 seed");
  c->add_option("--run2-seed", cal.run2_seed, "Run 2 seed (default: Run 1 seed + 1)");
  c->add_option("--snr", cal.snr, "Signal-to-noise ratio for synthesized observations")->check(CLI::PositiveNumber);
  c->add_option("--noise-seed", cal.noise_seed, "Seed of the observation noise");
  c->add_option("--threads", cal.threads, "Worker threads (0 = all cores)");
  c->add_option("--freeze", cal.freeze, "Parameter kinds held fixed during optimization");
  cal.forward.add(c);

  GridArgs grid;
  auto* g = app.add_subcommand("grid-posterior", "Posterior density on a tensor grid of theta");
  g->add_option("--model", grid.model, "Model JSON")->required()->check(CLI::ExistingFile);
  g->add_option("--obs", grid.obs, "Observations JSON")->required()->check(CLI::ExistingFile);
  g->add_option("--axis", grid.axes, "Grid axis lower:upper:points (repeat per axis)")->required();
  g->add_option("--coupling", grid.coupling, "Axis index of every outlet theta");
  g->add_option("--out", grid.out, "Grid CSV")->required();
  g->add_option("--prior-lower", grid.prior_lower, "Uniform prior lower bound");
  g->add_option("--prior-upper", grid.prior_upper, "Uniform prior upper bound");
  grid.forward.add(g);

  MetricsArgs met;
  auto* m = app.add_subcommand("metrics", "Maximum pressure and flow errors between two trajectories");
  m->add_option("--model", met.model, "Model JSON")->required()->check(CLI::ExistingFile);
  m->add_option("--lo", met.lo, "Trajectory under test")->required()->check(CLI::ExistingFile);
  m->add_option("--hi", met.hi, "Reference trajectory")->required()->check(CLI::ExistingFile);
  m->add_option("--json", met.json_out, "Write the report to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitError;
  }

  try {
    if (s->parsed()) return run_simulate(sim);
    if (o->parsed()) return run_optimize(opt);
    if (c->parsed()) return run_calibrate(cal);
    if (g->parsed()) return run_grid(grid);
    if (m->parsed()) return run_metrics(met);
  } catch (const lpncal::StageError& e) {
    std::cerr << "error [" << e.stage() << "]: " << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
