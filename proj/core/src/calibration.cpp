#include "lpncal/calibration.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "lpncal/errors.hpp"
#include "lpncal/io.hpp"
#include "lpncal/observations.hpp"
#include "lpncal/spline.hpp"

namespace lpncal {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InvalidInput("cannot write '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

json vec_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vector json_vec(const json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j.at(i).get<double>();
  return v;
}

PriorMarginal parse_marginal(const json& j) {
  const std::string kind = j.value("kind", "uniform");
  if (kind == "uniform") return PriorMarginal::uniform(j.at("lower").get<double>(), j.at("upper").get<double>());
  if (kind == "normal") return PriorMarginal::normal(j.at("mean").get<double>(), j.at("stddev").get<double>());
  throw InvalidInput("unknown prior kind '" + kind + "'");
}

/// Exclusive advisory lock on the workspace for the lifetime of the object.
class WorkspaceLock {
 public:
  explicit WorkspaceLock(const fs::path& workspace) {
    const fs::path lock = workspace / artifacts::kLock;
    fd_ = ::open(lock.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0) throw InvalidInput("cannot open lock file '" + lock.string() + "': " + std::strerror(errno));
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw InvalidInput("workspace '" + workspace.string() + "' is in use by another pipeline");
    }
  }
  ~WorkspaceLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  WorkspaceLock(const WorkspaceLock&) = delete;
  WorkspaceLock& operator=(const WorkspaceLock&) = delete;

 private:
  int fd_ = -1;
};

template <typename Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

json smc_json(const SmcResult& r) {
  return {{"seed", r.seed},
          {"map", vec_json(r.map)},
          {"mean", vec_json(r.posterior.weighted_mean())},
          {"variance", vec_json(r.posterior.weighted_covariance().diagonal())},
          {"iterations", r.history.size()},
          {"evaluations", r.evaluations}};
}

Prior prior_for(const CalibrationCase& c, const LpnModel& model) {
  if (c.prior.size() == 0) return Prior::uniform_box(model.outlets().size(), 2.0, 8.0);
  if (c.prior.size() != model.outlets().size()) {
    throw InvalidInput("prior has " + std::to_string(c.prior.size()) + " parameters, model has " +
                       std::to_string(model.outlets().size()) + " outlets");
  }
  return c.prior;
}

CalibrationOutcome resume_locked(const CalibrationCase& c) {
  const fs::path& ws = c.workspace;
  const fs::path request_path = ws / artifacts::kHifiRequest;
  const fs::path response_path = ws / artifacts::kHifiResponse;
  if (!fs::exists(request_path)) throw InvalidInput("no hand-off request in '" + ws.string() + "'; run calibrate first");
  if (!fs::exists(response_path)) throw InvalidInput("hand-off response '" + response_path.string() + "' not found");
  if (fs::exists(ws / artifacts::kOptimizedModel) || fs::exists(ws / artifacts::kRun2Summary)) {
    throw InvalidInput("workspace '" + ws.string() + "' was already resumed");
  }

  const LpnModel model = stage("load", [&] { return load_model(c.model); });
  const Prior prior = prior_for(c, model);
  const ObservationFile obs = read_observations(ws / artifacts::kObservations);
  const NoiseModel noise{obs.y_obs, obs.variance};
  const HifiRequest req = read_hifi_request(request_path);
  const json run1 = read_json(ws / artifacts::kRun1Summary);

  const fs::path deriv = ws / "hifi_response_dot.csv";
  const Trajectory hifi = stage("handoff", [&] {
    return read_trajectory_csv(response_path, model,
                               fs::exists(deriv) ? std::optional<fs::path>(deriv) : std::nullopt);
  });
  const ElementParams alpha0 = model.nominal_params();
  LmConfig lmc = c.lm;
  if (!c.lm_freeze_kinds.empty()) {
    if (lmc.freeze.empty()) lmc.freeze.assign(alpha0.size(), false);
    for (const auto& k : c.lm_freeze_kinds) {
      const ParamKind kind = k == "R" ? ParamKind::R : k == "C" ? ParamKind::C : k == "L" ? ParamKind::L : ParamKind::S;
      const auto mask = alpha0.layout().mask_of(kind);
      for (std::size_t i = 0; i < mask.size(); ++i) lmc.freeze[i] = lmc.freeze[i] || mask[i];
    }
  }
  const LmReport lm = stage("optimize", [&] {
    const ObservationSet set =
        ObservationSet::from_trajectory(hifi.ydot ? hifi : spline_derivative(hifi, model.period(), c.resample));
    return optimize_model(model, alpha0, set, req.windkessels, lmc, c.forward);
  });
  ElementParams alpha_hat(alpha0.layout_ptr(), lm.alpha);
  if (c.lm.export_lower_bound) alpha_hat = project_lower_bound(alpha_hat, *c.lm.export_lower_bound);
  export_optimized_model(c.model, ws / artifacts::kOptimizedModel, model, alpha_hat, lm);

  SmcConfig cfg = c.smc;
  cfg.seed = c.run2_seed.value_or(c.smc.seed + 1);
  const WindkesselForwardModel fm(model, alpha_hat, model.nominal_windkessel(), c.forward);
  const SmcResult run2 = stage("run2", [&] { return run_smc(fm.as_function(), prior, noise, cfg); });
  const auto names = theta_names(model);
  write_posterior_csv(ws / artifacts::kRun2Posterior, run2.posterior, names);
  write_posterior_summary(ws / artifacts::kRun2Summary, run2, names);

  json report{{"status", "complete"},
              {"model", c.model.string()},
              {"seeds", {{"noise", obs.seed ? json(*obs.seed) : json()}, {"run1", run1.at("seed")}, {"run2", cfg.seed}}},
              {"run1", {{"map", run1.at("map")}, {"mean", run1.at("mean")}}},
              {"lm",
               {{"iterations", lm.iterations},
                {"converged", lm.converged},
                {"grad_norm", lm.grad_norm},
                {"inc_norm", lm.inc_norm},
                {"residual_sum", lm.residual_sum},
                {"stenosis_frozen_retry", lm.stenosis_frozen_retry}}},
              {"run2", smc_json(run2)}};
  write_json(ws / artifacts::kReport, report);

  CalibrationOutcome out;
  out.status = CalibrationStatus::Complete;
  out.workspace = ws;
  out.theta_map_run1 = json_vec(run1.at("map"));
  out.mean_run1 = json_vec(run1.at("mean"));
  out.theta_map_run2 = run2.map;
  out.mean_run2 = run2.posterior.weighted_mean();
  out.variance_run2 = run2.posterior.weighted_covariance().diagonal();
  out.lm = lm;
  return out;
}

}  // namespace

CalibrationCase CalibrationCase::from_json_file(const fs::path& path) {
  const json j = read_json(path);
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  auto resolve = [&](const std::string& p) {
    const fs::path q(p);
    return q.is_absolute() ? q : base / q;
  };
  CalibrationCase c;
  try {
    c.model = resolve(j.at("model").get<std::string>());
    c.workspace = resolve(j.at("workspace").get<std::string>());
    if (j.contains("prior")) {
      const auto& p = j.at("prior");
      std::vector<PriorMarginal> marginals;
      if (p.is_array()) {
        for (const auto& m : p) marginals.push_back(parse_marginal(m));
      } else {
        const std::size_t dim = p.at("dim").get<std::size_t>();
        marginals.assign(dim, parse_marginal(p));
      }
      c.prior = Prior(std::move(marginals));
    }
    if (j.contains("observations")) {
      const auto& o = j.at("observations");
      if (o.contains("file")) c.observation_file = resolve(o.at("file").get<std::string>());
      if (o.contains("trajectory")) c.source_trajectory = resolve(o.at("trajectory").get<std::string>());
      c.snr = o.value("snr", c.snr);
      c.noise_seed = o.value("seed", c.noise_seed);
    }
    if (j.contains("smc")) {
      const auto& s = j.at("smc");
      c.smc.particles = s.value("particles", c.smc.particles);
      c.smc.ess_min = s.value("ess_min", static_cast<double>(c.smc.particles) / 2.0);
      c.smc.rejuvenation_steps = s.value("rejuvenation_steps", c.smc.rejuvenation_steps);
      c.smc.seed = s.value("seed", c.smc.seed);
      c.smc.proposal_scale = s.value("proposal_scale", c.smc.proposal_scale);
      c.smc.max_iterations = s.value("max_iterations", c.smc.max_iterations);
      c.smc.threads = s.value("threads", c.smc.threads);
    }
    if (j.contains("run2_seed")) c.run2_seed = j.at("run2_seed").get<std::uint64_t>();
    if (j.contains("lm")) {
      const auto& l = j.at("lm");
      c.lm.initial_damping = l.value("initial_damping", c.lm.initial_damping);
      c.lm.tol_grad = l.value("tol_grad", c.lm.tol_grad);
      c.lm.tol_inc = l.value("tol_inc", c.lm.tol_inc);
      c.lm.max_iters = l.value("max_iters", c.lm.max_iters);
      c.lm.row_scaling = l.value("row_scaling", c.lm.row_scaling);
      if (l.contains("export_lower_bound")) c.lm.export_lower_bound = l.at("export_lower_bound").get<double>();
      if (l.contains("freeze")) {
        for (const auto& k : l.at("freeze")) c.lm_freeze_kinds.push_back(k.get<std::string>());
      }
    }
    c.resample = j.value("resample", c.resample);
    if (j.contains("forward")) {
      const auto& f = j.at("forward");
      c.forward.spectral_radius = f.value("spectral_radius", c.forward.spectral_radius);
      c.forward.steps_per_cycle = f.value("steps_per_cycle", c.forward.steps_per_cycle);
      if (f.contains("time_step")) c.forward.time_step = f.at("time_step").get<double>();
      c.forward.max_newton_iters = f.value("max_newton_iters", c.forward.max_newton_iters);
      c.forward.newton_abs_tol = f.value("newton_abs_tol", c.forward.newton_abs_tol);
      c.forward.cycles_max = f.value("cycles_max", c.forward.cycles_max);
      c.forward.periodicity_tol = f.value("periodicity_tol", c.forward.periodicity_tol);
    }
    if (j.contains("surrogate_hifi")) c.surrogate_hifi = resolve(j.at("surrogate_hifi").get<std::string>());
  } catch (const json::exception& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
  return c;
}

void CalibrationCase::validate() const {
  if (!fs::exists(model)) throw InvalidInput("model file '" + model.string() + "' not found");
  if (workspace.empty()) throw InvalidInput("workspace directory is required");
  if (observation_file.has_value() == source_trajectory.has_value()) {
    throw InvalidInput("exactly one observation source (file or trajectory) is required");
  }
  if (observation_file && !fs::exists(*observation_file)) {
    throw InvalidInput("observation file '" + observation_file->string() + "' not found");
  }
  if (source_trajectory && !fs::exists(*source_trajectory)) {
    throw InvalidInput("source trajectory '" + source_trajectory->string() + "' not found");
  }
  if (surrogate_hifi && !fs::exists(*surrogate_hifi)) {
    throw InvalidInput("surrogate model '" + surrogate_hifi->string() + "' not found");
  }
  for (const auto& k : lm_freeze_kinds) {
    if (k != "R" && k != "C" && k != "L" && k != "S") throw InvalidInput("unknown parameter kind '" + k + "' in freeze");
  }
  if (!(snr > 0.0)) throw InvalidInput("SNR must be positive");
  if (resample < 4) throw InvalidInput("resample count must be at least 4");
  smc.validate();
  forward.validate();
}

CalibrationOutcome calibrate(const CalibrationCase& c) {
  c.validate();
  const fs::path& ws = c.workspace;
  fs::create_directories(ws);
  WorkspaceLock lock(ws);
  if (fs::exists(ws / artifacts::kRun1Summary)) {
    throw InvalidInput("workspace '" + ws.string() + "' already holds a Run 1; resume it or use a new workspace");
  }

  const LpnModel model = stage("load", [&] { return load_model(c.model); });
  const Prior prior = prior_for(c, model);

  ObservationFile obs;
  if (c.observation_file) {
    obs = read_observations(*c.observation_file);
  } else {
    const Trajectory src = stage("observations", [&] { return read_trajectory_csv(*c.source_trajectory, model); });
    const auto truth = extract_observations(src, model);
    const auto noisy = synthesize_noisy_observations(truth, c.snr, c.noise_seed);
    obs = {noisy.y_obs, noisy.noise.variance, noisy.y_true, c.snr, c.noise_seed};
  }
  if (static_cast<std::size_t>(obs.y_obs.size()) != model.outlets().size() + 2) {
    throw InvalidInput("observation vector length does not match the model outlets");
  }
  write_observations(ws / artifacts::kObservations, obs);
  const NoiseModel noise{obs.y_obs, obs.variance};

  const WindkesselForwardModel fm(model, model.nominal_params(), model.nominal_windkessel(), c.forward);
  const SmcResult run1 = stage("run1", [&] { return run_smc(fm.as_function(), prior, noise, c.smc); });
  const auto names = theta_names(model);
  write_posterior_csv(ws / artifacts::kRun1Posterior, run1.posterior, names);
  write_posterior_summary(ws / artifacts::kRun1Summary, run1, names);

  HifiRequest req;
  req.theta = run1.map;
  req.windkessels = model.nominal_windkessel().with_theta(run1.map).decode();
  for (const auto& w : model.outlets()) req.outlet_nodes.push_back(model.nodes()[w.node]);
  req.inflow_times = model.inflow().times;
  req.inflow_flows = model.inflow().flows;
  req.period = model.period();
  req.model = c.model.string();
  write_hifi_request(ws / artifacts::kHifiRequest, req);

  if (!c.surrogate_hifi) {
    CalibrationOutcome out;
    out.status = CalibrationStatus::AwaitingHandoff;
    out.workspace = ws;
    out.theta_map_run1 = run1.map;
    out.mean_run1 = run1.posterior.weighted_mean();
    return out;
  }

  stage("surrogate-hifi", [&] {
    const LpnModel hifi = load_model(*c.surrogate_hifi);
    if (hifi.outlets().size() != req.windkessels.size()) {
      throw InvalidInput("surrogate model has a different number of outlets");
    }
    const ForwardResult fr = run_cycles(hifi, hifi.nominal_params(), req.windkessels, c.forward);
    write_trajectory_csv(ws / artifacts::kHifiResponse, fr.trajectory, hifi);
    return 0;
  });
  return resume_locked(c);
}

CalibrationOutcome resume(const CalibrationCase& c) {
  c.validate();
  if (!fs::exists(c.workspace)) throw InvalidInput("workspace '" + c.workspace.string() + "' does not exist");
  WorkspaceLock lock(c.workspace);
  return resume_locked(c);
}

void write_hifi_request(const fs::path& path, const HifiRequest& req) {
  json wks = json::array();
  for (std::size_t i = 0; i < req.windkessels.size(); ++i) {
    const auto& w = req.windkessels[i];
    wks.push_back({{"node", i < req.outlet_nodes.size() ? req.outlet_nodes[i] : std::string()},
                   {"Rp", w.Rp},
                   {"Rd", w.Rd},
                   {"C", w.C},
                   {"Pref", w.Pref}});
  }
  json j{{"model", req.model},
         {"theta", vec_json(req.theta)},
         {"period", req.period},
         {"inflow", {{"times", req.inflow_times}, {"flows", req.inflow_flows}}},
         {"windkessels", wks}};
  write_json(path, j);
}

HifiRequest read_hifi_request(const fs::path& path) {
  const json j = read_json(path);
  HifiRequest r;
  try {
    r.model = j.value("model", "");
    r.theta = json_vec(j.at("theta"));
    r.period = j.at("period").get<double>();
    r.inflow_times = j.at("inflow").at("times").get<std::vector<double>>();
    r.inflow_flows = j.at("inflow").at("flows").get<std::vector<double>>();
    for (const auto& w : j.at("windkessels")) {
      r.outlet_nodes.push_back(w.value("node", ""));
      r.windkessels.push_back({w.at("Rp").get<double>(), w.at("Rd").get<double>(), w.at("C").get<double>(),
                               w.value("Pref", 0.0)});
    }
  } catch (const json::exception& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
  return r;
}

}  // namespace lpncal
