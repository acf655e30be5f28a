// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lpncal/calibration.hpp"
#include "lpncal/elements.hpp"
#include "lpncal/forward_solver.hpp"
#include "lpncal/inverse_lm.hpp"
#include "lpncal/io.hpp"
#include "lpncal/observations.hpp"
#include "lpncal/smc.hpp"
#include "networks.hpp"
#include "oracles.hpp"

using namespace lpncal;
using namespace lpncal::testing;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
  double budget = std::numeric_limits<double>::infinity();
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double now() {
  using clock = std::chrono::steady_clock;
  static const auto t0 = clock::now();
  return std::chrono::duration<double>(clock::now() - t0).count();
}

template <typename Fn>
Verdict timed(double budget, Fn&& fn) {
  const double t0 = now();
  Verdict v = fn();
  v.seconds = now() - t0;
  v.budget = budget;
  if (v.seconds >= budget) v.pass = false;
  return v;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("lpncal_acc_" + tag + "_" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

// ---- 1: element matrices against central differences -----------------------

struct Sampler {
  std::mt19937_64 rng;
  explicit Sampler(std::uint64_t seed) : rng(seed) {}
  double normal(double s) { return std::normal_distribution<double>(0.0, s)(rng); }
  double positive(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  double flow() {
    const double q = positive(0.05, 20.0);
    return std::bernoulli_distribution(0.5)(rng) ? q : -q;
  }
  Vector state(Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = i % 2 == 0 ? normal(1000.0) : flow();
    return v;
  }
  Vector rate(Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(i % 2 == 0 ? 5000.0 : 50.0);
    return v;
  }
};

Verdict element_fidelity() {
  constexpr double tol = 1e-5;
  double worst = 0.0;
  Sampler s(101);
  auto track = [&](const Matrix& a, const Matrix& fd) { worst = std::max(worst, rel_error(a, fd)); };
  for (int k = 0; k < 1000; ++k) {
    const VesselParams p{s.positive(1, 100), s.positive(1e-4, 1e-2), s.positive(0.1, 5), s.positive(0.1, 10)};
    const Vector y = s.state(4), yd = s.rate(4);
    const auto e = blood_vessel_contribution(p, y, yd);
    track(e.dc_dy, fd_jacobian([&](const Vector& x) { return Vector(blood_vessel_contribution(p, x, yd).c); }, y,
                               1e-6, 1e-6));
    track(e.dc_dydot,
          fd_jacobian([&](const Vector& x) { return Vector(blood_vessel_contribution(p, y, x).c); }, yd, 1e-6, 1e-6));
    const Vector a = (Vector(4) << p.R, p.C, p.L, p.S).finished();
    track(blood_vessel_param_jacobian(p, y, yd).J,
          fd_jacobian(
              [&](const Vector& x) {
                return Vector(blood_vessel_contribution({x[0], x[1], x[2], x[3]}, y, yd).residual(y, yd));
              },
              a, 1e-6, 1e-6));
  }
  for (int k = 0; k < 1000; ++k) {
    const std::size_t n = 1 + static_cast<std::size_t>(k % 4);
    JunctionParams p = JunctionParams::zeros(n);
    for (std::size_t i = 0; i < n; ++i) {
      p.R[i] = s.positive(0.1, 20);
      p.L[i] = s.positive(0.01, 1);
      p.S[i] = s.positive(0.1, 5);
    }
    const auto m = static_cast<Eigen::Index>(2 + 2 * n);
    const Vector y = s.state(m), yd = s.rate(m);
    const auto e = junction_contribution(p, y, yd);
    track(e.dc_dy,
          fd_jacobian([&](const Vector& x) { return Vector(junction_contribution(p, x, yd).c); }, y, 1e-6, 1e-6));
    track(e.dc_dydot,
          fd_jacobian([&](const Vector& x) { return Vector(junction_contribution(p, y, x).c); }, yd, 1e-6, 1e-6));
    Vector a(static_cast<Eigen::Index>(3 * n));
    for (std::size_t i = 0; i < n; ++i) {
      a[static_cast<Eigen::Index>(i)] = p.R[i];
      a[static_cast<Eigen::Index>(n + i)] = p.L[i];
      a[static_cast<Eigen::Index>(2 * n + i)] = p.S[i];
    }
    auto of = [n](const Vector& x) {
      JunctionParams q = JunctionParams::zeros(n);
      for (std::size_t i = 0; i < n; ++i) {
        q.R[i] = x[static_cast<Eigen::Index>(i)];
        q.L[i] = x[static_cast<Eigen::Index>(n + i)];
        q.S[i] = x[static_cast<Eigen::Index>(2 * n + i)];
      }
      return q;
    };
    track(junction_param_jacobian(p, y, yd).J,
          fd_jacobian([&](const Vector& x) { return Vector(junction_contribution(of(x), y, yd).residual(y, yd)); }, a,
                      1e-6, 1e-6));
  }
  for (int k = 0; k < 1000; ++k) {
    const WindkesselBc bc{s.positive(10, 1000), s.positive(100, 10000), s.positive(1e-5, 1e-3), s.normal(100)};
    const Vector y = s.state(2), yd = s.rate(2);
    const auto e = windkessel_contribution(bc, y, yd);
    // Linear element: c is constant, so FD of c must vanish to rounding.
    track(e.dc_dy, fd_jacobian([&](const Vector& x) { return Vector(windkessel_contribution(bc, x, yd).c); }, y,
                               1e-6, 1e-6));
    track(e.dc_dydot, fd_jacobian([&](const Vector& x) { return Vector(windkessel_contribution(bc, y, x).c); }, yd,
                                  1e-6, 1e-6));
    // Full residual Jacobians equal E and F + dc/dy.
    track(e.F + e.dc_dy,
          fd_jacobian([&](const Vector& x) { return Vector(e.residual(x, yd)); }, y, 1e-6, 1e-6));
    track(e.E + e.dc_dydot,
          fd_jacobian([&](const Vector& x) { return Vector(e.residual(y, x)); }, yd, 1e-6, 1e-6));
  }
  return {worst < tol, "3 element types x 1000 states, max rel FD error " + fmt("%.2e", worst) + " (tol 1e-5)"};
}

// ---- 2: integrator order ---------------------------------------------------

class Decay final : public DaeSystem {
 public:
  std::size_t size() const override { return 1; }
  void residual(double, const Vector& y, const Vector& yd, Vector& r) const override { r[0] = yd[0] + y[0]; }
  void tangent(double, const Vector&, const Vector&, double wd, double wy, Matrix& K) const override {
    K(0, 0) = wd + wy;
  }
  bool tangent_is_constant() const override { return true; }
};

Verdict integrator_order() {
  const Decay sys;
  const double T = 1.0;
  std::vector<double> h, err;
  for (std::size_t steps : {100u, 200u, 400u, 800u, 1600u}) {
    IntegratorConfig cfg;
    cfg.newton_abs_tol = 1e-14;
    const double dt = T / static_cast<double>(steps);
    GeneralizedAlpha ga(sys, cfg, dt);
    Vector y(1), yd(1);
    y << 1.0;
    yd << -1.0;
    for (std::size_t k = 0; k < steps; ++k) ga.step(y, yd, static_cast<double>(k) * dt);
    h.push_back(dt);
    err.push_back(std::abs(y[0] - std::exp(-T)));
  }
  const double slope = loglog_slope(h, err);
  return {slope >= 1.9, "y' = -y over dt = T/100..T/1600, log-log slope " + fmt("%.4f", slope) + " (>= 1.9)"};
}

// ---- 3: Windkessel step response --------------------------------------------

Verdict windkessel_transient() {
  const WindkesselBc bc{100.0, 900.0, 1e-3, 0.0};
  const double q = 2.0, tau = bc.Rd * bc.C, p_inf = (bc.Rp + bc.Rd) * q;
  const auto m = single_windkessel(bc, constant_inflow(q), 3.0);
  IntegratorConfig cfg;
  cfg.steps_per_cycle = 3000;
  cfg.cycles_max = 1;
  Vector y0(2), yd0(2);
  y0 << 0.0, q;
  yd0 << p_inf / tau, 0.0;
  RunOptions opt;
  opt.initial_state = std::make_pair(y0, yd0);
  const auto res = run_cycles(m, m.nominal_params(), m.nominal_bcs(), cfg, opt);
  std::vector<double> t, lg;
  for (std::size_t k = 0; k < res.trajectory.times.size(); k += 10) {
    t.push_back(res.trajectory.times[k]);
    lg.push_back(std::log(p_inf - res.trajectory.y(static_cast<Eigen::Index>(k), 0)));
  }
  const double fitted = -1.0 / linear_slope(t, lg);
  const double rel = std::abs(fitted - tau) / tau;
  return {rel < 0.01, "fitted tau " + fmt("%.6f", fitted) + " vs Rd*C " + fmt("%.6f", tau) + ", rel " +
                          fmt("%.2e", rel) + " (< 1%)"};
}

// ---- 4: ground-truth recovery ----------------------------------------------

/// Share of the stenosis term in the mean absolute pressure drop across the element.
double stenosis_share(const LpnModel& m, const ParamSlot& slot, double S, const ObservationSet& obs) {
  const Matrix& y = obs.trajectory.y;
  std::size_t p_in, p_out, q;
  if (slot.owner == ParamSlot::Owner::Vessel) {
    const auto& v = m.vessels()[slot.element];
    p_in = LpnModel::pressure_dof(v.inlet);
    p_out = LpnModel::pressure_dof(v.outlet);
    q = LpnModel::flow_dof(v.inlet);
  } else {
    const auto& j = m.junctions()[slot.element];
    p_in = LpnModel::pressure_dof(j.inlet);
    p_out = LpnModel::pressure_dof(j.outlets[slot.outlet]);
    q = LpnModel::flow_dof(j.outlets[slot.outlet]);
  }
  double term = 0.0, drop = 0.0;
  for (Eigen::Index k = 0; k < y.rows(); ++k) {
    const double qk = y(k, static_cast<Eigen::Index>(q));
    term += std::abs(S * qk * qk);
    drop += std::abs(y(k, static_cast<Eigen::Index>(p_in)) - y(k, static_cast<Eigen::Index>(p_out)));
  }
  return drop > 0.0 ? term / drop : 0.0;
}

Verdict ground_truth_recovery() {
  std::mt19937_64 rng(2024);
  std::vector<double> truth[4], fit[4];
  int converged = 0, branches = 0, junctions = 0;
  for (int n = 0; n < 20; ++n) {
    const LpnModel m = random_network(rng, 10, 3, true);
    branches = std::max(branches, static_cast<int>(m.vessels().size()));
    junctions = std::max(junctions, static_cast<int>(m.junctions().size()));
    const ObservationSet obs = stage_observations(m);
    LmConfig cfg;
    cfg.initial_damping = 1.0;
    cfg.tol_grad = 1e-5;
    cfg.tol_inc = 1e-10;
    const LmReport rep = lm_optimize(m, ElementParams(m.layout()), obs, cfg);
    converged += rep.converged ? 1 : 0;
    const ElementParams a = m.nominal_params();
    for (std::size_t i = 0; i < a.size(); ++i) {
      const ParamSlot& slot = a.layout().slot(i);
      const auto k = static_cast<std::size_t>(slot.kind);
      if (slot.kind == ParamKind::S && stenosis_share(m, slot, a[i], obs) < 0.05) continue;
      truth[k].push_back(a[i]);
      fit[k].push_back(rep.alpha[static_cast<Eigen::Index>(i)]);
    }
  }
  const double r2R = r_squared(truth[0], fit[0]);
  const double r2C = r_squared(truth[1], fit[1]);
  const double r2L = r_squared(truth[2], fit[2]);
  const double r2S = r_squared(truth[3], fit[3]);
  const bool pass = r2R >= 0.999 && r2L >= 0.999 && r2C >= 0.999 && r2S >= 0.9;
  return {pass, "20 networks (<= " + std::to_string(branches) + " branches, <= " + std::to_string(junctions) +
                    " junctions), " + std::to_string(converged) + " converged; R2 R " + fmt("%.6f", r2R) + ", L " +
                    fmt("%.6f", r2L) + ", C " + fmt("%.6f", r2C) + " (>= 0.999); S " + fmt("%.4f", r2S) + " over " +
                    std::to_string(truth[3].size()) + " stenoses >= 5% of dP (>= 0.9)"};
}

// ---- 5: LM linear exactness --------------------------------------------------

Verdict lm_linear_exactness() {
  // Single vessel, samples dP = 2.1, 3.9, 6.2, 7.7 at Q = 1..4: R_hat = sum(dP Q) / sum(Q^2).
  const std::vector<double> q{1.0, 2.0, 3.0, 4.0}, dp{2.1, 3.9, 6.2, 7.7};
  const LpnModel m = vessel_into_windkessel({1.0, 0.0, 0.0, 0.0}, {100.0, 900.0, 1e-4, 0.0},
                                            pulsatile_inflow(5.0, 1.0, 16, 1.0));
  Trajectory t;
  const auto n = static_cast<Eigen::Index>(q.size());
  t.y = Matrix::Zero(n, 4);
  t.ydot = Matrix::Zero(n, 4);
  for (Eigen::Index k = 0; k < n; ++k) {
    t.times.push_back(0.1 * static_cast<double>(k));
    t.y(k, 0) = dp[static_cast<std::size_t>(k)];
    t.y(k, 1) = q[static_cast<std::size_t>(k)];
    t.y(k, 3) = q[static_cast<std::size_t>(k)];
  }
  const ObservationSet obs = ObservationSet::from_trajectory(std::move(t));
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k) {
    num += dp[k] * q[k];
    den += q[k] * q[k];
  }
  LmConfig cfg;
  cfg.freeze.assign(m.layout()->size(), true);
  cfg.freeze[m.layout()->index_of("v0.R")] = false;
  const LmReport rep = lm_optimize(m, ElementParams(m.layout()), obs, cfg);
  const double rel = std::abs(rep.alpha[0] - num / den) / (num / den);
  return {rel <= 1e-9, "R_hat " + fmt("%.12f", rep.alpha[0]) + " vs closed form " + fmt("%.12f", num / den) +
                           ", rel " + fmt("%.2e", rel) + " (<= 1e-9)"};
}

// ---- 6 and 7: SMC ---------------------------------------------------------------

struct Bookkeeping {
  int runs = 0;
  int gamma_violations = 0;
  int ess_violations = 0;
  int weight_violations = 0;
  double worst_weight_sum = 0.0;

  void check(const SmcResult& r) {
    ++runs;
    const double k = static_cast<double>(r.posterior.size());
    if (r.history.empty() || r.history.back().gamma != 1.0 || r.posterior.gamma != 1.0) ++gamma_violations;
    for (const auto& h : r.history) {
      if (!(h.ess >= 1.0 && h.ess <= k)) ++ess_violations;
    }
    const double e = r.posterior.ess();
    if (!(e >= 1.0 && e <= k)) ++ess_violations;
    const double dev = std::abs(r.posterior.normalized_weights().sum() - 1.0);
    worst_weight_sum = std::max(worst_weight_sum, dev);
    if (dev > 1e-12) ++weight_violations;
  }

  // Workflow runs are checked through their written summary and posterior.
  void check_files(const fs::path& summary, const fs::path& posterior) {
    ++runs;
    std::ifstream in(summary);
    const json s = json::parse(in);
    const double k = s.at("particles").get<double>();
    const auto& g = s.at("gamma_schedule");
    if (g.empty() || g.back().get<double>() != 1.0) ++gamma_violations;
    for (const auto& e : s.at("ess_history")) {
      if (!(e.get<double>() >= 1.0 && e.get<double>() <= k)) ++ess_violations;
    }
    std::ifstream csv(posterior);
    std::string line;
    std::getline(csv, line);
    double sum = 0.0;
    while (std::getline(csv, line)) sum += std::stod(line.substr(line.rfind(',') + 1));
    const double dev = std::abs(sum - 1.0);
    worst_weight_sum = std::max(worst_weight_sum, dev);
    if (dev > 1e-12) ++weight_violations;
  }
};

Bookkeeping g_books;

SmcResult conjugate_run(std::uint64_t seed) {
  const ForwardModel identity = [](const Vector& th) { return std::optional<Vector>(th); };
  NoiseModel noise;
  noise.y_obs = Vector::Constant(1, 2.0);
  noise.variance = Vector::Constant(1, 1.0);
  SmcConfig cfg;
  cfg.particles = 10000;
  cfg.ess_min = 5000;
  cfg.rejuvenation_steps = 2;
  cfg.seed = seed;
  return run_smc(identity, Prior({PriorMarginal::normal(0.0, 1.0)}), noise, cfg);
}

Verdict smc_conjugate() {
  bool pass = true;
  std::string detail = "N(0,1) prior, y=2, sigma=1, k=10000, ESS_min=5000:";
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const SmcResult r = conjugate_run(seed);
    g_books.check(r);
    const double mean = r.posterior.weighted_mean()[0];
    const double var = r.posterior.weighted_covariance()(0, 0);
    pass = pass && std::abs(mean - 1.0) <= 0.05 && std::abs(var - 0.5) <= 0.05;
    detail += " (" + fmt("%.4f", mean) + ", " + fmt("%.4f", var) + ")";
  }
  return {pass, detail + " (mean 1 +- 0.05, variance 0.5 +- 0.05)"};
}

bool bitwise_equal(const SmcResult& a, const SmcResult& b) {
  return a.posterior.theta.size() == b.posterior.theta.size() && a.posterior.theta == b.posterior.theta &&
         a.posterior.log_weights == b.posterior.log_weights && a.map == b.map;
}

Verdict smc_bookkeeping() {
  // Reruns with identical seeds: the conjugate case and a Windkessel network, on different thread counts.
  const SmcResult a = conjugate_run(3), b = conjugate_run(3);
  g_books.check(a);
  g_books.check(b);
  const LpnModel m = three_outlet_tree();
  IntegratorConfig fwd;
  fwd.steps_per_cycle = 100;
  const WindkesselForwardModel fm(m, m.nominal_params(), m.nominal_windkessel(), fwd);
  const auto y = extract_observations(fm.simulate(m.nominal_windkessel().theta_vector()).trajectory, m);
  const auto noisy = synthesize_noisy_observations(y, 100.0, 5);
  SmcConfig cfg;
  cfg.particles = 200;
  cfg.ess_min = 100;
  cfg.seed = 17;
  cfg.threads = 1;
  const SmcResult c = run_smc(fm.as_function(), Prior::uniform_box(3, 2.0, 8.0), noisy.noise, cfg);
  cfg.threads = 3;
  const SmcResult d = run_smc(fm.as_function(), Prior::uniform_box(3, 2.0, 8.0), noisy.noise, cfg);
  g_books.check(c);
  g_books.check(d);
  const bool same = bitwise_equal(a, b) && bitwise_equal(c, d);
  const Bookkeeping& k = g_books;
  const bool pass =
      same && k.gamma_violations == 0 && k.ess_violations == 0 && k.weight_violations == 0 && k.runs > 0;
  return {pass, std::to_string(k.runs) + " runs: gamma != 1 in " + std::to_string(k.gamma_violations) +
                    ", ESS outside [1, k] in " + std::to_string(k.ess_violations) + ", max |sum W - 1| " +
                    fmt("%.1e", k.worst_weight_sum) + " (<= 1e-12); same-seed reruns " +
                    (same ? "bitwise identical" : "DIFFER")};
}

// ---- 8 and 9: two-run workflow -------------------------------------------------

TreeSpec surrogate_spec() {
  TreeSpec s;
  for (double& r : s.junction.R) r *= 2.0;
  for (auto& b : s.branches) {
    b.R *= 1.5;
    b.C *= 0.7;
  }
  s.root.L *= 1.3;
  return s;
}

IntegratorConfig workflow_forward() {
  IntegratorConfig f;
  f.steps_per_cycle = 100;
  return f;
}

struct Workflow {
  CalibrationOutcome outcome;
  fs::path workspace;
};

Workflow run_workflow(const TempDir& dir, const std::string& name, double snr, std::uint64_t noise_seed,
                      std::uint64_t seed, std::size_t particles) {
  const fs::path geo = dir / "geo.json", hifi = dir / "hifi.json", src = dir / "hifi.csv";
  if (!fs::exists(geo)) {
    save_model(geo, three_outlet_tree());
    const LpnModel h = three_outlet_tree(surrogate_spec());
    save_model(hifi, h);
    write_trajectory_csv(src, run_cycles(h, h.nominal_params(), h.nominal_bcs(), workflow_forward()).trajectory, h);
  }
  CalibrationCase c;
  c.model = geo;
  c.workspace = dir / name;
  c.source_trajectory = src;
  c.surrogate_hifi = hifi;
  c.snr = snr;
  c.noise_seed = noise_seed;
  c.smc.particles = particles;
  c.smc.ess_min = static_cast<double>(particles) / 2.0;
  c.smc.seed = seed;
  c.forward = workflow_forward();
  Workflow w{calibrate(c), c.workspace};
  g_books.check_files(w.workspace / artifacts::kRun1Summary, w.workspace / artifacts::kRun1Posterior);
  g_books.check_files(w.workspace / artifacts::kRun2Summary, w.workspace / artifacts::kRun2Posterior);
  return w;
}

Verdict end_to_end() {
  TempDir dir("e2e");
  const TreeSpec spec = surrogate_spec();
  const Workflow w = run_workflow(dir, "ws", 100.0, 0, 0, 2000);
  const Vector& mean = *w.outcome.mean_run2;
  double worst = 0.0;
  std::string means;
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    worst = std::max(worst, std::abs(mean[i] - spec.theta[static_cast<std::size_t>(i)]));
    means += (i ? ", " : "") + fmt("%.3f", mean[i]);
  }

  const LpnModel hifi = load_model(dir / "hifi.json");
  const LpnModel geo = load_model(dir / "geo.json");
  const LpnModel opt = load_model(w.workspace / artifacts::kOptimizedModel);
  const auto bcs = hifi.nominal_bcs();
  const IntegratorConfig f = workflow_forward();
  const Trajectory hi = run_cycles(hifi, hifi.nominal_params(), bcs, f).trajectory;
  const ErrorReport e_opt = error_metrics(run_cycles(opt, opt.nominal_params(), bcs, f).trajectory, hi, hifi);
  const ErrorReport e_geo = error_metrics(run_cycles(geo, geo.nominal_params(), bcs, f).trajectory, hi, hifi);

  const bool pass = worst <= 0.1 && e_opt.pressure_max < 0.01 && e_opt.flow_max < 0.01;
  return {pass, "k=2000, SNR=100: run-2 mean (" + means + ") vs generating (5, 5.5, 6), max |diff| " +
                    fmt("%.3f", worst) + " (<= 0.1); optimized eps_P " + fmt("%.2e", e_opt.pressure_max) +
                    ", eps_Q " + fmt("%.2e", e_opt.flow_max) + " (< 1%); geometric eps_P " +
                    fmt("%.2e", e_geo.pressure_max) + ", eps_Q " + fmt("%.2e", e_geo.flow_max)};
}

Verdict snr_monotonicity() {
  TempDir dir("snr");
  const double snrs[3] = {4.0, 11.1, 100.0};
  bool pass = true;
  std::string detail = "k=500, mean run-2 variance at SNR 4 / 11.1 / 100:";
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Vector var[3];
    for (int s = 0; s < 3; ++s) {
      const auto w = run_workflow(dir, "ws_" + std::to_string(seed) + "_" + std::to_string(s), snrs[s], seed, seed, 500);
      var[s] = *w.outcome.variance_run2;
    }
    for (Eigen::Index i = 0; i < var[0].size(); ++i) pass = pass && var[0][i] > var[1][i] && var[1][i] > var[2][i];
    detail += " seed " + std::to_string(seed) + " (" + fmt("%.3g", var[0].mean()) + ", " + fmt("%.3g", var[1].mean()) +
              ", " + fmt("%.3g", var[2].mean()) + ")";
  }
  return {pass, detail + "; strict ordering required per outlet and seed"};
}

// ---- 10: grid posterior ------------------------------------------------------------

Verdict grid_sanity() {
  // Outlets 0 and 2 share axis 0 over [2, 8]; outlet 1 alone on axis 1 over [3, 6].
  TreeSpec spec;
  spec.theta = {5.2, 4.4, 5.2};
  const LpnModel m = three_outlet_tree(spec);
  IntegratorConfig fwd;
  fwd.steps_per_cycle = 100;
  const WindkesselForwardModel fm(m, m.nominal_params(), m.nominal_windkessel(), fwd);
  const Vector y = *fm(m.nominal_windkessel().theta_vector());
  const NoiseModel noise = NoiseModel::from_snr(y, 11.1);
  const GridPosterior g = grid_posterior(fm.as_function(), {{2.0, 8.0, 10}, {3.0, 6.0, 10}}, {0, 1, 0}, noise);
  const double truth[2] = {5.2, 4.4};
  bool inside = true;
  std::string at;
  for (std::size_t a = 0; a < 2; ++a) {
    const double node = g.axes[a].node(g.argmax[a]);
    inside = inside && std::abs(truth[a] - node) <= 0.5 * g.axes[a].spacing();
    at += (a ? ", " : "") + fmt("%.3f", node);
  }
  double total = 0.0;
  for (Eigen::Index f = 0; f < g.density.size(); ++f) total += g.cell_weight(static_cast<std::size_t>(f)) * g.density[f];
  return {inside, "10x10 grid over [2,8]x[3,6], argmax cell centre (" + at +
                      ") contains generating (5.2, 4.4); trapezoidal total " + fmt("%.12f", total)};
}

}  // namespace

int main() {
  struct Entry {
    int id;
    const char* name;
    Verdict v;
  };
  std::vector<Entry> results;
  auto run = [&](int id, const char* name, double budget, const std::function<Verdict()>& fn) {
    std::cerr << "running " << id << ": " << name << "\n";
    Verdict v;
    try {
      v = timed(budget, fn);
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("threw: ") + e.what();
    }
    results.push_back({id, name, v});
  };

  run(1, "element-matrix fidelity", 5.0, element_fidelity);
  run(2, "integrator order", 5.0, integrator_order);
  run(3, "Windkessel analytic transient", 5.0, windkessel_transient);
  run(4, "ground-truth recovery", 120.0, ground_truth_recovery);
  run(5, "LM linear exactness", 1.0, lm_linear_exactness);
  run(6, "SMC conjugate check", 30.0, smc_conjugate);
  // Bookkeeping covers every SMC run, so it is evaluated after the workflow runs.
  run(8, "end-to-end two-run workflow", 300.0, end_to_end);
  run(9, "SNR monotonicity", std::numeric_limits<double>::infinity(), snr_monotonicity);
  run(7, "SMC bookkeeping invariants", std::numeric_limits<double>::infinity(), smc_bookkeeping);
  run(10, "grid-posterior sanity", std::numeric_limits<double>::infinity(), grid_sanity);

  std::sort(results.begin(), results.end(), [](const Entry& a, const Entry& b) { return a.id < b.id; });
  int failures = 0;
  for (const auto& e : results) {
    failures += e.v.pass ? 0 : 1;
    std::string time = fmt("%.1f s", e.v.seconds);
    if (std::isfinite(e.v.budget)) time += fmt(" of %.0f s", e.v.budget);
    std::cout << (e.v.pass ? "PASS" : "FAIL") << " " << e.id << " " << e.name << ": " << e.v.detail << " [" << time
              << "]\n";
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << "\n";
  return failures == 0 ? 0 : 1;
}
