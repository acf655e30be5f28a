#include <benchmark/benchmark.h>

#include <random>

#include "lpncal/forward_solver.hpp"
#include "lpncal/inverse_lm.hpp"
#include "lpncal/smc.hpp"
#include "networks.hpp"

namespace {

using namespace lpncal;

void BM_AssembleResidual(benchmark::State& state) {
  const LpnModel m = testing::three_outlet_tree();
  const ElementParams alpha = m.nominal_params();
  const auto bcs = m.nominal_bcs();
  const Vector y = Vector::Constant(static_cast<Eigen::Index>(m.unknown_count()), 1.0);
  const Vector ydot = Vector::Constant(y.size(), 0.5);
  LpnSystem sys(m, alpha, bcs);
  Vector r(y.size());
  for (auto _ : state) {
    sys.residual(0.3, y, ydot, r);
    benchmark::DoNotOptimize(r.data());
  }
}
BENCHMARK(BM_AssembleResidual);

void BM_RunCycles(benchmark::State& state) {
  const LpnModel m = testing::three_outlet_tree();
  const ElementParams alpha = m.nominal_params();
  const auto bcs = m.nominal_bcs();
  IntegratorConfig cfg;
  cfg.steps_per_cycle = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    auto res = run_cycles(m, alpha, bcs, cfg);
    benchmark::DoNotOptimize(res.cycles);
  }
}
BENCHMARK(BM_RunCycles)->Arg(100)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_StackSystem(benchmark::State& state) {
  const LpnModel m = testing::three_outlet_tree();
  const ElementParams alpha = m.nominal_params();
  const auto bcs = m.nominal_bcs();
  IntegratorConfig cfg;
  cfg.steps_per_cycle = 100;
  auto traj = run_cycles(m, alpha, bcs, cfg).trajectory;
  const ObservationSet obs = ObservationSet::from_trajectory(std::move(traj));
  for (auto _ : state) {
    auto sys = stack_system(m, alpha, obs);
    benchmark::DoNotOptimize(sys.residual.data());
  }
}
BENCHMARK(BM_StackSystem)->Unit(benchmark::kMicrosecond);

ParticleSet random_particles(std::size_t k) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n01;
  ParticleSet p;
  p.theta = Matrix(static_cast<Eigen::Index>(k), 3);
  p.log_weights = Vector::Zero(static_cast<Eigen::Index>(k));
  p.log_likelihood = Vector(static_cast<Eigen::Index>(k));
  p.log_prior = Vector::Zero(static_cast<Eigen::Index>(k));
  p.outputs = Matrix::Zero(static_cast<Eigen::Index>(k), 1);
  for (Eigen::Index i = 0; i < p.theta.rows(); ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) p.theta(i, j) = n01(rng);
    p.log_likelihood(i) = -50.0 * n01(rng) * n01(rng);
  }
  return p;
}

void BM_TemperAndReweight(benchmark::State& state) {
  const ParticleSet p = random_particles(static_cast<std::size_t>(state.range(0)));
  const double ess_min = 0.5 * static_cast<double>(p.size());
  for (auto _ : state) {
    const double zeta = select_temper_step(p.log_likelihood, p.log_weights, ess_min, 1.0);
    auto q = reweight(p, zeta);
    benchmark::DoNotOptimize(q.log_weights.data());
  }
}
BENCHMARK(BM_TemperAndReweight)->Arg(2000)->Arg(10000);

void BM_Resample(benchmark::State& state) {
  ParticleSet p = random_particles(static_cast<std::size_t>(state.range(0)));
  p.log_weights = p.log_likelihood;
  for (auto _ : state) {
    auto q = resample(p, 0.37);
    benchmark::DoNotOptimize(q.theta.data());
  }
}
BENCHMARK(BM_Resample)->Arg(2000)->Arg(10000);

}  // namespace

BENCHMARK_MAIN();
