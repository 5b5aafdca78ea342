#include <benchmark/benchmark.h>

#include "ninode/io.hpp"
#include "ninode/verify.hpp"

using namespace ninode;

namespace {

struct Setup {
  ExperimentConfig config = parse_config(R"({"plant": {"eta_samples": 10000}})");
  MechanicalPlant plant = build_plant(config);
  std::unique_ptr<NinodeController> ninode = build_ninode(config, plant.eta());
  std::unique_ptr<LinearNiController> linear = build_linear(config, plant.eta());
};

const Setup& setup() {
  static const Setup s;
  return s;
}

void BM_ControllerDynamics(benchmark::State& state) {
  const Setup& s = setup();
  const Vector x{0.1, -0.2, 0.3, 0.4, -0.5, 0.6}, u{1, 2, 3};
  for (auto _ : state) benchmark::DoNotOptimize(s.ninode->dynamics(x, u));
}
BENCHMARK(BM_ControllerDynamics);

void BM_Certify(benchmark::State& state) {
  const Setup& s = setup();
  for (auto _ : state) benchmark::DoNotOptimize(s.ninode->certify(s.plant.eta()));
}
BENCHMARK(BM_Certify);

void BM_Rollout(benchmark::State& state) {
  const Setup& s = setup();
  const ClosedLoopState x0 = initial_state(s.config.train, 6);
  for (auto _ : state)
    benchmark::DoNotOptimize(rollout(s.plant, *s.ninode, x0, static_cast<std::size_t>(state.range(0)),
                                     s.config.simulation));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Rollout)->Arg(500)->Arg(5000)->Unit(benchmark::kMillisecond);

void BM_LossGradient(benchmark::State& state) {
  const Setup& s = setup();
  const bool linear = state.range(1) != 0;
  TrainConfig tc = resolved_train_config(s.config, 3, 6);
  tc.steps = static_cast<std::size_t>(state.range(0));
  const Controller& ctrl = linear ? static_cast<const Controller&>(*s.linear) : *s.ninode;
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_gradient(s.plant, ctrl, tc));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LossGradient)->Args({50, 0})->Args({500, 0})->Args({500, 1})->Unit(benchmark::kMillisecond);

void BM_StructuralChecks(benchmark::State& state) {
  const Setup& s = setup();
  for (auto _ : state)
    benchmark::DoNotOptimize(check_certified_nets(*s.ninode, s.plant.eta(), 1000, 1000, 5.0, 1));
}
BENCHMARK(BM_StructuralChecks)->Unit(benchmark::kMillisecond);

void BM_EtaCertification(benchmark::State& state) {
  const Setup& s = setup();
  for (auto _ : state) benchmark::DoNotOptimize(estimate_eta(s.plant, 5.0, 10000, 1));
}
BENCHMARK(BM_EtaCertification)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
