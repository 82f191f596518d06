#include <benchmark/benchmark.h>

#include "advloop/scenario_gen.hpp"
#include "advloop/sim.hpp"

using namespace advloop;

namespace {

void BM_ReplayRollout(benchmark::State& state) {
    const sim::Scenario scenario = sim::make_scenario("intersection", 7, 0);
    sim::RouteFollowController controller;
    std::uint64_t seed = 0;
    for (auto _ : state)
        benchmark::DoNotOptimize(sim::rollout_episode(
            controller, scenario, /*adversary_plan=*/nullptr, seed++));
}
BENCHMARK(BM_ReplayRollout);

void BM_ObservationStep(benchmark::State& state) {
    // One-step episodes isolate the per-step cost (observation build,
    // collision checks) from full-horizon dynamics.
    sim::Scenario scenario = sim::make_scenario("merge", 7, 1);
    scenario.horizon_steps = 1;
    sim::RouteFollowController controller;
    std::uint64_t seed = 0;
    for (auto _ : state)
        benchmark::DoNotOptimize(sim::rollout_episode(
            controller, scenario, nullptr, seed++));
}
BENCHMARK(BM_ObservationStep);

void BM_CorpusSynthesis(benchmark::State& state) {
    sim::CorpusConfig cfg;
    cfg.count = 16;
    cfg.seed = 11;
    for (auto _ : state)
        benchmark::DoNotOptimize(sim::make_synthetic_scenarios(cfg));
}
BENCHMARK(BM_CorpusSynthesis);

} // namespace
