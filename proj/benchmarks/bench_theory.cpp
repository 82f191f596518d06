#include <benchmark/benchmark.h>

#include <random>

#include "advloop/rng.hpp"
#include "advloop/theory.hpp"

using namespace advloop;

namespace {

void BM_RobustBellmanApply(benchmark::State& state) {
    std::mt19937_64 rng = rng::make_stream(5, "bench/bellman");
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    const theory::TabularGame game =
        theory::random_game(rng, n, 4, 4, 0.9, 0.5);
    std::vector<double> v(n);
    for (double& x : v) x = rng::uniform_in(rng, -5.0, 5.0);
    for (auto _ : state)
        benchmark::DoNotOptimize(theory::robust_bellman_apply(game, v));
}
BENCHMARK(BM_RobustBellmanApply)->Arg(8)->Arg(64);

void BM_SolveNashVi(benchmark::State& state) {
    std::mt19937_64 rng = rng::make_stream(6, "bench/nash");
    const theory::TabularGame game =
        theory::random_game(rng, 8, 3, 3, 0.9, 0.5);
    for (auto _ : state)
        benchmark::DoNotOptimize(theory::solve_nash_vi(game, 1e-10));
}
BENCHMARK(BM_SolveNashVi);

void BM_GibbsPosterior(benchmark::State& state) {
    std::mt19937_64 rng = rng::make_stream(7, "bench/gibbs");
    const std::vector<double> prior = theory::random_simplex(rng, 64);
    std::vector<double> energies(64);
    for (double& e : energies) e = rng::uniform_in(rng, -5.0, 5.0);
    for (auto _ : state)
        benchmark::DoNotOptimize(
            theory::gibbs_posterior(prior, energies, 0.5));
}
BENCHMARK(BM_GibbsPosterior);

} // namespace
