#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "advloop/geom.hpp"
#include "advloop/rng.hpp"

using namespace advloop;

namespace {

geom::Obb random_box(std::mt19937_64& rng, double spread) {
    return geom::Obb{{rng::uniform_in(rng, -spread, spread),
                      rng::uniform_in(rng, -spread, spread),
                      rng::uniform_in(rng, -3.14, 3.14)},
                     rng::uniform_in(rng, 1.0, 6.0),
                     rng::uniform_in(rng, 0.5, 3.0)};
}

void BM_SatOverlap(benchmark::State& state) {
    std::mt19937_64 rng = rng::make_stream(1, "bench/sat");
    std::vector<std::pair<geom::Obb, geom::Obb>> pairs;
    for (int i = 0; i < 1024; ++i)
        pairs.emplace_back(random_box(rng, 5.0), random_box(rng, 5.0));
    std::size_t i = 0;
    for (auto _ : state) {
        const auto& [a, b] = pairs[i++ & 1023];
        benchmark::DoNotOptimize(geom::sat_overlap(a, b));
    }
}
BENCHMARK(BM_SatOverlap);

void BM_FrenetProject(benchmark::State& state) {
    std::mt19937_64 rng = rng::make_stream(2, "bench/frenet");
    geom::Polyline line;
    double x = 0.0, y = 0.0;
    for (int i = 0; i < state.range(0); ++i) {
        x += rng::uniform_in(rng, 0.5, 2.0);
        y += rng::uniform_in(rng, -0.5, 0.5);
        line.points.push_back({x, y});
    }
    std::vector<geom::Vec2> queries;
    for (int i = 0; i < 256; ++i)
        queries.push_back({rng::uniform_in(rng, 0.0, x),
                           rng::uniform_in(rng, -10.0, 10.0)});
    std::size_t i = 0;
    for (auto _ : state)
        benchmark::DoNotOptimize(
            geom::frenet_project(queries[i++ & 255], line));
}
BENCHMARK(BM_FrenetProject)->Arg(64)->Arg(512);

void BM_RayCast(benchmark::State& state) {
    std::mt19937_64 rng = rng::make_stream(3, "bench/raycast");
    std::vector<geom::Obb> boxes;
    for (int i = 0; i < state.range(0); ++i)
        boxes.push_back(random_box(rng, 40.0));
    double angle = 0.0;
    for (auto _ : state) {
        angle += 0.37;
        benchmark::DoNotOptimize(
            geom::ray_cast({0.0, 0.0}, angle, 80.0, boxes));
    }
}
BENCHMARK(BM_RayCast)->Arg(4)->Arg(16);

} // namespace

BENCHMARK_MAIN();
