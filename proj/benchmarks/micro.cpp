#include <benchmark/benchmark.h>

#include <random>

#include "atsne/engine.hpp"
#include "atsne/fields.hpp"
#include "atsne/kd_forest.hpp"
#include "atsne/knn.hpp"
#include "atsne/optimizer.hpp"
#include "atsne/quad_tree.hpp"
#include "atsne/similarity.hpp"
#include "atsne/synthetic.hpp"

namespace atsne {
namespace {

const Dataset& mnist_like() {
  static const Dataset d = make_clusters({.n = 20000, .dim = 64, .clusters = 10, .seed = 1});
  return d;
}

std::vector<PointId> first_ids(std::size_t n) {
  std::vector<PointId> ids;
  for (std::uint32_t i = 0; i < n; ++i) ids.push_back(static_cast<PointId>(i));
  return ids;
}

void BM_ForestBuild(benchmark::State& state) {
  const PointStore points = mnist_like().to_store();
  for (auto _ : state) {
    benchmark::DoNotOptimize(KdForest::build(points, static_cast<std::size_t>(state.range(0)), 5, 1));
  }
}
BENCHMARK(BM_ForestBuild)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

// Arguments: trees, leaf budget. K = 30 (perplexity 10).
void BM_ForestQuery(benchmark::State& state) {
  const PointStore points = mnist_like().to_store();
  const KdForest forest = KdForest::build(points, static_cast<std::size_t>(state.range(0)), 5, 1);
  const auto budget = static_cast<std::size_t>(state.range(1));
  std::uint32_t next = 0;
  for (auto _ : state) {
    const PointId owner{next};
    next = (next + 7919) % static_cast<std::uint32_t>(points.size());
    benchmark::DoNotOptimize(forest.query_point(owner, 30, budget));
  }
}
BENCHMARK(BM_ForestQuery)->Args({1, 1})->Args({2, 512})->Args({4, 1024})->Unit(benchmark::kMicrosecond);

void BM_BruteQuery(benchmark::State& state) {
  const PointStore points = mnist_like().to_store();
  std::uint32_t next = 0;
  for (auto _ : state) {
    const PointId owner{next};
    next = (next + 7919) % static_cast<std::uint32_t>(points.size());
    benchmark::DoNotOptimize(brute_force_knn(points, owner, 30));
  }
}
BENCHMARK(BM_BruteQuery)->Unit(benchmark::kMicrosecond);

void BM_SolveSigma(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::lognormal_distribution<double> g(0.0, 1.0);
  std::vector<double> d2(static_cast<std::size_t>(state.range(0)));
  for (double& v : d2) v = g(rng);
  std::sort(d2.begin(), d2.end());
  for (auto _ : state) benchmark::DoNotOptimize(solve_sigma(d2, static_cast<double>(d2.size()) / 3.0));
}
BENCHMARK(BM_SolveSigma)->Arg(15)->Arg(90);

void BM_QuadTreeBuild(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Embedding e = Embedding::random(first_ids(n), 2, 10.0);
  const auto y = e.compact_positions();
  for (auto _ : state) benchmark::DoNotOptimize(QuadTree(y));
}
BENCHMARK(BM_QuadTreeBuild)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);

void BM_Repulsion(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Embedding e = Embedding::random(first_ids(n), 2, 10.0);
  for (auto _ : state) benchmark::DoNotOptimize(repulsive_forces(e, 0.5));
}
BENCHMARK(BM_Repulsion)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);

void BM_EngineStep(benchmark::State& state) {
  EngineConfig cfg;
  cfg.perplexity = 10.0;
  cfg.target_precision = 0.8;
  cfg.seed = 1;
  Engine engine = Engine::create(mnist_like().to_store(), cfg);
  for (auto _ : state) engine.step();
}
BENCHMARK(BM_EngineStep)->Unit(benchmark::kMillisecond)->Iterations(50);

void BM_DensityField(benchmark::State& state) {
  const Embedding e = Embedding::random(first_ids(20000), 4, 10.0);
  const auto y = e.compact_positions();
  BoundingBox box{y[0], y[0]};
  for (const auto& p : y) {
    box.min = {std::min(box.min.x, p.x), std::min(box.min.y, p.y)};
    box.max = {std::max(box.max.x, p.x), std::max(box.max.y, p.y)};
  }
  const double h = 1.0;
  const auto side = static_cast<std::size_t>(state.range(0));
  const GridSpec grid = fit_grid(box, kKernelCutoff * h, side, side);
  for (auto _ : state) benchmark::DoNotOptimize(density_field(y, h, grid));
}
BENCHMARK(BM_DensityField)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace atsne

BENCHMARK_MAIN();
