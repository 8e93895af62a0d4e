#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "tbal/confidence.hpp"
#include "tbal/model.hpp"
#include "tbal/thresholds.hpp"

namespace {

using namespace tbal;

void BM_Forward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const std::vector<int> dims{784, 128, 10};
  const auto model = MlpClassifier::initialize(dims, SeedStream(1));
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(n, 784);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_Forward)->Arg(64)->Arg(1024);

void BM_ColanderObjective(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const int k = 10, d2 = 128;
  const auto params = ColanderParams::initialize(k, d2, SeedStream(2));
  ColanderData data;
  data.z = Eigen::MatrixXd::Random(n, k + d2);
  std::mt19937_64 rng(3);
  for (int i = 0; i < n; ++i) {
    data.predicted.push_back(static_cast<int>(rng() % k));
    data.wrong.push_back(static_cast<int>(rng() % 5 == 0));
  }
  ColanderParams grad;
  for (auto _ : state) {
    benchmark::DoNotOptimize(colander_objective(params, data, 10.0, 1.0, 1e-8, &grad));
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_ColanderObjective)->Arg(64)->Arg(250);

void BM_EstimateThresholds(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<ScoredPoint> points;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(rng() % 10);
    const double s = unit(rng);
    points.push_back({y, unit(rng) < s ? y : (y + 1) % 10, s});
  }
  ThresholdConfig cfg;
  cfg.grid = uniform_grid(200);
  for (auto _ : state) benchmark::DoNotOptimize(estimate_thresholds(points, 10, cfg));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_EstimateThresholds)->Arg(250)->Arg(5000);

}  // namespace

BENCHMARK_MAIN();
