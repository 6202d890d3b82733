#include <benchmark/benchmark.h>

#include "cmlab/flow.hpp"
#include "cmlab/score.hpp"
#include "cmlab/transport.hpp"

namespace {

using namespace cmlab;

Schedule bench_schedule() { return Schedule::linear(0.02, 3.0, 12.0, 0.02); }

void BM_score_eval_many_1d(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  auto td = TargetDistribution::uniform_ball(1, 1.0);
  auto s = bench_schedule();
  Dataset ds = make_dataset(td, n, 7);
  EmpiricalMixtureScore score(ds, s);
  const int m = 4096;
  std::vector<double> xs(m), out(m);
  for (int i = 0; i < m; ++i) xs[i] = -2.0 + 4.0 * i / m;
  for (auto _ : state) {
    score.eval_many_1d(xs.data(), out.data(), m, 0.5);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * m);
}
BENCHMARK(BM_score_eval_many_1d)->Arg(64)->Arg(1024)->Arg(4096);

void BM_backward_solve(benchmark::State& state) {
  auto td = TargetDistribution::uniform_ball(1, 1.0);
  auto s = bench_schedule();
  Dataset ds = make_dataset(td, 256, 7);
  EmpiricalMixtureScore score(ds, s);
  TimeGrid g = build_grid(s, 8, static_cast<int>(state.range(0)));
  PointCloud z = gaussian_cloud(1024, 1, 11);
  for (auto _ : state) {
    auto out = push_cloud_fast(score, g, z);
    benchmark::DoNotOptimize(out.points.data());
  }
}
BENCHMARK(BM_backward_solve)->Arg(8)->Arg(32);

void BM_w1_assignment(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0));
  PointCloud a = gaussian_cloud(m, 2, 3);
  PointCloud b = gaussian_cloud(m, 2, 4);
  for (auto _ : state) {
    auto e = w1_assignment(a, b);
    benchmark::DoNotOptimize(e.value);
  }
}
BENCHMARK(BM_w1_assignment)->Arg(64)->Arg(256)->Arg(512);

void BM_w1_sorted(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0));
  PointCloud a = gaussian_cloud(m, 1, 3);
  PointCloud b = gaussian_cloud(m, 1, 4);
  for (auto _ : state) {
    auto e = w1_1d(a, b);
    benchmark::DoNotOptimize(e.value);
  }
}
BENCHMARK(BM_w1_sorted)->Arg(1024)->Arg(65536);

}  // namespace

BENCHMARK_MAIN();
