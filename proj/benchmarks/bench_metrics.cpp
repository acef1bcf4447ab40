#include <benchmark/benchmark.h>

#include <agfa/metrics.hpp>
#include <agfa/rng.hpp>

using namespace agfa;

namespace {

LabelMask random_mask(int extent, uint64_t seed, double density) {
  Rng rng(seed);
  LabelMask m;
  m.geom.extents = {extent, extent, extent};
  m.values.resize(m.geom.voxel_count());
  for (auto& v : m.values) v = rng.uniform() < density ? 1 : 0;
  return m;
}

}  // namespace

static void BM_Hausdorff(benchmark::State& state) {
  const int extent = static_cast<int>(state.range(0));
  LabelMask a = random_mask(extent, 1, 0.1);
  LabelMask b = random_mask(extent, 2, 0.1);
  if (a.foreground_count() == 0) a.values[0] = 1;
  if (b.foreground_count() == 0) b.values[0] = 1;
  for (auto _ : state) {
    double d = hausdorff_distance(a, b, 95.0);
    benchmark::DoNotOptimize(d);
  }
}
BENCHMARK(BM_Hausdorff)->Arg(8)->Arg(16);

static void BM_Postprocess(benchmark::State& state) {
  const int extent = static_cast<int>(state.range(0));
  LabelMask m = random_mask(extent, 3, 0.15);
  for (auto _ : state) {
    LabelMask out = postprocess(m, 1);
    benchmark::DoNotOptimize(out.values.data());
  }
}
BENCHMARK(BM_Postprocess)->Arg(16)->Arg(32);

static void BM_Confusion(benchmark::State& state) {
  LabelMask a = random_mask(32, 4, 0.2);
  LabelMask b = random_mask(32, 5, 0.2);
  for (auto _ : state) {
    ConfusionCounts c = confusion(a, b);
    benchmark::DoNotOptimize(c.tp);
  }
}
BENCHMARK(BM_Confusion);

BENCHMARK_MAIN();
