#include <benchmark/benchmark.h>

#include <agfa/loss.hpp>
#include <agfa/model.hpp>
#include <agfa/phantom.hpp>
#include <agfa/rng.hpp>
#include <agfa/volume.hpp>

using namespace agfa;

namespace {

Tensor random_input(int extent, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(static_cast<size_t>(extent) * extent * extent);
  for (auto& x : v) x = rng.uniform(0.0, 1.0);
  return Tensor::from_values({1, extent, extent, extent}, std::move(v));
}

}  // namespace

static void BM_ForwardBaseline(benchmark::State& state) {
  ModelConfig config;
  config.base_channels = static_cast<int>(state.range(0));
  AgfaNet net(config, 1);
  Tensor input = random_input(32, 2);
  for (auto _ : state) {
    Tensor logits = net.forward(input, BnMode::kEval);
    benchmark::DoNotOptimize(logits.values().data());
  }
}
BENCHMARK(BM_ForwardBaseline)->Arg(4)->Arg(8);

static void BM_ForwardFullArchitecture(benchmark::State& state) {
  ModelConfig config = ablation_configs(static_cast<int>(state.range(0))).back().second;
  AgfaNet net(config, 1);
  Tensor input = random_input(32, 2);
  for (auto _ : state) {
    Tensor logits = net.forward(input, BnMode::kEval);
    benchmark::DoNotOptimize(logits.values().data());
  }
}
BENCHMARK(BM_ForwardFullArchitecture)->Arg(4)->Arg(8);

static void BM_TrainStep(benchmark::State& state) {
  ModelConfig config = ablation_configs(8).back().second;
  AgfaNet net(config, 1);
  PhantomSpec spec;
  spec.seed = 3;
  spec.extents = {32, 32, 32};
  spec.spacing = {0.5, 0.5, 0.5};
  spec.radius_min_mm = 1.0;
  spec.radius_max_mm = 2.0;
  Sample sample = generate_phantom(spec);
  Tensor input = volume_to_tensor(normalize(sample.volume));
  for (auto _ : state) {
    net.zero_grad();
    Tensor logits = net.forward(input, BnMode::kTrain);
    LossTerms terms = combined_loss(logits, sample.mask);
    backward(terms.total);
    benchmark::DoNotOptimize(terms.l_dice);
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
