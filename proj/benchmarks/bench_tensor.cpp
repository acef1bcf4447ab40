#include <benchmark/benchmark.h>

#include <agfa/rng.hpp>
#include <agfa/tensor.hpp>

using namespace agfa;

namespace {

Tensor random_tensor(const Shape& shape, uint64_t seed, bool requires_grad = false) {
  Rng rng(seed);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from_values(shape, std::move(v), requires_grad);
}

}  // namespace

static void BM_Conv3dForward(benchmark::State& state) {
  const int channels = static_cast<int>(state.range(0));
  const int extent = static_cast<int>(state.range(1));
  Tensor x = random_tensor({channels, extent, extent, extent}, 1);
  Tensor w = random_tensor({channels, channels, 3, 3, 3}, 2);
  Tensor b = random_tensor({channels}, 3);
  ConvParams p = ConvParams::same(channels, channels, {3, 3, 3});
  for (auto _ : state) {
    Tensor y = conv3d(x, w, b, p);
    benchmark::DoNotOptimize(y.values().data());
  }
  state.SetItemsProcessed(state.iterations() * shape_numel(x.shape()) * channels * 27);
}
BENCHMARK(BM_Conv3dForward)->Args({8, 32})->Args({16, 16})->Args({32, 8});

static void BM_Conv3dBackward(benchmark::State& state) {
  const int channels = static_cast<int>(state.range(0));
  const int extent = static_cast<int>(state.range(1));
  ConvParams p = ConvParams::same(channels, channels, {3, 3, 3});
  for (auto _ : state) {
    state.PauseTiming();
    Tensor x = random_tensor({channels, extent, extent, extent}, 1, true);
    Tensor w = random_tensor({channels, channels, 3, 3, 3}, 2, true);
    Tensor b = random_tensor({channels}, 3, true);
    Tensor loss = sum(conv3d(x, w, b, p));
    state.ResumeTiming();
    backward(loss);
  }
}
BENCHMARK(BM_Conv3dBackward)->Args({8, 16})->Args({16, 8});

static void BM_DilatedConv(benchmark::State& state) {
  const int dilation = static_cast<int>(state.range(0));
  Tensor x = random_tensor({8, 16, 16, 16}, 4);
  Tensor w = random_tensor({8, 8, 3, 3, 3}, 5);
  Tensor b = random_tensor({8}, 6);
  ConvParams p = ConvParams::same(8, 8, {3, 3, 3}, {dilation, dilation, dilation});
  for (auto _ : state) {
    Tensor y = conv3d(x, w, b, p);
    benchmark::DoNotOptimize(y.values().data());
  }
}
BENCHMARK(BM_DilatedConv)->Arg(1)->Arg(2)->Arg(3)->Arg(4);

static void BM_Softmax(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Tensor x = random_tensor({n, n}, 7);
  for (auto _ : state) {
    Tensor y = softmax(x, 1);
    benchmark::DoNotOptimize(y.values().data());
  }
}
BENCHMARK(BM_Softmax)->Arg(64)->Arg(512);

static void BM_Matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Tensor a = random_tensor({n, n}, 8);
  Tensor b = random_tensor({n, n}, 9);
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.values().data());
  }
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128);

static void BM_UpsampleTrilinear(benchmark::State& state) {
  Tensor x = random_tensor({8, 16, 16, 16}, 10);
  for (auto _ : state) {
    Tensor y = upsample_trilinear2x(x);
    benchmark::DoNotOptimize(y.values().data());
  }
}
BENCHMARK(BM_UpsampleTrilinear);

BENCHMARK_MAIN();
