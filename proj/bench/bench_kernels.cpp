// Parallel kernels against the serial reference on the MNIST layer shapes.
// Run with OMP_NUM_THREADS set to compare thread counts.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "alcn/kernels.hpp"

namespace {

using alcn::kernels::ConvGeometry;

std::vector<float> random_vector(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Index 0..2 are the three encoder stages of the default MNIST denoiser.
ConvGeometry encoder_stage(int stage, int batch) {
  static constexpr int kIn[] = {1, 32, 64};
  static constexpr int kOut[] = {32, 64, 128};
  static constexpr int kExtent[] = {28, 14, 7, 4};
  ConvGeometry g;
  g.batch = batch;
  g.in_channels = kIn[stage];
  g.out_channels = kOut[stage];
  g.in_h = g.in_w = kExtent[stage];
  g.out_h = g.out_w = kExtent[stage + 1];
  return g;
}

// Transposed conv mirroring an encoder stage.
ConvGeometry decoder_stage(int stage, int batch) {
  ConvGeometry e = encoder_stage(stage, batch);
  ConvGeometry g = e;
  g.in_channels = e.out_channels;
  g.out_channels = e.in_channels;
  g.in_h = e.out_h;
  g.in_w = e.out_w;
  g.out_h = e.in_h;
  g.out_w = e.in_w;
  return g;
}

struct ConvData {
  std::vector<float> x, w, b, y, dy, dx, dw, db;
};

ConvData conv_data(const ConvGeometry& g) {
  const std::size_t in = static_cast<std::size_t>(g.batch) * g.in_channels * g.in_plane();
  const std::size_t out = static_cast<std::size_t>(g.batch) * g.out_channels * g.out_plane();
  const std::size_t wsize = static_cast<std::size_t>(g.in_channels) * g.out_channels * g.patch();
  ConvData d;
  d.x = random_vector(in, 1);
  d.w = random_vector(wsize, 2);
  d.b = random_vector(g.out_channels, 3);
  d.y.resize(out);
  d.dy = random_vector(out, 4);
  d.dx.resize(in);
  d.dw.resize(wsize);
  d.db.resize(g.out_channels);
  return d;
}

template <bool kParallel>
void BM_ConvForward(benchmark::State& state) {
  const auto g = encoder_stage(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  auto d = conv_data(g);
  for (auto _ : state) {
    if constexpr (kParallel)
      alcn::kernels::conv2d_forward<float>(g, d.x, d.w, d.b, d.y);
    else
      alcn::kernels::reference::conv2d_forward<float>(g, d.x, d.w, d.b, d.y);
    benchmark::DoNotOptimize(d.y.data());
  }
}

template <bool kParallel>
void BM_ConvBackward(benchmark::State& state) {
  const auto g = encoder_stage(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  auto d = conv_data(g);
  for (auto _ : state) {
    if constexpr (kParallel)
      alcn::kernels::conv2d_backward<float>(g, d.x, d.w, d.dy, d.dx, d.dw, d.db);
    else
      alcn::kernels::reference::conv2d_backward<float>(g, d.x, d.w, d.dy, d.dx, d.dw, d.db);
    benchmark::DoNotOptimize(d.dw.data());
  }
}

template <bool kParallel>
void BM_ConvTransposeForward(benchmark::State& state) {
  const auto g = decoder_stage(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  auto d = conv_data(g);
  for (auto _ : state) {
    if constexpr (kParallel)
      alcn::kernels::conv_transpose2d_forward<float>(g, d.x, d.w, d.b, d.y);
    else
      alcn::kernels::reference::conv_transpose2d_forward<float>(g, d.x, d.w, d.b, d.y);
    benchmark::DoNotOptimize(d.y.data());
  }
}

template <bool kParallel>
void BM_DenseForward(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  const int in = 2048, out = 128;
  const auto x = random_vector(static_cast<std::size_t>(batch) * in, 1);
  const auto w = random_vector(static_cast<std::size_t>(in) * out, 2);
  const auto b = random_vector(out, 3);
  std::vector<float> y(static_cast<std::size_t>(batch) * out);
  for (auto _ : state) {
    if constexpr (kParallel)
      alcn::kernels::dense_forward<float>(batch, in, out, x, w, b, y);
    else
      alcn::kernels::reference::dense_forward<float>(batch, in, out, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
}

void conv_args(benchmark::internal::Benchmark* b) {
  for (int stage = 0; stage < 3; ++stage) b->Args({stage, 32});
  b->Unit(benchmark::kMicrosecond);
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/serial")->Apply(conv_args);
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/parallel")->Apply(conv_args);
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/serial")->Apply(conv_args);
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/parallel")->Apply(conv_args);
BENCHMARK(BM_ConvTransposeForward<false>)->Name("tconv_forward/serial")->Apply(conv_args);
BENCHMARK(BM_ConvTransposeForward<true>)->Name("tconv_forward/parallel")->Apply(conv_args);
BENCHMARK(BM_DenseForward<false>)->Name("dense_forward/serial")->Arg(128)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_DenseForward<true>)->Name("dense_forward/parallel")->Arg(128)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
