#include <benchmark/benchmark.h>

#include <vector>

#include "modunet/kernels.hpp"
#include "modunet/rng.hpp"

using namespace modunet;
using kernels::ConvGeometry;

namespace {

// 3x3 same convolution over a (1, size, size, channels) map.
ConvGeometry geometry_2d(std::size_t size, std::size_t channels) {
  ConvGeometry g;
  g.in = g.out = {1, size, size};
  g.kernel = {1, 3, 3};
  g.pad_low = {0, 1, 1};
  g.in_channels = g.out_channels = channels;
  return g;
}

ConvGeometry geometry_3d(std::size_t size, std::size_t channels) {
  ConvGeometry g;
  g.in = g.out = {size, size, size};
  g.kernel = {3, 3, 3};
  g.pad_low = {1, 1, 1};
  g.in_channels = g.out_channels = channels;
  return g;
}

std::vector<float> random_buffer(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform() - 0.5);
  return v;
}

struct Buffers {
  ConvGeometry g;
  std::vector<float> x, w, b, y, dy, dx, dw, db;
  explicit Buffers(const ConvGeometry& geo)
      : g(geo),
        x(random_buffer(geo.input_size(), 1)),
        w(random_buffer(geo.weight_size(), 2)),
        b(random_buffer(geo.out_channels, 3)),
        y(geo.output_size()),
        dy(random_buffer(geo.output_size(), 4)),
        dx(geo.input_size()),
        dw(geo.weight_size()),
        db(geo.out_channels) {}
};

ConvGeometry make_geometry(const benchmark::State& state) {
  const auto size = static_cast<std::size_t>(state.range(0)), channels = static_cast<std::size_t>(state.range(1));
  return state.range(2) == 3 ? geometry_3d(size, channels) : geometry_2d(size, channels);
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  Buffers b(make_geometry(state));
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::conv_forward<float>(b.g, b.x, b.w, b.b, b.y);
    else
      kernels::reference::conv_forward<float>(b.g, b.x, b.w, b.b, b.y);
    benchmark::DoNotOptimize(b.y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(b.g.out_spatial()));
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& state) {
  Buffers b(make_geometry(state));
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::parallel::conv_backward_input<float>(b.g, b.dy, b.w, b.dx);
      kernels::parallel::conv_backward_weights<float>(b.g, b.x, b.dy, b.dw, b.db);
    } else {
      kernels::reference::conv_backward_input<float>(b.g, b.dy, b.w, b.dx);
      kernels::reference::conv_backward_weights<float>(b.g, b.x, b.dy, b.dw, b.db);
    }
    benchmark::DoNotOptimize(b.dx.data());
    benchmark::DoNotOptimize(b.dw.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(b.g.out_spatial()));
}

// args: spatial size, channels, spatial rank
void shapes(benchmark::internal::Benchmark* b) {
  b->Args({64, 16, 2})->Args({160, 16, 2})->Args({64, 64, 2})->Args({32, 8, 3});
  b->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/reference")->Apply(shapes);
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/parallel")->Apply(shapes);
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/reference")->Apply(shapes);
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/parallel")->Apply(shapes);

BENCHMARK_MAIN();
