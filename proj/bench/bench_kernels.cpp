// Serial reference kernels against their OpenMP counterparts, plus a full
// conv2d forward/backward through the dispatching wrappers.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "protonc/kernels.hpp"
#include "protonc/nn.hpp"

namespace k = protonc::kernels;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

template <bool Parallel>
void BM_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n, 1);
  const auto b = random_values(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::omp::gemm(n, n, n, {a}, {b}, c, false);
    } else {
      k::serial::gemm(n, n, n, {a}, {b}, c, false);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

template <bool Parallel>
void BM_pairwise_sqdist(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const std::size_t m = 300, n = 60;
  const auto a = random_values(m * d, 3);
  const auto b = random_values(n * d, 4);
  std::vector<double> out(m * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::omp::pairwise_sqdist(m, n, d, a, b, out);
    } else {
      k::serial::pairwise_sqdist(m, n, d, a, b, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
}

k::ConvGeometry conv_geometry(std::size_t channels, std::size_t side) {
  k::ConvGeometry g;
  g.channels = channels;
  g.height = side;
  g.width = side;
  g.kernel_h = 3;
  g.kernel_w = 3;
  g.padding = 1;
  return g;
}

template <bool Parallel>
void BM_im2col(benchmark::State& state) {
  const auto g = conv_geometry(64, static_cast<std::size_t>(state.range(0)));
  const auto image = random_values(g.channels * g.height * g.width, 5);
  std::vector<double> col(g.patch_size() * g.out_h() * g.out_w());
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::omp::im2col(g, image, col);
    } else {
      k::serial::im2col(g, image, col);
    }
    benchmark::DoNotOptimize(col.data());
  }
}

template <bool Parallel>
void BM_col2im(benchmark::State& state) {
  const auto g = conv_geometry(64, static_cast<std::size_t>(state.range(0)));
  const auto col = random_values(g.patch_size() * g.out_h() * g.out_w(), 6);
  std::vector<double> image(g.channels * g.height * g.width);
  for (auto _ : state) {
    std::fill(image.begin(), image.end(), 0.0);
    if constexpr (Parallel) {
      k::omp::col2im(g, col, image);
    } else {
      k::serial::col2im(g, col, image);
    }
    benchmark::DoNotOptimize(image.data());
  }
}

// One convnet4-sized block: batch 25, 64 -> 64 channels, 3x3, pad 1.
template <bool Parallel>
void BM_conv2d_fwd_bwd(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  k::set_parallel(Parallel);
  protonc::Tensor x({25, 64, side, side}, random_values(25 * 64 * side * side, 7), true);
  protonc::Tensor w({64, 64, 3, 3}, random_values(64 * 64 * 9, 8), true);
  protonc::Tensor b({64}, random_values(64, 9), true);
  for (auto _ : state) {
    protonc::Tensor y = protonc::sum(protonc::conv2d(x, w, b, 1, 1));
    y.backward();
    x.zero_grad();
    w.zero_grad();
    b.zero_grad();
  }
  k::set_parallel(true);
}

}  // namespace

BENCHMARK(BM_gemm<false>)->Name("gemm/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_gemm<true>)->Name("gemm/omp")->Arg(64)->Arg(256);
BENCHMARK(BM_pairwise_sqdist<false>)->Name("pairwise_sqdist/serial")->Arg(64)->Arg(512);
BENCHMARK(BM_pairwise_sqdist<true>)->Name("pairwise_sqdist/omp")->Arg(64)->Arg(512);
BENCHMARK(BM_im2col<false>)->Name("im2col/serial")->Arg(14)->Arg(28);
BENCHMARK(BM_im2col<true>)->Name("im2col/omp")->Arg(14)->Arg(28);
BENCHMARK(BM_col2im<false>)->Name("col2im/serial")->Arg(14)->Arg(28);
BENCHMARK(BM_col2im<true>)->Name("col2im/omp")->Arg(14)->Arg(28);
BENCHMARK(BM_conv2d_fwd_bwd<false>)->Name("conv2d_fwd_bwd/serial")->Arg(7)->Arg(14)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv2d_fwd_bwd<true>)->Name("conv2d_fwd_bwd/omp")->Arg(7)->Arg(14)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
