#include <random>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "protonc/kernels.hpp"

namespace k = protonc::kernels;

TEST_CASE("gemm variants agree with a triple loop and with each other") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng() % 9, n = 1 + rng() % 9, kk = 1 + rng() % 9;
    const auto a = oracle::random_values(m * kk, rng);
    const auto b = oracle::random_values(kk * n, rng);
    const auto expect = oracle::matmul(a, b, m, kk, n);

    // transposed copies
    std::vector<double> at(kk * m), bt(n * kk);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < kk; ++p) at[p * m + i] = a[i * kk + p];
    for (std::size_t p = 0; p < kk; ++p)
      for (std::size_t j = 0; j < n; ++j) bt[j * kk + p] = b[p * n + j];

    for (bool ta : {false, true})
      for (bool tb : {false, true}) {
        const k::MatrixArg aa{ta ? at : a, ta};
        const k::MatrixArg bb{tb ? bt : b, tb};
        std::vector<double> cs(m * n, 0.5), co(m * n, 0.5);
        k::serial::gemm(m, n, kk, aa, bb, cs, false);
        k::omp::gemm(m, n, kk, aa, bb, co, false);
        CHECK(oracle::max_abs_diff(cs, expect) <= 1e-12);
        CHECK(cs == co);
        k::serial::gemm(m, n, kk, aa, bb, cs, true);
        k::omp::gemm(m, n, kk, aa, bb, co, true);
        for (std::size_t i = 0; i < cs.size(); ++i) CHECK(cs[i] == doctest::Approx(2 * expect[i]));
        CHECK(cs == co);
      }
  }
}

TEST_CASE("pairwise_sqdist variants agree with a per-pair loop") {
  std::mt19937_64 rng(12);
  const std::size_t m = 7, n = 4, d = 5;
  const auto a = oracle::random_values(m * d, rng);
  const auto b = oracle::random_values(n * d, rng);
  std::vector<double> s(m * n), o(m * n);
  k::serial::pairwise_sqdist(m, n, d, a, b, s);
  k::omp::pairwise_sqdist(m, n, d, a, b, o);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < d; ++p) acc += (a[i * d + p] - b[j * d + p]) * (a[i * d + p] - b[j * d + p]);
      CHECK(s[i * n + j] == doctest::Approx(acc).epsilon(1e-14));
    }
  CHECK(s == o);
}

TEST_CASE("im2col and col2im are adjoint and match between variants") {
  std::mt19937_64 rng(13);
  k::ConvGeometry g{3, 6, 5, 3, 2, 2, 1};
  const auto img = oracle::random_values(g.channels * g.height * g.width, rng);
  const std::size_t cols = g.patch_size() * g.out_h() * g.out_w();
  std::vector<double> cs(cols), co(cols);
  k::serial::im2col(g, img, cs);
  k::omp::im2col(g, img, co);
  CHECK(cs == co);

  const auto y = oracle::random_values(cols, rng);
  std::vector<double> back_s(img.size(), 0.0), back_o(img.size(), 0.0);
  k::serial::col2im(g, y, back_s);
  k::omp::col2im(g, y, back_o);
  CHECK(back_s == back_o);
  // <im2col(x), y> == <x, col2im(y)>
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < cols; ++i) lhs += cs[i] * y[i];
  for (std::size_t i = 0; i < img.size(); ++i) rhs += img[i] * back_s[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("dispatch switch") {
  const bool before = k::parallel_enabled();
  k::set_parallel(false);
  CHECK_FALSE(k::parallel_enabled());
  k::set_parallel(true);
  CHECK(k::parallel_enabled());
  k::set_parallel(before);
  CHECK(k::openmp_available());
}
