#include "protonc/kernels.hpp"

#include <atomic>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace protonc::kernels {

namespace omp {

void gemm(std::size_t m, std::size_t n, std::size_t k, MatrixArg a, MatrixArg b,
          std::span<double> c, bool accumulate) {
  const auto rows = static_cast<std::int64_t>(m);
  const double* av = a.values.data();
  const double* bv = b.values.data();
  double* cv = c.data();
  if (!b.trans) {
#pragma omp parallel for schedule(static)
    for (std::int64_t ii = 0; ii < rows; ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      double* crow = cv + i * n;
      if (!accumulate) {
        for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
      }
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = a.trans ? av[p * m + i] : av[i * k + p];
        const double* brow = bv + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  } else {
#pragma omp parallel for schedule(static)
    for (std::int64_t ii = 0; ii < rows; ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      for (std::size_t j = 0; j < n; ++j) {
        const double* bcol = bv + j * k;
        double sum = accumulate ? cv[i * n + j] : 0.0;
        if (a.trans) {
          for (std::size_t p = 0; p < k; ++p) sum += av[p * m + i] * bcol[p];
        } else {
          const double* arow = av + i * k;
          for (std::size_t p = 0; p < k; ++p) sum += arow[p] * bcol[p];
        }
        cv[i * n + j] = sum;
      }
    }
  }
}

void pairwise_sqdist(std::size_t m, std::size_t n, std::size_t d, std::span<const double> a,
                     std::span<const double> b, std::span<double> out) {
  const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static)
  for (std::int64_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double* arow = a.data() + i * d;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b.data() + j * d;
      double sum = 0.0;
      for (std::size_t p = 0; p < d; ++p) {
        const double diff = arow[p] - brow[p];
        sum += diff * diff;
      }
      out[i * n + j] = sum;
    }
  }
}

void im2col(const ConvGeometry& g, std::span<const double> image, std::span<double> col) {
  const std::size_t oh = g.out_h();
  const std::size_t ow = g.out_w();
  const auto rows = static_cast<std::int64_t>(g.patch_size());
#pragma omp parallel for schedule(static)
  for (std::int64_t rr = 0; rr < rows; ++rr) {
    const auto row = static_cast<std::size_t>(rr);
    const std::size_t kj = row % g.kernel_w;
    const std::size_t ki = (row / g.kernel_w) % g.kernel_h;
    const std::size_t c = row / (g.kernel_w * g.kernel_h);
    double* out = col.data() + row * oh * ow;
    const double* plane = image.data() + c * g.height * g.width;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                static_cast<std::ptrdiff_t>(g.padding);
      const bool row_inside = iy >= 0 && iy < static_cast<std::ptrdiff_t>(g.height);
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                  static_cast<std::ptrdiff_t>(g.padding);
        out[oy * ow + ox] = (row_inside && ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width))
                                ? plane[static_cast<std::size_t>(iy) * g.width +
                                        static_cast<std::size_t>(ix)]
                                : 0.0;
      }
    }
  }
}

void col2im(const ConvGeometry& g, std::span<const double> col, std::span<double> image) {
  const std::size_t oh = g.out_h();
  const std::size_t ow = g.out_w();
  const auto channels = static_cast<std::int64_t>(g.channels);
  // One thread owns a whole channel plane, so accumulation order per pixel
  // matches the serial loop.
#pragma omp parallel for schedule(static)
  for (std::int64_t cc = 0; cc < channels; ++cc) {
    const auto c = static_cast<std::size_t>(cc);
    double* plane = image.data() + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const std::size_t row = (c * g.kernel_h + ki) * g.kernel_w + kj;
        const double* src = col.data() + row * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                      static_cast<std::ptrdiff_t>(g.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            plane[static_cast<std::size_t>(iy) * g.width + static_cast<std::size_t>(ix)] +=
                src[oy * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace omp

namespace {
std::atomic<bool> g_parallel{true};
}

void set_parallel(bool enabled) { g_parallel.store(enabled); }
bool parallel_enabled() { return g_parallel.load(); }

bool openmp_available() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

void gemm(std::size_t m, std::size_t n, std::size_t k, MatrixArg a, MatrixArg b,
          std::span<double> c, bool accumulate) {
  if (parallel_enabled()) {
    omp::gemm(m, n, k, a, b, c, accumulate);
  } else {
    serial::gemm(m, n, k, a, b, c, accumulate);
  }
}

void pairwise_sqdist(std::size_t m, std::size_t n, std::size_t d, std::span<const double> a,
                     std::span<const double> b, std::span<double> out) {
  if (parallel_enabled()) {
    omp::pairwise_sqdist(m, n, d, a, b, out);
  } else {
    serial::pairwise_sqdist(m, n, d, a, b, out);
  }
}

void im2col(const ConvGeometry& g, std::span<const double> image, std::span<double> col) {
  if (parallel_enabled()) {
    omp::im2col(g, image, col);
  } else {
    serial::im2col(g, image, col);
  }
}

void col2im(const ConvGeometry& g, std::span<const double> col, std::span<double> image) {
  if (parallel_enabled()) {
    omp::col2im(g, col, image);
  } else {
    serial::col2im(g, col, image);
  }
}

}  // namespace protonc::kernels
