#pragma once

// Dense numeric kernels used by the autograd ops.
//
// Every kernel exists twice: `serial` is the plain reference loop nest kept
// for testing, `omp` is the OpenMP version used at runtime. The parallel
// versions only split work over independent output elements, so each output
// is summed in the same order regardless of the thread count and the two
// variants agree bit for bit.

#include <cstddef>
#include <span>

namespace protonc::kernels {

/// Operand layout for gemm: `trans` means the buffer stores the transpose.
struct MatrixArg {
  std::span<const double> values;
  bool trans = false;
};

/// Geometry of a 2-D cross-correlation on one image.
struct ConvGeometry {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_h() const { return (height + 2 * padding - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (width + 2 * padding - kernel_w) / stride + 1; }
  std::size_t patch_size() const { return channels * kernel_h * kernel_w; }
};

namespace serial {

// c[m,n] (+)= op(a)[m,k] * op(b)[k,n]
void gemm(std::size_t m, std::size_t n, std::size_t k, MatrixArg a, MatrixArg b,
          std::span<double> c, bool accumulate);

// out[i,j] = sum_p (a[i,p] - b[j,p])^2
void pairwise_sqdist(std::size_t m, std::size_t n, std::size_t d, std::span<const double> a,
                     std::span<const double> b, std::span<double> out);

// col[patch_size, out_h*out_w] from one C x H x W image.
void im2col(const ConvGeometry& g, std::span<const double> image, std::span<double> col);

// Scatter-add of col back onto the image gradient.
void col2im(const ConvGeometry& g, std::span<const double> col, std::span<double> image);

}  // namespace serial

namespace omp {

void gemm(std::size_t m, std::size_t n, std::size_t k, MatrixArg a, MatrixArg b,
          std::span<double> c, bool accumulate);
void pairwise_sqdist(std::size_t m, std::size_t n, std::size_t d, std::span<const double> a,
                     std::span<const double> b, std::span<double> out);
void im2col(const ConvGeometry& g, std::span<const double> image, std::span<double> col);
void col2im(const ConvGeometry& g, std::span<const double> col, std::span<double> image);

}  // namespace omp

/// Runtime switch used by the dispatching wrappers below (default: parallel).
void set_parallel(bool enabled);
bool parallel_enabled();
/// True when the library was compiled with OpenMP support.
bool openmp_available();

void gemm(std::size_t m, std::size_t n, std::size_t k, MatrixArg a, MatrixArg b,
          std::span<double> c, bool accumulate);
void pairwise_sqdist(std::size_t m, std::size_t n, std::size_t d, std::span<const double> a,
                     std::span<const double> b, std::span<double> out);
void im2col(const ConvGeometry& g, std::span<const double> image, std::span<double> col);
void col2im(const ConvGeometry& g, std::span<const double> col, std::span<double> image);

}  // namespace protonc::kernels
