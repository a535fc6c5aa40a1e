#pragma once

// Small dense matrices for the collapse metrics: symmetric eigendecomposition
// by cyclic Jacobi rotations and the pseudoinverse built on it.

#include <cstddef>
#include <span>
#include <vector>

#include "protonc/tensor.hpp"

namespace protonc {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> v);

  static Matrix identity(std::size_t n);
  static Matrix from_tensor(const Tensor& t);

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(values).subspan(r * cols, cols);
  }
};

Matrix multiply(const Matrix& a, const Matrix& b);
Matrix transposed(const Matrix& a);
double frobenius_norm(const Matrix& a);
double trace(const Matrix& a);

struct SymmetricEigen {
  std::vector<double> values;  // ascending
  Matrix vectors;              // column i pairs with values[i]
  std::size_t sweeps = 0;
};

struct JacobiOptions {
  /// Stop once the off-diagonal Frobenius norm falls to this fraction of the
  /// matrix's Frobenius norm.
  double tolerance = 1e-12;
  std::size_t max_sweeps = 100;
};

SymmetricEigen symmetric_eigen(const Matrix& m, const JacobiOptions& options = {});

/// Relative cutoff d * machine epsilon used when no rcond is given.
double default_rcond(std::size_t dim);

/// Moore-Penrose pseudoinverse of a symmetric matrix: eigenvalues at or below
/// rcond * lambda_max are treated as zero. A negative rcond selects
/// default_rcond(rows).
Matrix pinv_symmetric(const Matrix& m, double rcond = -1.0);

}  // namespace protonc
