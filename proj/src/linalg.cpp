#include "protonc/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "protonc/errors.hpp"

namespace protonc {

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> v)
    : rows(r), cols(c), values(std::move(v)) {
  if (values.size() != r * c) throw DimensionError("matrix: value count does not match extents");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_tensor(const Tensor& t) {
  if (t.rank() != 2) throw DimensionError("matrix from tensor of shape " + shape_string(t.shape()));
  return Matrix(t.dim(0), t.dim(1), std::vector<double>(t.data().begin(), t.data().end()));
}

Matrix multiply(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw DimensionError("matrix multiply: inner extents disagree");
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t p = 0; p < a.cols; ++p) {
      const double aip = a(i, p);
      for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += aip * b(p, j);
    }
  return c;
}

Matrix transposed(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double v : a.values) s += v * v;
  return std::sqrt(s);
}

double trace(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < std::min(a.rows, a.cols); ++i) s += a(i, i);
  return s;
}

SymmetricEigen symmetric_eigen(const Matrix& m, const JacobiOptions& options) {
  if (m.rows != m.cols) throw DimensionError("symmetric_eigen: matrix is not square");
  const std::size_t n = m.rows;
  Matrix a = m;
  Matrix v = Matrix::identity(n);
  const double scale = frobenius_norm(a);
  const auto off_norm = [&a, n] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  const auto sweep = [&] {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  };

  SymmetricEigen out;
  while (out.sweeps < options.max_sweeps && off_norm() > options.tolerance * scale) {
    ++out.sweeps;
    sweep();
  }
  // Convergence is quadratic, so one more sweep takes the residual from the
  // threshold down to rounding level; pinv accuracy needs the difference.
  if (out.sweeps < options.max_sweeps && off_norm() > 0.0) {
    ++out.sweeps;
    sweep();
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&a](std::size_t i, std::size_t j) { return a(i, i) < a(j, j); });
  out.values.resize(n);
  out.vectors = Matrix(n, n);
  for (std::size_t col = 0; col < n; ++col) {
    out.values[col] = a(order[col], order[col]);
    for (std::size_t k = 0; k < n; ++k) out.vectors(k, col) = v(k, order[col]);
  }
  return out;
}

double default_rcond(std::size_t dim) {
  return static_cast<double>(dim) * std::numeric_limits<double>::epsilon();
}

Matrix pinv_symmetric(const Matrix& m, double rcond) {
  if (m.rows != m.cols) throw DimensionError("pinv: matrix is not square");
  const std::size_t n = m.rows;
  double largest = 0.0;
  for (double x : m.values) largest = std::max(largest, std::abs(x));
  const double sym_tol = 1e-10 * std::max(1.0, largest);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(m(i, j) - m(j, i)) > sym_tol) {
        throw ContractError("pinv: matrix is not symmetric (entry " + std::to_string(i) + "," +
                            std::to_string(j) + ")");
      }
  if (rcond < 0.0) rcond = default_rcond(n);

  const SymmetricEigen eig = symmetric_eigen(m);
  const double lambda_max = n == 0 ? 0.0 : eig.values.back();
  Matrix out(n, n);
  if (!(lambda_max > 0.0)) return out;
  const double cutoff = rcond * lambda_max;
  for (std::size_t k = 0; k < n; ++k) {
    const double lambda = eig.values[k];
    if (lambda <= cutoff) continue;
    const double inv = 1.0 / lambda;
    for (std::size_t i = 0; i < n; ++i) {
      const double vi = eig.vectors(i, k) * inv;
      for (std::size_t j = 0; j < n; ++j) out(i, j) += vi * eig.vectors(j, k);
    }
  }
  return out;
}

}  // namespace protonc
