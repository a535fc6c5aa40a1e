#pragma once

// Explicit-loop neural-collapse oracle. Scatter matrices are accumulated per
// class from label scans; spectra and products come from Eigen. The
// pseudoinverse keeps exactly the `rank` largest eigenvalues, so it does not
// depend on any cutoff rule.

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

struct NcOracle {
  Eigen::VectorXd global_mean;
  Eigen::MatrixXd class_means;  // N x d
  Eigen::MatrixXd sigma_w;
  Eigen::MatrixXd sigma_b;
  double nc1 = 0.0;
  double nc2_paper = 0.0;
  double nc2_centered = 0.0;
};

inline Eigen::MatrixXd pinv_rank(const Eigen::MatrixXd& m, long rank) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const long d = m.rows();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(d, d);
  for (long i = d - 1; i >= d - rank && i >= 0; --i) {
    if (es.eigenvalues()(i) <= 0.0) continue;
    out += es.eigenvectors().col(i) * es.eigenvectors().col(i).transpose() / es.eigenvalues()(i);
  }
  return out;
}

inline double nc2_of(const Eigen::MatrixXd& h) {
  const long n = h.rows();
  const Eigen::MatrixXd g = h * h.transpose();
  Eigen::MatrixXd target(n, n);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < n; ++j)
      target(i, j) = ((i == j ? 1.0 : 0.0) - 1.0 / static_cast<double>(n)) / std::sqrt(static_cast<double>(n - 1));
  return (g / g.norm() - target).norm();
}

/// rows: N*K feature rows of dimension d; labels in 0..N-1.
/// `sigma_b_rank` is the known rank of the between-class scatter.
inline NcOracle nc_oracle(const std::vector<double>& rows, const std::vector<std::size_t>& labels,
                          std::size_t n, std::size_t d, long sigma_b_rank) {
  NcOracle o;
  o.global_mean = Eigen::VectorXd::Zero(static_cast<long>(d));
  o.class_means = Eigen::MatrixXd::Zero(static_cast<long>(n), static_cast<long>(d));
  const std::size_t total = labels.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < total; ++i) {
      if (labels[i] != c) continue;
      ++count;
      for (std::size_t j = 0; j < d; ++j) o.class_means(static_cast<long>(c), static_cast<long>(j)) += rows[i * d + j];
    }
    o.class_means.row(static_cast<long>(c)) /= static_cast<double>(count);
  }
  for (std::size_t i = 0; i < total; ++i)
    for (std::size_t j = 0; j < d; ++j) o.global_mean(static_cast<long>(j)) += rows[i * d + j];
  o.global_mean /= static_cast<double>(total);

  o.sigma_w = Eigen::MatrixXd::Zero(static_cast<long>(d), static_cast<long>(d));
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t i = 0; i < total; ++i) {
      if (labels[i] != c) continue;
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b)
          o.sigma_w(static_cast<long>(a), static_cast<long>(b)) +=
              (rows[i * d + a] - o.class_means(static_cast<long>(c), static_cast<long>(a))) *
              (rows[i * d + b] - o.class_means(static_cast<long>(c), static_cast<long>(b)));
    }
  o.sigma_w /= static_cast<double>(total);

  o.sigma_b = Eigen::MatrixXd::Zero(static_cast<long>(d), static_cast<long>(d));
  for (std::size_t c = 0; c < n; ++c) {
    const Eigen::VectorXd diff = o.class_means.row(static_cast<long>(c)).transpose() - o.global_mean;
    o.sigma_b += diff * diff.transpose();
  }
  o.sigma_b /= static_cast<double>(n);

  o.nc1 = (o.sigma_w * pinv_rank(o.sigma_b, sigma_b_rank)).trace() / static_cast<double>(n);
  o.nc2_paper = nc2_of(o.class_means);
  o.nc2_centered = nc2_of(o.class_means.rowwise() - o.global_mean.transpose());
  return o;
}

/// Class means forming an exact simplex ETF: the symmetric square root of the
/// target Gram, padded with zero columns up to dimension d.
inline std::vector<double> etf_means(std::size_t n, std::size_t d) {
  Eigen::MatrixXd target(static_cast<long>(n), static_cast<long>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      target(static_cast<long>(i), static_cast<long>(j)) =
          ((i == j ? 1.0 : 0.0) - 1.0 / static_cast<double>(n)) / std::sqrt(static_cast<double>(n - 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(target);
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd h = es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
  std::vector<double> out(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * d + j] = h(static_cast<long>(i), static_cast<long>(j));
  return out;
}

}  // namespace oracle
