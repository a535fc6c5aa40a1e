#include "protonc/collapse.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "protonc/binary_io.hpp"
#include "protonc/errors.hpp"

namespace protonc {

ClassStats class_statistics(const Matrix& features, std::span<const std::size_t> labels) {
  const std::size_t rows = features.rows;
  const std::size_t d = features.cols;
  if (rows == 0 || d == 0) throw DimensionError("class_statistics: empty feature matrix");
  if (labels.size() != rows) {
    throw DimensionError("class_statistics: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(rows) + " feature rows");
  }
  const std::size_t n_classes = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::size_t> counts(n_classes, 0);
  for (auto l : labels) ++counts[l];
  const std::size_t shots = counts.front();
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (counts[c] != shots || shots == 0) {
      throw ContractError("class_statistics: unequal class sizes (class " + std::to_string(c) +
                          " has " + std::to_string(counts[c]) + ", class 0 has " +
                          std::to_string(shots) + ")");
    }
  }

  ClassStats st;
  st.num_classes = n_classes;
  st.shots = shots;
  // Means are accumulated as deviations from a reference row (the first row of
  // each class, and row 0 overall), so identical rows give exact means.
  std::vector<std::size_t> first(n_classes, rows);
  for (std::size_t i = rows; i-- > 0;) first[labels[i]] = i;
  st.global_mean.assign(d, 0.0);
  st.class_means = Matrix(n_classes, d);
  const auto h0 = features.row(0);
  for (std::size_t i = 0; i < rows; ++i) {
    const auto h = features.row(i);
    const auto ref = features.row(first[labels[i]]);
    for (std::size_t j = 0; j < d; ++j) {
      st.class_means(labels[i], j) += h[j] - ref[j];
      st.global_mean[j] += h[j] - h0[j];
    }
  }
  for (std::size_t c = 0; c < n_classes; ++c) {
    const auto ref = features.row(first[c]);
    for (std::size_t j = 0; j < d; ++j)
      st.class_means(c, j) = ref[j] + st.class_means(c, j) / static_cast<double>(shots);
  }
  for (std::size_t j = 0; j < d; ++j) st.global_mean[j] = h0[j] + st.global_mean[j] / static_cast<double>(rows);

  // Upper triangles, mirrored afterwards so both matrices are exactly symmetric.
  st.sigma_w = Matrix(d, d);
  std::vector<double> diff(d);
  for (std::size_t i = 0; i < rows; ++i) {
    const auto h = features.row(i);
    for (std::size_t j = 0; j < d; ++j) diff[j] = h[j] - st.class_means(labels[i], j);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = a; b < d; ++b) st.sigma_w(a, b) += diff[a] * diff[b];
  }
  st.sigma_b = Matrix(d, d);
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t j = 0; j < d; ++j) diff[j] = st.class_means(c, j) - st.global_mean[j];
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = a; b < d; ++b) st.sigma_b(a, b) += diff[a] * diff[b];
  }
  const double inv_w = 1.0 / static_cast<double>(rows);
  const double inv_b = 1.0 / static_cast<double>(n_classes);
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a; b < d; ++b) {
      st.sigma_w(a, b) *= inv_w;
      st.sigma_w(b, a) = st.sigma_w(a, b);
      st.sigma_b(a, b) *= inv_b;
      st.sigma_b(b, a) = st.sigma_b(a, b);
    }
  return st;
}

namespace {

// Sigma_B = M^T M / N for the centered means M [N, d], so its nonzero
// eigenpairs follow from the N x N Gram G = M M^T / N: G v = l v gives
// Sigma_B u = l u with u = M^T v / sqrt(N l). Same cutoff rule as
// pinv_symmetric, applied to the same spectrum.
double nc1_via_gram(const ClassStats& stats, double rcond) {
  const std::size_t n = stats.num_classes;
  const std::size_t d = stats.global_mean.size();
  Matrix m(n, d);
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t j = 0; j < d; ++j) m(c, j) = stats.class_means(c, j) - stats.global_mean[j];
  Matrix g(n, n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a; b < n; ++b) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += m(a, j) * m(b, j);
      g(a, b) = s / static_cast<double>(n);
      g(b, a) = g(a, b);
    }
  if (rcond < 0.0) rcond = default_rcond(d);
  const SymmetricEigen eig = symmetric_eigen(g);
  const double lambda_max = eig.values.back();
  if (!(lambda_max > 0.0)) return 0.0;
  const double cutoff = rcond * lambda_max;
  std::vector<double> u(d), wu(d);
  double tr = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double lambda = eig.values[k];
    if (lambda <= cutoff) continue;
    const double norm = 1.0 / std::sqrt(static_cast<double>(n) * lambda);
    std::fill(u.begin(), u.end(), 0.0);
    for (std::size_t a = 0; a < n; ++a) {
      const double va = eig.vectors(a, k) * norm;
      for (std::size_t j = 0; j < d; ++j) u[j] += va * m(a, j);
    }
    double q = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += stats.sigma_w(i, j) * u[j];
      q += u[i] * s;
    }
    tr += q / lambda;
  }
  return tr / static_cast<double>(n);
}

}  // namespace

double nc1(const ClassStats& stats, double rcond) {
  if (stats.num_classes < stats.sigma_b.rows) return nc1_via_gram(stats, rcond);
  const Matrix sb_pinv = pinv_symmetric(stats.sigma_b, rcond);
  // trace(A B) = sum_ij A_ij B_ji
  const std::size_t d = sb_pinv.rows;
  double tr = 0.0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) tr += stats.sigma_w(i, j) * sb_pinv(j, i);
  return tr / static_cast<double>(stats.num_classes);
}

std::string to_string(Nc2Centering mode) {
  return mode == Nc2Centering::centered ? "centered" : "paper";
}

Nc2Centering parse_centering(const std::string& text) {
  if (text == "paper" || text == "paper_literal") return Nc2Centering::paper_literal;
  if (text == "centered") return Nc2Centering::centered;
  throw ContractError("unknown NC2 centering \"" + text + "\" (expected paper|centered)");
}

Matrix etf_gram(std::size_t n) {
  if (n < 2) throw ContractError("etf_gram: need N >= 2, got " + std::to_string(n));
  const double s = 1.0 / std::sqrt(static_cast<double>(n - 1));
  const double off = -1.0 / static_cast<double>(n);
  Matrix g(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) g(i, j) = s * ((i == j ? 1.0 : 0.0) + off);
  return g;
}

double nc2(const Matrix& class_means, Nc2Centering centering, std::span<const double> global_mean) {
  const std::size_t n = class_means.rows;
  const std::size_t d = class_means.cols;
  if (n < 2) throw ContractError("nc2: need at least 2 class means");
  Matrix h = class_means;
  if (centering == Nc2Centering::centered) {
    if (global_mean.size() != d) {
      throw DimensionError("nc2: global mean has " + std::to_string(global_mean.size()) +
                           " entries for " + std::to_string(d) + "-dim means");
    }
    for (std::size_t c = 0; c < n; ++c)
      for (std::size_t j = 0; j < d; ++j) h(c, j) -= global_mean[j];
  }
  Matrix gram(n, n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a; b < n; ++b) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += h(a, j) * h(b, j);
      gram(a, b) = s;
      gram(b, a) = s;
    }
  const double norm = frobenius_norm(gram);
  if (!(norm > 0.0)) throw NumericalError("nc2: class-mean Gram matrix is zero (degenerate input)");
  const Matrix target = etf_gram(n);
  double s = 0.0;
  for (std::size_t i = 0; i < n * n; ++i) {
    const double diff = gram.values[i] / norm - target.values[i];
    s += diff * diff;
  }
  return std::sqrt(s);
}

CollapseReport episode_collapse(const Matrix& support_features,
                                std::span<const std::size_t> support_labels,
                                const Matrix& query_features,
                                std::span<const std::size_t> query_labels,
                                const CollapseConfig& config, std::size_t episode) {
  const auto all_zero = [](const Matrix& m) {
    return std::all_of(m.values.begin(), m.values.end(), [](double v) { return v == 0.0; });
  };
  CollapseReport r;
  r.episode = episode;
  r.centering = config.centering;
  r.rcond = config.rcond < 0.0 ? default_rcond(support_features.cols) : config.rcond;

  const ClassStats s = class_statistics(support_features, support_labels);
  r.nc1_support = nc1(s, r.rcond);
  r.nc2_support = nc2(s.class_means, config.centering, s.global_mean);
  r.support_sigma_b_zero = all_zero(s.sigma_b);

  const ClassStats q = class_statistics(query_features, query_labels);
  r.nc1_query = nc1(q, r.rcond);
  r.nc2_query = nc2(q.class_means, config.centering, q.global_mean);
  r.query_sigma_b_zero = all_zero(q.sigma_b);
  return r;
}

// ---- FEAT ----------------------------------------------------------------------------

namespace {
constexpr std::uint32_t kFeatureVersion = 1;
}

std::vector<std::size_t> FeatureDump::labels() const {
  std::vector<std::size_t> out(num_classes * shots);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = i / shots;
  return out;
}

void save_feature_dump(const FeatureDump& dump, const std::filesystem::path& path) {
  if (dump.features.rows != dump.num_classes * dump.shots) {
    throw DimensionError("feature dump: " + std::to_string(dump.features.rows) + " rows for N*K = " +
                         std::to_string(dump.num_classes * dump.shots));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  binary::write_magic(out, "FEAT");
  binary::write_u32(out, kFeatureVersion);
  binary::write_u32(out, static_cast<std::uint32_t>(dump.num_classes));
  binary::write_u32(out, static_cast<std::uint32_t>(dump.shots));
  binary::write_u32(out, static_cast<std::uint32_t>(dump.features.cols));
  binary::write_f64s(out, dump.features.values);
  if (!out) throw FormatError("write failed for " + path.string());
}

FeatureDump load_feature_dump(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw FormatError("cannot open feature dump " + path.string());
  binary::Reader in(file, "feature dump " + path.string());
  in.expect_magic("FEAT");
  const auto version = in.u32();
  if (version != kFeatureVersion) {
    throw FormatError(in.what() + ": unsupported version " + std::to_string(version));
  }
  FeatureDump dump;
  dump.num_classes = in.u32();
  dump.shots = in.u32();
  const std::size_t d = in.u32();
  if (dump.num_classes == 0 || dump.shots == 0 || d == 0) {
    throw FormatError(in.what() + ": N, K and d must be positive");
  }
  dump.features = Matrix(dump.num_classes * dump.shots, d);
  in.f64s(dump.features.values);
  in.expect_end();
  return dump;
}

}  // namespace protonc
