#pragma once

// Neural-collapse statistics of last-layer features grouped by class.
//
//   global mean  hG = 1/(KN) sum_n sum_k h_nk
//   class mean   hn = 1/K sum_k h_nk
//   Sigma_W      = 1/(KN) sum_n sum_k (h_nk - hn)(h_nk - hn)^T
//   Sigma_B      = 1/N sum_n (hn - hG)(hn - hG)^T
//   NC1          = 1/N trace(Sigma_W pinv(Sigma_B))
//   NC2          = || H H^T / ||H H^T||_F - (I - 11^T/N)/sqrt(N-1) ||_F
//
// with H the class means stacked as rows (optionally centered by hG).
// Metrics are observations on detached features; nothing here is
// differentiated.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "protonc/linalg.hpp"

namespace protonc {

struct ClassStats {
  std::vector<double> global_mean;  // [d]
  Matrix class_means;               // [N, d]
  Matrix sigma_w;                   // [d, d]
  Matrix sigma_b;                   // [d, d]
  std::size_t num_classes = 0;
  std::size_t shots = 0;
};

/// Labels 0..N-1 in any order; every class must have the same count K >= 1.
ClassStats class_statistics(const Matrix& features, std::span<const std::size_t> labels);

double nc1(const ClassStats& stats, double rcond = -1.0);

enum class Nc2Centering { paper_literal, centered };

std::string to_string(Nc2Centering mode);
Nc2Centering parse_centering(const std::string& text);

/// Normalised simplex-ETF Gram matrix (I_N - 11^T/N) / sqrt(N-1).
Matrix etf_gram(std::size_t n);

double nc2(const Matrix& class_means, Nc2Centering centering, std::span<const double> global_mean);

struct CollapseConfig {
  Nc2Centering centering = Nc2Centering::paper_literal;
  double rcond = -1.0;  // negative: d * machine epsilon
};

struct CollapseReport {
  double nc1_support = 0.0;
  double nc2_support = 0.0;
  double nc1_query = 0.0;
  double nc2_query = 0.0;
  std::size_t episode = 0;
  Nc2Centering centering = Nc2Centering::paper_literal;
  double rcond = 0.0;  // effective relative cutoff
  bool support_sigma_b_zero = false;
  bool query_sigma_b_zero = false;
};

/// NC1/NC2 of the support features and, separately, of the query features.
CollapseReport episode_collapse(const Matrix& support_features,
                                std::span<const std::size_t> support_labels,
                                const Matrix& query_features,
                                std::span<const std::size_t> query_labels,
                                const CollapseConfig& config, std::size_t episode = 0);

// ---- feature dumps ("FEAT") --------------------------------------------------------

struct FeatureDump {
  std::size_t num_classes = 0;
  std::size_t shots = 0;
  Matrix features;  // [N*K, d], class-major blocks

  std::vector<std::size_t> labels() const;
};

void save_feature_dump(const FeatureDump& dump, const std::filesystem::path& path);
FeatureDump load_feature_dump(const std::filesystem::path& path);

}  // namespace protonc
