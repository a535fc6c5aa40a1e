#include "protonc/protonet.hpp"

#include <algorithm>
#include <numeric>

#include "protonc/errors.hpp"

namespace protonc {

std::string to_string(DistanceMode mode) { return mode == DistanceMode::plain ? "plain" : "squared"; }

DistanceMode parse_distance_mode(const std::string& text) {
  if (text == "squared") return DistanceMode::squared;
  if (text == "plain") return DistanceMode::plain;
  throw ContractError("unknown distance mode \"" + text + "\" (expected squared|plain)");
}

PrototypeSet prototypes(const Tensor& support_embeddings, std::span<const std::size_t> labels) {
  if (support_embeddings.rank() != 2) {
    throw DimensionError("prototypes: embeddings must be [rows, d], got " +
                         shape_string(support_embeddings.shape()));
  }
  const std::size_t rows = support_embeddings.dim(0);
  if (labels.size() != rows) {
    throw DimensionError("prototypes: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(rows) + " embeddings");
  }
  const std::size_t n_classes = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::size_t> counts(n_classes, 0);
  for (auto l : labels) ++counts[l];
  const std::size_t shots = counts.front();
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (counts[c] != shots || shots == 0) {
      throw ContractError("prototypes: class " + std::to_string(c) + " has " +
                          std::to_string(counts[c]) + " support samples, expected " +
                          std::to_string(shots) + " for every class");
    }
  }
  // Averaging matrix A[N, rows] with 1/K at (label_i, i); prototypes = A * E.
  std::vector<double> avg(n_classes * rows, 0.0);
  const double w = 1.0 / static_cast<double>(shots);
  for (std::size_t i = 0; i < rows; ++i) avg[labels[i] * rows + i] = w;
  PrototypeSet set;
  set.matrix = matmul(Tensor({n_classes, rows}, std::move(avg)), support_embeddings);
  set.class_order.resize(n_classes);
  std::iota(set.class_order.begin(), set.class_order.end(), std::size_t{0});
  return set;
}

Tensor distance_matrix(const Tensor& query_embeddings, const PrototypeSet& protos,
                       DistanceMode mode) {
  Tensor sq = pairwise_sqdist(query_embeddings, protos.matrix);
  if (mode == DistanceMode::squared) return sq;
  return sqrt(add_scalar(sq, kPlainDistanceEpsilon));
}

EpisodeLoss episode_loss(const Tensor& dists, std::span<const std::size_t> labels) {
  if (dists.rank() != 2 || labels.size() != dists.dim(0)) {
    throw DimensionError("episode_loss: " + std::to_string(labels.size()) + " labels for distances " +
                         shape_string(dists.shape()));
  }
  const std::size_t n_classes = dists.dim(1);
  for (auto l : labels) {
    if (l >= n_classes) {
      throw ContractError("episode_loss: label " + std::to_string(l) + " out of range for " +
                          std::to_string(n_classes) + " classes");
    }
  }
  Tensor log_probs = log_softmax(neg(dists));
  Tensor loss = neg(mean(pick(log_probs, labels)));
  const auto predicted = classify(dists);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) wrong += predicted[i] != labels[i];
  return {loss, static_cast<double>(wrong) / static_cast<double>(labels.size())};
}

std::vector<std::size_t> classify(const Tensor& dists) {
  if (dists.rank() != 2) {
    throw DimensionError("classify: expected [M, N] distances, got " + shape_string(dists.shape()));
  }
  const std::size_t rows = dists.dim(0);
  const std::size_t cols = dists.dim(1);
  const auto d = dists.data();
  std::vector<std::size_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto* row = d.data() + r * cols;
    out[r] = static_cast<std::size_t>(std::min_element(row, row + cols) - row);
  }
  return out;
}

}  // namespace protonc
