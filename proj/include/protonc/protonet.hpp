#pragma once

// Prototypical-network episode math: class prototypes, query-to-prototype
// distances, the softmax-over-negative-distance loss and nearest-prototype
// classification.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "protonc/tensor.hpp"

namespace protonc {

enum class DistanceMode { squared, plain };

std::string to_string(DistanceMode mode);
DistanceMode parse_distance_mode(const std::string& text);

struct PrototypeSet {
  Tensor matrix;                         // [N, d], row c = mean of class c
  std::vector<std::size_t> class_order;  // local class of each row (0..N-1)
};

/// Mean support embedding per local class. Labels may appear in any order but
/// every class 0..N-1 must occur the same number of times.
PrototypeSet prototypes(const Tensor& support_embeddings, std::span<const std::size_t> labels);

/// [M, N] distances between query rows and prototype rows. Plain mode is
/// sqrt(squared + 1e-12) so its gradient stays finite at zero distance.
Tensor distance_matrix(const Tensor& query_embeddings, const PrototypeSet& protos,
                       DistanceMode mode = DistanceMode::squared);

inline constexpr double kPlainDistanceEpsilon = 1e-12;

struct EpisodeLoss {
  Tensor loss;        // scalar, differentiable
  double error_rate;  // fraction misclassified by nearest prototype
};

/// Mean negative log-likelihood of the true class under softmax(-dists).
EpisodeLoss episode_loss(const Tensor& dists, std::span<const std::size_t> labels);

/// Row-wise argmin, ties to the lowest class index.
std::vector<std::size_t> classify(const Tensor& dists);

}  // namespace protonc
