#include <cmath>
#include <random>

#include "doctest.h"
#include "grad_suite.hpp"
#include "oracles.hpp"
#include "protonc/errors.hpp"
#include "protonc/protonet.hpp"

using namespace protonc;

namespace {
std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

std::vector<std::size_t> blocks(std::size_t n, std::size_t k) {
  std::vector<std::size_t> l(n * k);
  for (std::size_t i = 0; i < l.size(); ++i) l[i] = i / k;
  return l;
}
}  // namespace

TEST_CASE("prototypes examples") {
  std::mt19937_64 rng(1);
  const Tensor one = oracle::random_tensor({3, 4}, rng);
  CHECK(values(prototypes(one, blocks(3, 1)).matrix) == values(one));

  const Tensor two({2, 2}, {1, 2, 3, 4});
  const PrototypeSet p = prototypes(two, std::vector<std::size_t>{0, 0});
  CHECK(values(p.matrix) == std::vector<double>{2, 3});
  CHECK(p.class_order == std::vector<std::size_t>{0});
}

TEST_CASE("prototypes match a per-class summation oracle") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng() % 5, k = 1 + rng() % 6, d = 1 + rng() % 8;
    const Tensor e = oracle::random_tensor({n * k, d}, rng);
    std::vector<std::size_t> labels = blocks(n, k);
    std::shuffle(labels.begin(), labels.end(), rng);
    const Tensor got = prototypes(e, labels).matrix;
    REQUIRE(got.shape() == Shape{n, d});
    for (std::size_t c = 0; c < n; ++c)
      for (std::size_t j = 0; j < d; ++j) {
        double s = 0;
        for (std::size_t i = 0; i < n * k; ++i)
          if (labels[i] == c) s += e.data()[i * d + j];
        CHECK(std::abs(got.data()[c * d + j] - s / static_cast<double>(k)) <= 1e-12);
      }
  }
}

TEST_CASE("prototypes reject incomplete class blocks") {
  const Tensor e = Tensor::zeros({3, 2});
  CHECK_THROWS_AS(prototypes(e, std::vector<std::size_t>{0, 0, 1}), ContractError);
  CHECK_THROWS_AS(prototypes(e, std::vector<std::size_t>{0, 2, 2}), ContractError);
  CHECK_THROWS_AS(prototypes(e, std::vector<std::size_t>{0, 1}), DimensionError);
}

TEST_CASE("distance_matrix examples") {
  const PrototypeSet p = prototypes(Tensor({1, 2}, {3, 4}), std::vector<std::size_t>{0});
  const Tensor u({2, 2}, {0, 0, 3, 4});
  const Tensor sq = distance_matrix(u, p, DistanceMode::squared);
  CHECK(values(sq) == std::vector<double>{25, 0});
  const Tensor pl = distance_matrix(u, p, DistanceMode::plain);
  CHECK(pl.data()[0] == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(std::abs(pl.data()[1]) <= 1e-6);
  CHECK_THROWS_AS(distance_matrix(Tensor::zeros({2, 3}), p), DimensionError);
  CHECK(parse_distance_mode("plain") == DistanceMode::plain);
  CHECK(to_string(DistanceMode::squared) == "squared");
  CHECK_THROWS_AS(parse_distance_mode("cosine"), ContractError);
}

TEST_CASE("distance_matrix matches a per-pair loop oracle") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng() % 10, n = 2 + rng() % 5, d = 1 + rng() % 8;
    const Tensor q = oracle::random_tensor({m, d}, rng);
    const Tensor v = oracle::random_tensor({n, d}, rng);
    const PrototypeSet p = prototypes(v, blocks(n, 1));
    const Tensor sq = distance_matrix(q, p, DistanceMode::squared);
    const Tensor pl = distance_matrix(q, p, DistanceMode::plain);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t c = 0; c < n; ++c) {
        double s = 0;
        for (std::size_t j = 0; j < d; ++j) {
          const double diff = q.data()[i * d + j] - v.data()[c * d + j];
          s += diff * diff;
        }
        CHECK(std::abs(sq.data()[i * n + c] - s) <= 1e-12);
        CHECK(std::abs(pl.data()[i * n + c] - std::sqrt(s + kPlainDistanceEpsilon)) <= 1e-12);
      }
  }
}

TEST_CASE("episode_loss examples") {
  const EpisodeLoss two = episode_loss(Tensor({2, 2}, {1.5, 1.5, 0.2, 0.2}), std::vector<std::size_t>{0, 1});
  CHECK(std::abs(two.loss.item() - std::log(2.0)) <= 1e-12);

  const EpisodeLoss sep = episode_loss(Tensor({1, 2}, {0, 10}), std::vector<std::size_t>{0});
  CHECK(std::abs(sep.loss.item() - std::log1p(std::exp(-10.0))) <= 1e-12);
  CHECK(sep.error_rate == 0.0);

  for (std::size_t n : {2u, 3u, 5u, 20u, 60u}) {
    const EpisodeLoss u = episode_loss(Tensor::full({4, n}, 7.25), std::vector<std::size_t>{0, 1, 0, 1});
    CHECK(std::abs(u.loss.item() - std::log(static_cast<double>(n))) <= 1e-12);
  }

  const EpisodeLoss wrong = episode_loss(Tensor({2, 2}, {5, 1, 0, 3}), std::vector<std::size_t>{0, 0});
  CHECK(wrong.error_rate == 0.5);
  const EpisodeLoss huge = episode_loss(Tensor({1, 2}, {0, 1e6}), std::vector<std::size_t>{1});
  CHECK(std::isfinite(huge.loss.item()));
  CHECK(huge.loss.item() == doctest::Approx(1e6));

  CHECK_THROWS_AS(episode_loss(Tensor::zeros({1, 2}), std::vector<std::size_t>{2}), ContractError);
  CHECK_THROWS_AS(episode_loss(Tensor::zeros({2, 2}), std::vector<std::size_t>{0}), DimensionError);
}

TEST_CASE("episode_loss is non-negative on random rows") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor d = oracle::random_tensor({6, 4}, rng, 0, 20);
    std::vector<std::size_t> l(6);
    for (auto& x : l) x = rng() % 4;
    CHECK(episode_loss(d, l).loss.item() >= 0.0);
  }
}

TEST_CASE("classify examples and invariances") {
  CHECK(classify(Tensor({1, 3}, {3, 1, 2})) == std::vector<std::size_t>{1});
  CHECK(classify(Tensor({1, 3}, {1, 1, 5})) == std::vector<std::size_t>{0});

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor d = oracle::random_tensor({8, 5}, rng, 0, 10);
    const auto labels = classify(d);
    const Tensor p = log_softmax(neg(d));
    std::vector<double> shifted(values(d));
    for (std::size_t r = 0; r < 8; ++r) {
      const auto row = p.data().subspan(r * 5, 5);
      CHECK(labels[r] == static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()));
      const double c = oracle::random_values(1, rng, -50, 50)[0];
      for (std::size_t j = 0; j < 5; ++j) shifted[r * 5 + j] += c;
    }
    CHECK(classify(Tensor({8, 5}, shifted)) == labels);
  }
}

TEST_CASE("rigid motions leave distances, loss and decisions unchanged") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng() % 4, k = 1 + rng() % 4, m = n * 3, d = 2 + rng() % 6;
    const auto s = oracle::random_values(n * k * d, rng, -2, 2);
    const auto q = oracle::random_values(m * d, rng, -2, 2);
    const auto rot = oracle::random_orthogonal(d, rng);
    const auto shift = oracle::random_values(d, rng, -5, 5);
    const auto sl = blocks(n, k), ql = blocks(n, 3);

    const Tensor d0 = distance_matrix(Tensor({m, d}, q), prototypes(Tensor({n * k, d}, s), sl));
    const Tensor d1 = distance_matrix(Tensor({m, d}, oracle::rigid(q, m, d, rot, shift)),
                                      prototypes(Tensor({n * k, d}, oracle::rigid(s, n * k, d, rot, shift)), sl));
    CHECK(oracle::max_abs_diff(d0.data(), d1.data()) <= 1e-9);
    CHECK(std::abs(episode_loss(d0, ql).loss.item() - episode_loss(d1, ql).loss.item()) <= 1e-9);
    CHECK(classify(d0) == classify(d1));
  }
}

TEST_CASE("episode loss gradient through prototypes and queries") {
  std::uint64_t seed = 40;
  for (const auto& op : gradsuite::layer_ops()) {
    if (op.name.rfind("episode_loss", 0) != 0) continue;
    CAPTURE(op.name);
    CHECK(gradsuite::worst_error(op, 20, ++seed) <= 1e-5);
  }
}
