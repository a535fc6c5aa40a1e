#pragma once

// Episodic training: one Adam step per episode, step learning-rate decay,
// per-episode collapse metrics, per-epoch aggregation and run logging.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "protonc/collapse.hpp"
#include "protonc/episodes.hpp"
#include "protonc/nn.hpp"
#include "protonc/protonet.hpp"

namespace protonc {

struct TrainConfig {
  std::string backbone = "convnet4";
  EpisodeSpec train_spec{60, 5, 5};
  EpisodeSpec eval_spec{5, 5, 15};
  std::size_t episodes_per_epoch = 100;
  std::size_t eval_episodes_per_epoch = 100;
  std::size_t epochs = 100;
  double base_lr = 1e-3;
  std::size_t decay_every = 20;
  double decay_factor = 0.5;
  DistanceMode distance = DistanceMode::squared;
  Nc2Centering nc2_centering = Nc2Centering::paper_literal;
  double rcond = -1.0;
  bool validate = true;
  std::uint64_t init_seed = 0;
  std::uint64_t sampler_seed = 1;
  std::uint64_t split_seed = 2;
  SplitFractions split;
  std::string dataset;
  std::string output_dir = "run";

  void validate_fields() const;
};

std::string config_to_json(const TrainConfig& config);
/// Keys absent from the JSON keep their defaults; unknown keys are rejected.
TrainConfig config_from_json(const std::string& text, TrainConfig base = {});

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// Bias-corrected Adam without weight decay, using explicit gradients.
void adam_step(std::span<Tensor> params, std::span<const std::span<const double>> grads,
               AdamState& state, double lr);
/// Same, reading each parameter's accumulated gradient.
void adam_step(std::span<Tensor> params, AdamState& state, double lr);

double lr_schedule(std::size_t epoch, const TrainConfig& config);

enum class RunMode { train, eval };

std::string to_string(RunMode mode);

struct EpisodeRecord {
  std::size_t epoch = 0;
  RunMode split = RunMode::train;
  std::size_t episode = 0;
  double loss = 0.0;
  double error = 0.0;
  double nc1_support = 0.0;
  double nc1_query = 0.0;
  double nc2_support = 0.0;
  double nc2_query = 0.0;
  double lr = 0.0;
};

struct EpochReport {
  std::size_t epoch = 0;
  RunMode split = RunMode::train;
  double loss = 0.0;
  double error = 0.0;
  double nc1_support = 0.0;
  double nc1_query = 0.0;
  double nc2_support = 0.0;
  double nc2_query = 0.0;
  double lr = 0.0;
};

/// Runs one epoch of episodes. Train mode updates `backbone` through `state`
/// after every episode; eval mode uses eval-mode batchnorm, records no graph
/// and never touches parameters or running statistics.
EpochReport run_epoch(Backbone& backbone, AdamState* state, const Dataset& dataset,
                      const TrainConfig& config, std::size_t epoch, RunMode mode,
                      std::vector<EpisodeRecord>* episodes = nullptr);

/// Same per-episode forward pass, returning the detached embeddings instead
/// of metrics: support rows then query rows, with their local labels.
struct EpisodeFeatures {
  Matrix support;
  Matrix query;
  std::vector<std::size_t> support_labels;
  std::vector<std::size_t> query_labels;
};
EpisodeFeatures embed_episode(Backbone& backbone, const Episode& episode, bool training);

struct TrainResult {
  std::filesystem::path run_dir;
  std::vector<EpochReport> history;
};

using EpochCallback = std::function<void(const EpochReport&)>;

/// Writes config.json, epochs.csv, episodes.csv and checkpoints/ under
/// config.output_dir. `val` may be null (or config.validate false).
TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset* val,
                  const EpochCallback& on_epoch = {});

/// Evaluation-only epochs for a trained backbone; writes eval_epochs.csv and
/// eval_episodes.csv under `out_dir` when it is non-empty.
std::vector<EpochReport> evaluate(Backbone& backbone, const Dataset& dataset,
                                  const TrainConfig& config, std::size_t epochs,
                                  const std::filesystem::path& out_dir = {});

// ---- CSV ---------------------------------------------------------------------------

std::string epoch_csv_header();
std::string episode_csv_header();
std::string to_csv_row(const EpochReport& r);
std::string to_csv_row(const EpisodeRecord& r);
/// Parses an epochs.csv written by train().
std::vector<EpochReport> read_epoch_csv(const std::filesystem::path& path);

}  // namespace protonc
