#pragma once

// Datasets of labelled images and N-way K-shot episode sampling.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "protonc/nn.hpp"
#include "protonc/tensor.hpp"

namespace protonc {

struct ClassSamples {
  std::string name;
  std::size_t count = 0;
  std::vector<double> pixels;  // count x (C*H*W), row-major
};

struct Dataset {
  ImageSpec spec;
  std::vector<ClassSamples> classes;

  std::size_t num_classes() const { return classes.size(); }
  std::size_t num_samples() const;
  std::span<const double> sample(std::size_t cls, std::size_t index) const;
};

struct EpisodeSpec {
  std::size_t ways = 5;
  std::size_t support_shots = 5;
  std::size_t query_shots = 15;

  void validate() const;
  bool operator==(const EpisodeSpec&) const = default;
};

/// Position of one drawn sample inside its dataset.
struct SampleRef {
  std::size_t cls = 0;
  std::size_t index = 0;
  bool operator==(const SampleRef&) const = default;
};

struct Episode {
  Tensor support;  // [N*Ks, C, H, W]
  Tensor query;    // [N*Kq, C, H, W]
  std::vector<std::size_t> support_labels;  // local 0..N-1, blocks of Ks
  std::vector<std::size_t> query_labels;    // local 0..N-1, blocks of Kq
  std::vector<std::size_t> class_ids;       // global id of each local class
  std::vector<SampleRef> support_refs;
  std::vector<SampleRef> query_refs;
};

/// Independent generator for one (seed, epoch, episode) triple, so episodes can
/// be drawn in any order or concurrently and still be reproducible.
std::mt19937_64 episode_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t episode);

Episode sample_episode(const Dataset& dataset, const EpisodeSpec& spec, std::mt19937_64& rng);

struct SynthParams {
  std::size_t n_classes = 20;
  ImageSpec spec{1, 1, 16};
  double sigma = 0.5;
  double separation = 4.0;
  std::size_t samples_per_class = 20;
  std::uint64_t seed = 0;
};

/// Gaussian class clusters: sample = mean_n + sigma * N(0, I), with class
/// means pairwise at least `separation` apart.
Dataset synth_gaussian(const SynthParams& params);

/// The class means used by synth_gaussian for the same params.
std::vector<std::vector<double>> synth_class_means(const SynthParams& params);

struct SplitFractions {
  double train = 0.64;
  double val = 0.16;
  double test = 0.20;
};

struct DatasetSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Partitions whole classes by a seeded permutation. val and test receive
/// floor(fraction * classes); the remainder goes to train.
DatasetSplits split_classes(const Dataset& dataset, const SplitFractions& fractions,
                            std::uint64_t seed);

// ---- file formats ---------------------------------------------------------------

void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

struct ConvertOptions {
  bool invert = true;   // ink = 1, background = 0
  bool rotate = false;  // add 90/180/270 degree rotations as extra classes
  std::size_t size = 28;
};

struct ConvertSummary {
  std::size_t classes = 0;
  std::size_t samples = 0;
  std::vector<std::string> warnings;
};

/// Reads class subdirectories of grayscale PNGs (nested alphabet directories
/// are walked; any directory holding PNGs is a class), area-resamples to
/// size x size, scales to [0,1] and writes the binary dataset format.
ConvertSummary convert_image_dir(const std::filesystem::path& src_dir,
                                 const std::filesystem::path& dst_file,
                                 const ConvertOptions& options = {});

/// Area-average resampling of a single-channel image.
std::vector<double> area_resize(std::span<const double> src, std::size_t src_h, std::size_t src_w,
                                std::size_t dst_h, std::size_t dst_w);

}  // namespace protonc
