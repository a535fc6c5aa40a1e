#pragma once

// Layers and embedding backbones.
//
// Three architectures are available:
//   convnet4  four blocks of conv3x3(pad 1) -> batchnorm -> relu -> maxpool2,
//             flattened; 64-dim features at 28x28 input with 64 channels.
//   resnet18  CIFAR-style ResNet-18 (3x3 stem, no stem pool) with the final
//             linear layer removed; 512-dim globally pooled features.
//   mlp       flatten, then Linear -> ReLU for each given width, so features
//             are post-activation like the other two.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "protonc/tensor.hpp"

namespace protonc {

struct ImageSpec {
  std::size_t channels = 1;
  std::size_t height = 28;
  std::size_t width = 28;

  std::size_t size() const { return channels * height * width; }
  bool operator==(const ImageSpec&) const = default;
};

// ---- layer ops ---------------------------------------------------------------

/// Cross-correlation with zero padding. `bias` may be an undefined Tensor.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

struct BatchNormState {
  explicit BatchNormState(std::size_t channels);

  Tensor gamma;
  Tensor beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;

  std::size_t channels() const { return running_mean.size(); }
  void reset();
};

/// Training mode standardises by batch statistics (biased variance) and
/// folds them into the running estimates (unbiased variance); eval mode
/// uses the running estimates and leaves the state untouched.
Tensor batchnorm2d(const Tensor& input, BatchNormState& state, bool training);

/// Non-overlapping k x k window maximum; trailing rows/columns that do not
/// fill a window are dropped. Ties go to the first maximum in row-major order.
Tensor maxpool2d(const Tensor& input, std::size_t k);

/// [B,C,H,W] -> [B,C] spatial mean.
Tensor global_avgpool2d(const Tensor& input);

/// x[B,in] * W[out,in]^T + b[out]
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

// ---- backbones ---------------------------------------------------------------

enum class Architecture { convnet4, resnet18, mlp };

struct BackboneConfig {
  Architecture arch = Architecture::convnet4;
  std::vector<std::size_t> widths;  // mlp only
  std::size_t hidden_channels = 64;  // convnet4 only
  ImageSpec input;

  /// "convnet4", "convnet4:16", "resnet18", "mlp", "mlp:256,256"
  static BackboneConfig parse(const std::string& descriptor, ImageSpec input = {});
  std::string descriptor() const;
};

class Backbone {
 public:
  explicit Backbone(const BackboneConfig& config, std::uint64_t seed = 0);

  Backbone(Backbone&&) noexcept = default;
  Backbone& operator=(Backbone&&) noexcept = default;
  Backbone(const Backbone&) = delete;
  Backbone& operator=(const Backbone&) = delete;

  Tensor embed(const Tensor& images, bool training);

  const BackboneConfig& config() const { return config_; }
  std::size_t embedding_dim() const { return embedding_dim_; }

  /// Learned tensors in declaration order (shared handles).
  const std::vector<Tensor>& parameters() const { return params_; }
  std::size_t parameter_count() const;

  /// Kaiming-style fan-in uniform weights, zero biases and shifts, unit scales;
  /// running statistics are reset.
  void init_parameters(std::uint64_t seed);

  void for_each_norm(const std::function<void(BatchNormState&)>& fn);
  void for_each_norm(const std::function<void(const BatchNormState&)>& fn) const;

  void zero_grad();

 private:
  struct Conv {
    Tensor weight;
    Tensor bias;  // undefined when the layer has none
    std::size_t stride = 1;
    std::size_t padding = 1;
  };
  struct Dense {
    Tensor weight;
    Tensor bias;
  };
  struct ResidualBlock {
    Conv conv1;
    BatchNormState bn1;
    Conv conv2;
    BatchNormState bn2;
    std::optional<Conv> shortcut;
    std::optional<BatchNormState> shortcut_bn;
  };

  Conv make_conv(std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                 std::size_t padding, bool bias);
  Tensor embed_convnet(const Tensor& x, bool training);
  Tensor embed_resnet(const Tensor& x, bool training);
  Tensor embed_mlp(const Tensor& x);

  BackboneConfig config_;
  std::size_t embedding_dim_ = 0;
  std::vector<Tensor> params_;
  std::vector<Conv> convs_;
  std::vector<BatchNormState> norms_;
  std::vector<ResidualBlock> blocks_;
  std::vector<Dense> dense_;
};

std::size_t count_parameters(const Backbone& backbone);

/// Checkpoint I/O: "PCKP", version, descriptor, input spec, parameter tensors
/// in declaration order, then batchnorm running statistics.
void save_checkpoint(const Backbone& backbone, const std::filesystem::path& path);
Backbone load_checkpoint(const std::filesystem::path& path);

}  // namespace protonc
