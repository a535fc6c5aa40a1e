#include "protonc/nn.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <random>
#include <sstream>

#include "protonc/binary_io.hpp"
#include "protonc/errors.hpp"
#include "protonc/kernels.hpp"

namespace protonc {

using detail::GradSinks;

namespace {

void require_rank4(const Tensor& t, const char* op) {
  if (t.rank() != 4) {
    throw DimensionError(std::string(op) + ": expected [B,C,H,W], got " + shape_string(t.shape()));
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank4(input, "conv2d");
  require_rank4(weight, "conv2d weight");
  if (stride == 0) throw ContractError("conv2d: stride must be >= 1");
  const std::size_t batch = input.dim(0);
  const std::size_t cout = weight.dim(0);
  kernels::ConvGeometry g;
  g.channels = input.dim(1);
  g.height = input.dim(2);
  g.width = input.dim(3);
  g.kernel_h = weight.dim(2);
  g.kernel_w = weight.dim(3);
  g.stride = stride;
  g.padding = padding;
  if (weight.dim(1) != g.channels) {
    throw DimensionError("conv2d: input " + shape_string(input.shape()) + " has " +
                         std::to_string(g.channels) + " channels, weight " +
                         shape_string(weight.shape()) + " expects " + std::to_string(weight.dim(1)));
  }
  if (g.kernel_h > g.height + 2 * padding || g.kernel_w > g.width + 2 * padding) {
    throw DimensionError("conv2d: kernel " + shape_string(weight.shape()) +
                         " larger than padded input " + shape_string(input.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != cout)) {
    throw DimensionError("conv2d: bias " + shape_string(bias.shape()) + " for " +
                         std::to_string(cout) + " output channels");
  }

  const std::size_t oh = g.out_h();
  const std::size_t ow = g.out_w();
  const std::size_t spatial = oh * ow;
  const std::size_t patch = g.patch_size();
  const std::size_t in_stride = g.channels * g.height * g.width;

  std::vector<double> out(batch * cout * spatial);
  std::vector<double> col(patch * spatial);
  const auto x = input.data();
  const auto w = weight.data();
  for (std::size_t b = 0; b < batch; ++b) {
    kernels::im2col(g, x.subspan(b * in_stride, in_stride), col);
    std::span<double> ob(out.data() + b * cout * spatial, cout * spatial);
    kernels::gemm(cout, spatial, patch, {w, false}, {col, false}, ob, false);
    if (has_bias) {
      const auto bv = bias.data();
      for (std::size_t c = 0; c < cout; ++c)
        for (std::size_t s = 0; s < spatial; ++s) ob[c * spatial + s] += bv[c];
    }
  }

  std::vector<Tensor> inputs{input, weight};
  if (has_bias) inputs.push_back(bias);
  auto xi = input.impl();
  auto wi = weight.impl();
  return Tensor::from_op(
      "conv2d", Shape{batch, cout, oh, ow}, std::move(out), inputs,
      [xi, wi, g, batch, cout, has_bias](std::span<const double> grad, const GradSinks& s) {
        const std::size_t spatial = g.out_h() * g.out_w();
        const std::size_t patch = g.patch_size();
        const std::size_t in_stride = g.channels * g.height * g.width;
        std::vector<double> col(patch * spatial);
        std::vector<double> dcol(patch * spatial);
        for (std::size_t b = 0; b < batch; ++b) {
          const auto gb = grad.subspan(b * cout * spatial, cout * spatial);
          if (s[1]) {
            kernels::im2col(g, std::span<const double>(xi->data).subspan(b * in_stride, in_stride),
                            col);
            kernels::gemm(cout, patch, spatial, {gb, false}, {col, true}, *s[1], true);
          }
          if (s[0]) {
            kernels::gemm(patch, spatial, cout, {wi->data, true}, {gb, false}, dcol, false);
            kernels::col2im(g, dcol, std::span<double>(*s[0]).subspan(b * in_stride, in_stride));
          }
          if (has_bias && s[2]) {
            auto& db = *s[2];
            for (std::size_t c = 0; c < cout; ++c)
              for (std::size_t k = 0; k < spatial; ++k) db[c] += gb[c * spatial + k];
          }
        }
      });
}

BatchNormState::BatchNormState(std::size_t channels)
    : gamma(Tensor::full({channels}, 1.0, true)),
      beta(Tensor::zeros({channels}, true)),
      running_mean(channels, 0.0),
      running_var(channels, 1.0) {}

void BatchNormState::reset() {
  std::fill(gamma.mutable_data().begin(), gamma.mutable_data().end(), 1.0);
  std::fill(beta.mutable_data().begin(), beta.mutable_data().end(), 0.0);
  std::fill(running_mean.begin(), running_mean.end(), 0.0);
  std::fill(running_var.begin(), running_var.end(), 1.0);
}

Tensor batchnorm2d(const Tensor& input, BatchNormState& state, bool training) {
  require_rank4(input, "batchnorm2d");
  const std::size_t batch = input.dim(0);
  const std::size_t channels = input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  if (channels != state.channels()) {
    throw DimensionError("batchnorm2d: input " + shape_string(input.shape()) + " vs " +
                         std::to_string(state.channels()) + " channels of state");
  }
  const std::size_t count = batch * plane;
  if (training && count < 2) {
    throw ContractError("batchnorm2d: training mode needs at least 2 values per channel, got " +
                        std::to_string(count));
  }

  const auto x = input.data();
  const auto gamma = state.gamma.data();
  const auto beta = state.beta.data();
  std::vector<double> out(x.size());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(channels);
  const auto at = [&](std::size_t b, std::size_t c, std::size_t i) {
    return (b * channels + c) * plane + i;
  };

  const auto channels_i = static_cast<std::int64_t>(channels);
#pragma omp parallel for schedule(static)
  for (std::int64_t ci = 0; ci < channels_i; ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    double mu = 0.0;
    double var = 0.0;
    if (training) {
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < plane; ++i) mu += x[at(b, c, i)];
      mu /= static_cast<double>(count);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = x[at(b, c, i)] - mu;
          var += d * d;
        }
      const double biased = var / static_cast<double>(count);
      const double unbiased = var / static_cast<double>(count - 1);
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mu;
      state.running_var[c] =
          (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
      var = biased;
    } else {
      mu = state.running_mean[c];
      var = state.running_var[c];
    }
    const double is = 1.0 / std::sqrt(var + state.epsilon);
    (*inv_std)[c] = is;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < plane; ++i) {
        const std::size_t k = at(b, c, i);
        const double h = (x[k] - mu) * is;
        (*xhat)[k] = h;
        out[k] = gamma[c] * h + beta[c];
      }
  }

  auto gi = state.gamma.impl();
  return Tensor::from_op(
      "batchnorm2d", input.shape(), std::move(out), {input, state.gamma, state.beta},
      [xhat, inv_std, gi, batch, channels, plane, training](std::span<const double> g,
                                                            const GradSinks& s) {
        const double m = static_cast<double>(batch * plane);
        const auto at = [&](std::size_t b, std::size_t c, std::size_t i) {
          return (b * channels + c) * plane + i;
        };
        for (std::size_t c = 0; c < channels; ++c) {
          double sum_g = 0.0;
          double sum_gx = 0.0;
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < plane; ++i) {
              const std::size_t k = at(b, c, i);
              sum_g += g[k];
              sum_gx += g[k] * (*xhat)[k];
            }
          if (s[1]) (*s[1])[c] += sum_gx;
          if (s[2]) (*s[2])[c] += sum_g;
          if (!s[0]) continue;
          const double gamma = gi->data[c];
          const double is = (*inv_std)[c];
          auto& dx = *s[0];
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < plane; ++i) {
              const std::size_t k = at(b, c, i);
              if (training) {
                dx[k] += gamma * is / m * (m * g[k] - sum_g - (*xhat)[k] * sum_gx);
              } else {
                dx[k] += gamma * is * g[k];
              }
            }
        }
      });
}

Tensor maxpool2d(const Tensor& input, std::size_t k) {
  require_rank4(input, "maxpool2d");
  if (k == 0) throw ContractError("maxpool2d: window must be >= 1");
  const std::size_t batch = input.dim(0);
  const std::size_t channels = input.dim(1);
  const std::size_t h = input.dim(2);
  const std::size_t w = input.dim(3);
  if (h < k || w < k) {
    throw DimensionError("maxpool2d: window " + std::to_string(k) + " exceeds spatial extent of " +
                         shape_string(input.shape()));
  }
  const std::size_t oh = h / k;
  const std::size_t ow = w / k;
  const auto x = input.data();
  std::vector<double> out(batch * channels * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const auto planes = static_cast<std::int64_t>(batch * channels);
#pragma omp parallel for schedule(static)
  for (std::int64_t pi = 0; pi < planes; ++pi) {
    const auto p = static_cast<std::size_t>(pi);
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = p * h * w + (oy * k) * w + ox * k;
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx) {
            const std::size_t idx = p * h * w + (oy * k + dy) * w + ox * k + dx;
            if (x[idx] > x[best]) best = idx;
          }
        const std::size_t o = (p * oh + oy) * ow + ox;
        out[o] = x[best];
        argmax[o] = best;
      }
  }
  return Tensor::from_op("maxpool2d", Shape{batch, channels, oh, ow}, std::move(out), {input},
                         [argmax = std::move(argmax)](std::span<const double> g,
                                                      const GradSinks& s) {
                           auto& dx = *s[0];
                           for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += g[o];
                         });
}

Tensor global_avgpool2d(const Tensor& input) {
  require_rank4(input, "global_avgpool2d");
  const std::size_t batch = input.dim(0);
  const std::size_t channels = input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  const auto x = input.data();
  std::vector<double> out(batch * channels, 0.0);
  for (std::size_t p = 0; p < batch * channels; ++p) {
    double total = 0.0;
    for (std::size_t i = 0; i < plane; ++i) total += x[p * plane + i];
    out[p] = total / static_cast<double>(plane);
  }
  return Tensor::from_op("global_avgpool2d", Shape{batch, channels}, std::move(out), {input},
                         [plane](std::span<const double> g, const GradSinks& s) {
                           auto& dx = *s[0];
                           const double inv = 1.0 / static_cast<double>(plane);
                           for (std::size_t p = 0; p < g.size(); ++p)
                             for (std::size_t i = 0; i < plane; ++i) dx[p * plane + i] += g[p] * inv;
                         });
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (input.rank() != 2 || weight.rank() != 2 || weight.dim(1) != input.dim(1)) {
    throw DimensionError("linear: input " + shape_string(input.shape()) + " with weight " +
                         shape_string(weight.shape()));
  }
  Tensor y = matmul(input, transpose(weight));
  return bias.defined() ? add(y, bias) : y;
}

// ---- BackboneConfig -----------------------------------------------------------

BackboneConfig BackboneConfig::parse(const std::string& descriptor, ImageSpec input) {
  BackboneConfig c;
  c.input = input;
  const auto colon = descriptor.find(':');
  const std::string name = descriptor.substr(0, colon);
  const std::string args = colon == std::string::npos ? "" : descriptor.substr(colon + 1);
  std::vector<std::size_t> numbers;
  if (!args.empty()) {
    std::stringstream ss(args);
    std::string item;
    while (std::getline(ss, item, ',')) {
      std::size_t pos = 0;
      unsigned long long v = 0;
      try {
        v = std::stoull(item, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos != item.size() || item.empty() || v == 0) {
        throw ContractError("backbone descriptor \"" + descriptor + "\": bad width \"" + item + "\"");
      }
      numbers.push_back(static_cast<std::size_t>(v));
    }
  }
  if (name == "convnet4") {
    c.arch = Architecture::convnet4;
    if (numbers.size() > 1) throw ContractError("convnet4 takes at most one channel width");
    if (!numbers.empty()) c.hidden_channels = numbers.front();
  } else if (name == "resnet18") {
    c.arch = Architecture::resnet18;
    if (!numbers.empty()) throw ContractError("resnet18 takes no arguments");
  } else if (name == "mlp") {
    c.arch = Architecture::mlp;
    c.widths = std::move(numbers);
  } else {
    throw ContractError("unknown backbone \"" + descriptor + "\"");
  }
  return c;
}

std::string BackboneConfig::descriptor() const {
  switch (arch) {
    case Architecture::convnet4:
      return hidden_channels == 64 ? "convnet4" : "convnet4:" + std::to_string(hidden_channels);
    case Architecture::resnet18:
      return "resnet18";
    case Architecture::mlp: {
      std::string s = "mlp";
      for (std::size_t i = 0; i < widths.size(); ++i) {
        s += (i == 0 ? ":" : ",") + std::to_string(widths[i]);
      }
      return s;
    }
  }
  return {};
}

// ---- Backbone -------------------------------------------------------------------

Backbone::Conv Backbone::make_conv(std::size_t in, std::size_t out, std::size_t k,
                                   std::size_t stride, std::size_t padding, bool bias) {
  Conv c;
  c.weight = Tensor::zeros({out, in, k, k}, true);
  params_.push_back(c.weight);
  if (bias) {
    c.bias = Tensor::zeros({out}, true);
    params_.push_back(c.bias);
  }
  c.stride = stride;
  c.padding = padding;
  return c;
}

Backbone::Backbone(const BackboneConfig& config, std::uint64_t seed) : config_(config) {
  const ImageSpec& in = config_.input;
  if (in.size() == 0) throw ContractError("backbone input spec must be non-empty");
  switch (config_.arch) {
    case Architecture::convnet4: {
      std::size_t channels = in.channels;
      std::size_t h = in.height;
      std::size_t w = in.width;
      for (int block = 0; block < 4; ++block) {
        convs_.push_back(make_conv(channels, config_.hidden_channels, 3, 1, 1, true));
        norms_.emplace_back(config_.hidden_channels);
        params_.push_back(norms_.back().gamma);
        params_.push_back(norms_.back().beta);
        channels = config_.hidden_channels;
        if (h < 2 || w < 2) {
          throw DimensionError("convnet4: input " + std::to_string(in.height) + "x" +
                               std::to_string(in.width) + " too small for four 2x2 pools");
        }
        h /= 2;
        w /= 2;
      }
      embedding_dim_ = channels * h * w;
      break;
    }
    case Architecture::resnet18: {
      if (in.channels != 1 && in.channels != 3) {
        throw DimensionError("resnet18 expects 1 or 3 input channels");
      }
      convs_.push_back(make_conv(3, 64, 3, 1, 1, false));
      norms_.emplace_back(64);
      params_.push_back(norms_.back().gamma);
      params_.push_back(norms_.back().beta);
      std::size_t in_planes = 64;
      const std::size_t widths[4] = {64, 128, 256, 512};
      const std::size_t strides[4] = {1, 2, 2, 2};
      for (int stage = 0; stage < 4; ++stage) {
        for (int b = 0; b < 2; ++b) {
          const std::size_t stride = b == 0 ? strides[stage] : 1;
          const std::size_t planes = widths[stage];
          ResidualBlock blk{make_conv(in_planes, planes, 3, stride, 1, false), BatchNormState(planes),
                            Conv{}, BatchNormState(planes), std::nullopt, std::nullopt};
          params_.push_back(blk.bn1.gamma);
          params_.push_back(blk.bn1.beta);
          blk.conv2 = make_conv(planes, planes, 3, 1, 1, false);
          params_.push_back(blk.bn2.gamma);
          params_.push_back(blk.bn2.beta);
          if (stride != 1 || in_planes != planes) {
            blk.shortcut = make_conv(in_planes, planes, 1, stride, 0, false);
            blk.shortcut_bn.emplace(planes);
            params_.push_back(blk.shortcut_bn->gamma);
            params_.push_back(blk.shortcut_bn->beta);
          }
          blocks_.push_back(std::move(blk));
          in_planes = planes;
        }
      }
      embedding_dim_ = 512;
      break;
    }
    case Architecture::mlp: {
      std::size_t prev = in.size();
      for (std::size_t width : config_.widths) {
        Dense d{Tensor::zeros({width, prev}, true), Tensor::zeros({width}, true)};
        params_.push_back(d.weight);
        params_.push_back(d.bias);
        dense_.push_back(std::move(d));
        prev = width;
      }
      embedding_dim_ = prev;
      break;
    }
  }
  init_parameters(seed);
}

std::size_t Backbone::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.numel();
  return n;
}

std::size_t count_parameters(const Backbone& backbone) { return backbone.parameter_count(); }

void Backbone::init_parameters(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto init_weight = [&rng](Tensor& w) {
    // fan_in = product of all extents but the first
    const double fan_in = static_cast<double>(w.numel() / w.dim(0));
    const double bound = std::sqrt(2.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : w.mutable_data()) v = dist(rng);
  };
  const auto zero = [](Tensor& t) {
    if (t.defined()) std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
  };
  // Declaration order, so a seed maps to the same values for every layer.
  switch (config_.arch) {
    case Architecture::convnet4:
      for (std::size_t i = 0; i < convs_.size(); ++i) {
        init_weight(convs_[i].weight);
        zero(convs_[i].bias);
        norms_[i].reset();
      }
      break;
    case Architecture::resnet18:
      init_weight(convs_[0].weight);
      norms_[0].reset();
      for (auto& blk : blocks_) {
        init_weight(blk.conv1.weight);
        blk.bn1.reset();
        init_weight(blk.conv2.weight);
        blk.bn2.reset();
        if (blk.shortcut) {
          init_weight(blk.shortcut->weight);
          blk.shortcut_bn->reset();
        }
      }
      break;
    case Architecture::mlp:
      for (auto& d : dense_) {
        init_weight(d.weight);
        zero(d.bias);
      }
      break;
  }
}

void Backbone::for_each_norm(const std::function<void(BatchNormState&)>& fn) {
  for (auto& n : norms_) fn(n);
  for (auto& blk : blocks_) {
    fn(blk.bn1);
    fn(blk.bn2);
    if (blk.shortcut_bn) fn(*blk.shortcut_bn);
  }
}

void Backbone::for_each_norm(const std::function<void(const BatchNormState&)>& fn) const {
  for (const auto& n : norms_) fn(n);
  for (const auto& blk : blocks_) {
    fn(blk.bn1);
    fn(blk.bn2);
    if (blk.shortcut_bn) fn(*blk.shortcut_bn);
  }
}

void Backbone::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

Tensor Backbone::embed(const Tensor& images, bool training) {
  const ImageSpec& in = config_.input;
  if (images.rank() != 4 || images.dim(1) != in.channels || images.dim(2) != in.height ||
      images.dim(3) != in.width) {
    throw DimensionError("embed: images " + shape_string(images.shape()) + " do not match input [B," +
                         std::to_string(in.channels) + "," + std::to_string(in.height) + "," +
                         std::to_string(in.width) + "]");
  }
  switch (config_.arch) {
    case Architecture::convnet4:
      return embed_convnet(images, training);
    case Architecture::resnet18:
      return embed_resnet(images, training);
    case Architecture::mlp:
      return embed_mlp(images);
  }
  return {};
}

Tensor Backbone::embed_convnet(const Tensor& x, bool training) {
  Tensor h = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    h = conv2d(h, convs_[i].weight, convs_[i].bias, convs_[i].stride, convs_[i].padding);
    h = batchnorm2d(h, norms_[i], training);
    h = relu(h);
    h = maxpool2d(h, 2);
  }
  return reshape(h, {x.dim(0), embedding_dim_});
}

Tensor Backbone::embed_resnet(const Tensor& x, bool training) {
  Tensor h = x.dim(1) == 1 ? concat({x, x, x}, 1) : x;
  const Conv& stem = convs_[0];
  h = relu(batchnorm2d(conv2d(h, stem.weight, stem.bias, stem.stride, stem.padding), norms_[0],
                       training));
  for (auto& blk : blocks_) {
    Tensor out = conv2d(h, blk.conv1.weight, blk.conv1.bias, blk.conv1.stride, blk.conv1.padding);
    out = relu(batchnorm2d(out, blk.bn1, training));
    out = conv2d(out, blk.conv2.weight, blk.conv2.bias, blk.conv2.stride, blk.conv2.padding);
    out = batchnorm2d(out, blk.bn2, training);
    Tensor skip = h;
    if (blk.shortcut) {
      skip = conv2d(h, blk.shortcut->weight, blk.shortcut->bias, blk.shortcut->stride,
                    blk.shortcut->padding);
      skip = batchnorm2d(skip, *blk.shortcut_bn, training);
    }
    h = relu(add(out, skip));
  }
  return global_avgpool2d(h);
}

Tensor Backbone::embed_mlp(const Tensor& x) {
  Tensor h = reshape(x, {x.dim(0), config_.input.size()});
  for (std::size_t i = 0; i < dense_.size(); ++i) {
    h = linear(h, dense_[i].weight, dense_[i].bias);
    h = relu(h);
  }
  return h;
}

// ---- checkpoints ---------------------------------------------------------------

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void write_tensor(std::ostream& out, const Shape& shape, std::span<const double> values) {
  binary::write_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (auto e : shape) binary::write_u32(out, static_cast<std::uint32_t>(e));
  binary::write_f64s(out, values);
}

void read_tensor_into(binary::Reader& in, const Shape& expected, std::span<double> values) {
  const auto rank = in.u32();
  Shape shape(rank);
  for (auto& e : shape) e = in.u32();
  if (shape != expected) {
    throw FormatError(in.what() + ": tensor shape " + shape_string(shape) + ", expected " +
                      shape_string(expected));
  }
  in.f64s(values);
}

}  // namespace

void save_checkpoint(const Backbone& backbone, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  binary::write_magic(out, "PCKP");
  binary::write_u32(out, kCheckpointVersion);
  binary::write_string(out, backbone.config().descriptor());
  const ImageSpec& in = backbone.config().input;
  binary::write_u32(out, static_cast<std::uint32_t>(in.channels));
  binary::write_u32(out, static_cast<std::uint32_t>(in.height));
  binary::write_u32(out, static_cast<std::uint32_t>(in.width));
  binary::write_u32(out, static_cast<std::uint32_t>(backbone.parameters().size()));
  for (const auto& p : backbone.parameters()) write_tensor(out, p.shape(), p.data());
  std::vector<const BatchNormState*> norms;
  backbone.for_each_norm([&](const BatchNormState& n) { norms.push_back(&n); });
  binary::write_u32(out, static_cast<std::uint32_t>(2 * norms.size()));
  for (const auto* n : norms) {
    write_tensor(out, {n->channels()}, n->running_mean);
    write_tensor(out, {n->channels()}, n->running_var);
  }
  if (!out) throw FormatError("write failed for " + path.string());
}

Backbone load_checkpoint(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw FormatError("cannot open checkpoint " + path.string());
  binary::Reader in(file, "checkpoint " + path.string());
  in.expect_magic("PCKP");
  const auto version = in.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(in.what() + ": unsupported version " + std::to_string(version));
  }
  const std::string descriptor = in.string();
  ImageSpec spec;
  spec.channels = in.u32();
  spec.height = in.u32();
  spec.width = in.u32();
  BackboneConfig config;
  try {
    config = BackboneConfig::parse(descriptor, spec);
  } catch (const ContractError& e) {
    throw FormatError(in.what() + ": " + e.what());
  }
  Backbone backbone(config);
  const auto n_params = in.u32();
  if (n_params != backbone.parameters().size()) {
    throw FormatError(in.what() + ": " + std::to_string(n_params) + " parameters, architecture has " +
                      std::to_string(backbone.parameters().size()));
  }
  for (auto p : backbone.parameters()) read_tensor_into(in, p.shape(), p.mutable_data());
  std::vector<BatchNormState*> norms;
  backbone.for_each_norm([&](BatchNormState& n) { norms.push_back(&n); });
  if (in.u32() != 2 * norms.size()) throw FormatError(in.what() + ": batchnorm buffer count mismatch");
  for (auto* n : norms) {
    read_tensor_into(in, {n->channels()}, n->running_mean);
    read_tensor_into(in, {n->channels()}, n->running_var);
  }
  in.expect_end();
  return backbone;
}

}  // namespace protonc
