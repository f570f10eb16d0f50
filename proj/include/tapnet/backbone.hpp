#pragma once

#include <torch/torch.h>

#include <array>

#include "tapnet/nn_common.hpp"

namespace tapnet::backbone {

enum class Variant { toy, resnet50_like };

struct BackboneConfig {
  std::array<int, 4> channels{16, 32, 64, 128};
  /// Fixed at (4, 8, 8, 16); level 4 feeds the point head.
  std::array<int, 4> strides{4, 8, 8, 16};
  /// One trunk for both modalities instead of two.
  bool weight_sharing = false;
  Variant variant = Variant::toy;
  /// Convolution biases and normalisation affine terms.
  bool bias = true;
  /// Extra stride-1 conv blocks per toy stage.
  int extra_convs = 0;
  Activation activation = Activation::relu;

  void validate() const;
};

/// Four feature levels, each [B, C_l, H/stride_l, W/stride_l].
struct FeaturePyramid {
  torch::Tensor f1, f2, f3, f4;
};

class ConvNormActImpl : public torch::nn::Module {
 public:
  ConvNormActImpl(int in, int out, int stride, bool bias, Activation act, int kernel = 3);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv_{nullptr};
  torch::nn::GroupNorm norm_{nullptr};
  Activation act_;
};
TORCH_MODULE(ConvNormAct);

class BottleneckImpl : public torch::nn::Module {
 public:
  BottleneckImpl(int in, int out, int stride, bool bias);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential body_{nullptr};
  torch::nn::Sequential shortcut_{nullptr};
};
TORCH_MODULE(Bottleneck);

class BackboneImpl : public torch::nn::Module {
 public:
  explicit BackboneImpl(const BackboneConfig& cfg);

  /// image: [B, 3, H, W] or [3, H, W], with H and W multiples of 16.
  FeaturePyramid forward(const torch::Tensor& image);

  const BackboneConfig& config() const noexcept { return cfg_; }

 private:
  BackboneConfig cfg_;
  torch::nn::Sequential stem_{nullptr};
  std::array<torch::nn::Sequential, 4> stages_;
};
TORCH_MODULE(Backbone);

}  // namespace tapnet::backbone
