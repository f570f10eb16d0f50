#pragma once

#include <torch/torch.h>

#include <utility>

#include "tapnet/backbone.hpp"

namespace tapnet::dafp {

struct DafpConfig {
  /// Reduction ratio of the shared channel perceptron.
  int reduction = 4;
  double alpha_init = 0.5;
  double beta_init = 0.5;

  void validate() const;
};

/// Intermediate attention weights, exposed for inspection and tests.
struct AttentionWeights {
  torch::Tensor channel_rgb;   // w_c1 [B, C]
  torch::Tensor channel_tir;   // w_c2 [B, C]
  torch::Tensor spatial_rgb;   // w'_c1 [B, 1, H, W]
  torch::Tensor spatial_tir;   // w'_c2 [B, 1, H, W]
};

/// Channel-then-spatial attention fusion of one pyramid level.
///
/// Channel stage: per-channel average and max pools of both modalities are
/// concatenated as [R_avg, R_max, T_avg, T_max] (4C), projected to C by two
/// separate 1x1 projections, passed through one shared two-layer perceptron
/// and squashed by a sigmoid into per-modality channel weights.
///
/// Spatial stage: per-pixel channel mean and max maps of the reweighted
/// features are concatenated into 4 maps; two separate 1x1 convolutions and a
/// sigmoid yield one spatial weight map per modality. The fused output is
/// alpha·w'_rgb⊙F_R' + beta·w'_tir⊙F_T'.
class DualAttentionFusionImpl : public torch::nn::Module {
 public:
  DualAttentionFusionImpl(int channels, const DafpConfig& cfg);

  std::pair<torch::Tensor, torch::Tensor> channel_attention(const torch::Tensor& rgb,
                                                            const torch::Tensor& tir,
                                                            AttentionWeights* weights = nullptr);

  torch::Tensor spatial_attention(const torch::Tensor& rgb, const torch::Tensor& tir,
                                  AttentionWeights* weights = nullptr);

  torch::Tensor forward(const torch::Tensor& rgb, const torch::Tensor& tir,
                        AttentionWeights* weights = nullptr);

  torch::nn::Linear conv_c1{nullptr}, conv_c2{nullptr};
  torch::nn::Linear mlp_in{nullptr}, mlp_out{nullptr};
  torch::nn::Conv2d conv_s1{nullptr}, conv_s2{nullptr};
  torch::Tensor alpha, beta;

 private:
  torch::Tensor shared_mlp(const torch::Tensor& x);

  int channels_;
};
TORCH_MODULE(DualAttentionFusion);

struct FusedLevels {
  torch::Tensor f3;
  torch::Tensor f4;
};

/// Independent fusion blocks for pyramid levels 3 and 4.
class DafpImpl : public torch::nn::Module {
 public:
  DafpImpl(const backbone::BackboneConfig& backbone, const DafpConfig& cfg);

  FusedLevels forward(const backbone::FeaturePyramid& rgb, const backbone::FeaturePyramid& tir);

  DualAttentionFusion level3{nullptr}, level4{nullptr};
};
TORCH_MODULE(Dafp);

}  // namespace tapnet::dafp
