#include "tapnet/dafp.hpp"

#include "tapnet/errors.hpp"

namespace tapnet::dafp {

namespace nn = torch::nn;

void DafpConfig::validate() const {
  if (reduction < 1) throw ConfigError("dafp reduction ratio must be >= 1");
  if (!std::isfinite(alpha_init) || !std::isfinite(beta_init)) {
    throw ConfigError("dafp alpha/beta must be finite");
  }
}

DualAttentionFusionImpl::DualAttentionFusionImpl(int channels, const DafpConfig& cfg)
    : channels_(channels) {
  cfg.validate();
  const int hidden = std::max(1, channels / cfg.reduction);
  conv_c1 = register_module("conv_c1", nn::Linear(4 * channels, channels));
  conv_c2 = register_module("conv_c2", nn::Linear(4 * channels, channels));
  mlp_in = register_module("mlp_in", nn::Linear(channels, hidden));
  mlp_out = register_module("mlp_out", nn::Linear(hidden, channels));
  conv_s1 = register_module("conv_s1", nn::Conv2d(nn::Conv2dOptions(4, 1, 1)));
  conv_s2 = register_module("conv_s2", nn::Conv2d(nn::Conv2dOptions(4, 1, 1)));
  alpha = register_parameter("alpha", torch::full({1}, cfg.alpha_init));
  beta = register_parameter("beta", torch::full({1}, cfg.beta_init));
}

torch::Tensor DualAttentionFusionImpl::shared_mlp(const torch::Tensor& x) {
  return mlp_out->forward(torch::relu(mlp_in->forward(x)));
}

std::pair<torch::Tensor, torch::Tensor> DualAttentionFusionImpl::channel_attention(
    const torch::Tensor& rgb, const torch::Tensor& tir, AttentionWeights* weights) {
  expect_rank(rgb, 4, "channel_attention");
  expect_same_shape(rgb, tir, "channel_attention");
  if (rgb.size(1) != channels_) throw ShapeError("channel_attention: unexpected channel count");
  const auto r_avg = rgb.mean({2, 3});
  const auto r_max = rgb.amax({2, 3});
  const auto t_avg = tir.mean({2, 3});
  const auto t_max = tir.amax({2, 3});
  const auto cat = torch::cat({r_avg, r_max, t_avg, t_max}, 1);
  const auto w_rgb = torch::sigmoid(shared_mlp(conv_c1->forward(cat)));
  const auto w_tir = torch::sigmoid(shared_mlp(conv_c2->forward(cat)));
  if (weights != nullptr) {
    weights->channel_rgb = w_rgb;
    weights->channel_tir = w_tir;
  }
  return {rgb * w_rgb.unsqueeze(-1).unsqueeze(-1), tir * w_tir.unsqueeze(-1).unsqueeze(-1)};
}

torch::Tensor DualAttentionFusionImpl::spatial_attention(const torch::Tensor& rgb,
                                                         const torch::Tensor& tir,
                                                         AttentionWeights* weights) {
  expect_rank(rgb, 4, "spatial_attention");
  expect_same_shape(rgb, tir, "spatial_attention");
  const auto cat = torch::cat({rgb.mean(1, true), rgb.amax(1, true), tir.mean(1, true),
                               tir.amax(1, true)},
                              1);
  const auto w_rgb = torch::sigmoid(conv_s1->forward(cat));
  const auto w_tir = torch::sigmoid(conv_s2->forward(cat));
  if (weights != nullptr) {
    weights->spatial_rgb = w_rgb;
    weights->spatial_tir = w_tir;
  }
  return alpha * (w_rgb * rgb) + beta * (w_tir * tir);
}

torch::Tensor DualAttentionFusionImpl::forward(const torch::Tensor& rgb, const torch::Tensor& tir,
                                               AttentionWeights* weights) {
  auto [r, t] = channel_attention(rgb, tir, weights);
  return spatial_attention(r, t, weights);
}

DafpImpl::DafpImpl(const backbone::BackboneConfig& backbone, const DafpConfig& cfg) {
  level3 = register_module("level3", DualAttentionFusion(backbone.channels[2], cfg));
  level4 = register_module("level4", DualAttentionFusion(backbone.channels[3], cfg));
}

FusedLevels DafpImpl::forward(const backbone::FeaturePyramid& rgb,
                              const backbone::FeaturePyramid& tir) {
  return {level3->forward(rgb.f3, tir.f3), level4->forward(rgb.f4, tir.f4)};
}

}  // namespace tapnet::dafp
