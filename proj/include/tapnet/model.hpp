#pragma once

#include <torch/torch.h>

#include <optional>
#include <string>
#include <vector>

#include "tapnet/afdf.hpp"
#include "tapnet/backbone.hpp"
#include "tapnet/dafp.hpp"
#include "tapnet/pointhead.hpp"

namespace tapnet {

/// none: per-level concatenation and 1x1 projection; rgb / tir: one modality only.
enum class FusionMode { none, dafp, afdf, rgb, tir };

std::string to_string(FusionMode mode);
FusionMode fusion_mode_from_string(const std::string& name);

struct ModelConfig {
  FusionMode fusion = FusionMode::dafp;
  backbone::BackboneConfig backbone;
  dafp::DafpConfig dafp;
  afdf::AfdfConfig afdf;
  pointhead::HeadConfig head;

  void validate() const;
};

struct ModelOutput {
  pointhead::HeadOutput head;
  torch::Tensor f3, f4, latent;
  std::optional<afdf::AfdfOutput> afdf;
};

class TapNetImpl : public torch::nn::Module {
 public:
  explicit TapNetImpl(const ModelConfig& cfg);

  /// rgb, tir: [B, 3, H, W] in [0, 1].
  ModelOutput forward(const torch::Tensor& rgb, const torch::Tensor& tir,
                      const afdf::KernelSpec& kernel = {});

  /// Backbone trunks, trained at the backbone learning rate.
  std::vector<torch::Tensor> backbone_parameters();
  std::vector<torch::Tensor> head_parameters();

  const ModelConfig& config() const noexcept { return cfg_; }

  backbone::Backbone rgb_backbone{nullptr}, tir_backbone{nullptr};
  dafp::Dafp dafp{nullptr};
  afdf::Afdf afdf{nullptr};
  torch::nn::Conv2d concat3{nullptr}, concat4{nullptr};
  pointhead::PointHead head{nullptr};

 private:
  ModelConfig cfg_;
};
TORCH_MODULE(TapNet);

}  // namespace tapnet
