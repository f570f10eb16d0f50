#include "tapnet/model.hpp"

#include <set>

#include "tapnet/errors.hpp"

namespace tapnet {

namespace nn = torch::nn;

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::none: return "none";
    case FusionMode::dafp: return "dafp";
    case FusionMode::afdf: return "afdf";
    case FusionMode::rgb: return "rgb";
    case FusionMode::tir: return "tir";
  }
  return "?";
}

FusionMode fusion_mode_from_string(const std::string& name) {
  for (auto m : {FusionMode::none, FusionMode::dafp, FusionMode::afdf, FusionMode::rgb, FusionMode::tir}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown fusion_mode '" + name + "' (expected none, dafp, afdf, rgb or tir)");
}

void ModelConfig::validate() const {
  backbone.validate();
  dafp.validate();
  afdf.validate();
  head.validate();
  if (head.stride != backbone.strides[3]) {
    throw ConfigError("head stride must equal the level-4 backbone stride (" +
                      std::to_string(backbone.strides[3]) + ")");
  }
  if (head.latent_stride != backbone.strides[2]) {
    throw ConfigError("head latent_stride must equal the level-3 backbone stride (" +
                      std::to_string(backbone.strides[2]) + ")");
  }
}

TapNetImpl::TapNetImpl(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto& c = cfg_.backbone.channels;
  rgb_backbone = register_module("rgb_backbone", backbone::Backbone(cfg_.backbone));
  const bool dual_trunk = cfg_.fusion == FusionMode::none || cfg_.fusion == FusionMode::dafp;
  if (dual_trunk && !cfg_.backbone.weight_sharing) {
    tir_backbone = register_module("tir_backbone", backbone::Backbone(cfg_.backbone));
  }
  if (cfg_.fusion == FusionMode::dafp) dafp = register_module("dafp", dafp::Dafp(cfg_.backbone, cfg_.dafp));
  if (cfg_.fusion == FusionMode::afdf) afdf = register_module("afdf", afdf::Afdf(cfg_.afdf));
  if (cfg_.fusion == FusionMode::none) {
    concat3 = register_module("concat3", nn::Conv2d(nn::Conv2dOptions(2 * c[2], c[2], 1)));
    concat4 = register_module("concat4", nn::Conv2d(nn::Conv2dOptions(2 * c[3], c[3], 1)));
  }
  head = register_module("head", pointhead::PointHead(cfg_.head, c[2], c[3]));
}

ModelOutput TapNetImpl::forward(const torch::Tensor& rgb, const torch::Tensor& tir,
                                const afdf::KernelSpec& kernel) {
  expect_rank(rgb, 4, "model input");
  expect_same_shape(rgb, tir, "model input");
  ModelOutput out;
  auto trunk = [&](const torch::Tensor& x, bool thermal) {
    return (thermal && tir_backbone ? tir_backbone : rgb_backbone)->forward(x);
  };
  switch (cfg_.fusion) {
    case FusionMode::rgb:
    case FusionMode::tir: {
      const auto p = rgb_backbone->forward(cfg_.fusion == FusionMode::rgb ? rgb : tir);
      out.f3 = p.f3;
      out.f4 = p.f4;
      break;
    }
    case FusionMode::afdf: {
      out.afdf = afdf->forward(tir, rgb, kernel);
      const auto p = rgb_backbone->forward(out.afdf->fused);
      out.f3 = p.f3;
      out.f4 = p.f4;
      break;
    }
    case FusionMode::dafp: {
      const auto fused = dafp->forward(trunk(rgb, false), trunk(tir, true));
      out.f3 = fused.f3;
      out.f4 = fused.f4;
      break;
    }
    case FusionMode::none: {
      const auto r = trunk(rgb, false);
      const auto t = trunk(tir, true);
      out.f3 = concat3->forward(torch::cat({r.f3, t.f3}, 1));
      out.f4 = concat4->forward(torch::cat({r.f4, t.f4}, 1));
      break;
    }
  }
  out.latent = head->latent(out.f3);
  out.head = head->propose(out.f4, out.latent, static_cast<int>(rgb.size(2)), static_cast<int>(rgb.size(3)));
  return out;
}

std::vector<torch::Tensor> TapNetImpl::backbone_parameters() {
  auto params = rgb_backbone->parameters();
  if (tir_backbone) {
    auto t = tir_backbone->parameters();
    params.insert(params.end(), t.begin(), t.end());
  }
  return params;
}

std::vector<torch::Tensor> TapNetImpl::head_parameters() {
  std::set<const void*> trunk;
  for (const auto& p : backbone_parameters()) trunk.insert(p.unsafeGetTensorImpl());
  std::vector<torch::Tensor> rest;
  for (const auto& p : parameters()) {
    if (!trunk.count(p.unsafeGetTensorImpl())) rest.push_back(p);
  }
  return rest;
}

}  // namespace tapnet
