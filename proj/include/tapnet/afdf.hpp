#pragma once

#include <torch/torch.h>

#include <utility>

#include "tapnet/kernels.hpp"
#include "tapnet/nn_common.hpp"

namespace tapnet::afdf {

using kernels::KernelSpec;

struct AfdfConfig {
  /// Token channels of every branch.
  int dim = 8;
  int heads = 1;
  int shared_blocks = 2;
  int branch_blocks = 2;
  double tau_attn = 1.0;
  double ffn_expansion = 2.0;
  /// Full-resolution operation; larger inputs must be tiled by the caller.
  int max_side = 128;
  bool bias = false;

  void validate() const;
};

/// LayerNorm over the channel axis of [B, C, H, W].
class ChannelLayerNormImpl : public torch::nn::Module {
 public:
  ChannelLayerNormImpl(int dim, bool bias);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::Tensor weight_, bias_;
};
TORCH_MODULE(ChannelLayerNorm);

/// softmax(q kᵀ / tau) along the last axis.
torch::Tensor attention_probs(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& tau);

/// Transposed (channel-wise) self-attention with convolutional q/k/v
/// projections: 1x1 conv followed by a 3x3 depthwise conv.
class ConvAttentionImpl : public torch::nn::Module {
 public:
  ConvAttentionImpl(int dim, int heads, double tau, bool bias);

  torch::Tensor forward(const torch::Tensor& x);
  /// Attention matrix [B, heads, C/heads, C/heads] for input x.
  torch::Tensor attention(const torch::Tensor& x);
  torch::Tensor tau() const { return log_tau_.exp(); }
  void set_tau(double tau);

 private:
  std::tuple<torch::Tensor, torch::Tensor, torch::Tensor> qkv(const torch::Tensor& x);

  int dim_, heads_;
  torch::nn::Conv2d to_qkv_{nullptr}, dw_qkv_{nullptr}, proj_{nullptr};
  torch::Tensor log_tau_;
};
TORCH_MODULE(ConvAttention);

/// Gated depthwise feed-forward network.
class GatedFeedForwardImpl : public torch::nn::Module {
 public:
  GatedFeedForwardImpl(int dim, double expansion, bool bias);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d project_in_{nullptr}, dw_{nullptr}, project_out_{nullptr};
};
TORCH_MODULE(GatedFeedForward);

class TransformerBlockImpl : public torch::nn::Module {
 public:
  TransformerBlockImpl(int dim, int heads, double tau, double expansion, bool bias);
  torch::Tensor forward(const torch::Tensor& x);

  ChannelLayerNorm norm1{nullptr}, norm2{nullptr};
  ConvAttention attn{nullptr};
  GatedFeedForward ffn{nullptr};
};
TORCH_MODULE(TransformerBlock);

/// Affine coupling on a channel split [z1, z2]:
///   z2 += phi(z1);  z1 = z1·exp(rho(z2)) + eta(z2).
class InvertibleCouplingImpl : public torch::nn::Module {
 public:
  InvertibleCouplingImpl(int dim, bool bias);
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor inverse(const torch::Tensor& y);

 private:
  torch::nn::Sequential phi_{nullptr}, rho_{nullptr}, eta_{nullptr};
};
TORCH_MODULE(InvertibleCoupling);

/// Stack of couplings with a half swap after each layer.
class DetailEncoderImpl : public torch::nn::Module {
 public:
  DetailEncoderImpl(int dim, int layers, bool bias);
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor inverse(const torch::Tensor& y);

 private:
  std::vector<InvertibleCoupling> layers_;
};
TORCH_MODULE(DetailEncoder);

struct AfdfOutput {
  torch::Tensor fused;  // F_A [B, 3, H, W] in [0, 1]
  torch::Tensor shared_i, shared_v;
  torch::Tensor base_i, base_v;
  torch::Tensor detail_i, detail_v;
  torch::Tensor base_fused, detail_fused;
  torch::Tensor mmd;  // scalar, between pooled base features
  KernelSpec kernel;  // kernel actually used for `mmd`
};

/// Early fusion of a thermal image I and a visible image V into one visible
/// image, with a hybrid-kernel MMD between the two base-branch encodings.
class AfdfImpl : public torch::nn::Module {
 public:
  explicit AfdfImpl(const AfdfConfig& cfg);

  std::pair<torch::Tensor, torch::Tensor> shared_encode(const torch::Tensor& tir,
                                                        const torch::Tensor& rgb);
  /// (base, detail), both [B, dim, H, W].
  std::pair<torch::Tensor, torch::Tensor> branch_encode(const torch::Tensor& shared);
  std::pair<torch::Tensor, torch::Tensor> cross_fuse(const torch::Tensor& base_i,
                                                     const torch::Tensor& base_v,
                                                     const torch::Tensor& detail_i,
                                                     const torch::Tensor& detail_v);
  torch::Tensor decode(const torch::Tensor& rgb, const torch::Tensor& base,
                       const torch::Tensor& detail);

  AfdfOutput forward(const torch::Tensor& tir, const torch::Tensor& rgb, const KernelSpec& kernel);

  const AfdfConfig& config() const noexcept { return cfg_; }

  torch::nn::Conv2d embed{nullptr};
  torch::nn::Sequential shared{nullptr}, base_encoder{nullptr}, base_fusion{nullptr};
  DetailEncoder detail_encoder{nullptr}, detail_fusion{nullptr};
  torch::nn::Conv2d reduce{nullptr};
  torch::nn::Sequential decoder_body{nullptr};
  torch::nn::Conv2d output{nullptr};

 private:
  void check_input(const torch::Tensor& tir, const torch::Tensor& rgb) const;

  AfdfConfig cfg_;
};
TORCH_MODULE(Afdf);

/// Hybrid-kernel Gram matrix between rows of a [n, d] and b [m, d].
torch::Tensor hybrid_kernel_matrix(const torch::Tensor& a, const torch::Tensor& b,
                                   const KernelSpec& k);

/// Biased squared MMD between row samples (differentiable).
torch::Tensor mkmmd(const torch::Tensor& source, const torch::Tensor& target, const KernelSpec& k);

/// With k.median_heuristic, a ladder of the same size centred on the median
/// pairwise distance of the pooled batch; otherwise `k` unchanged.
KernelSpec adapt_kernel(const torch::Tensor& source, const torch::Tensor& target,
                        const KernelSpec& k);

/// Spatially pooled features, one row per image: [B, C, H, W] -> [B, C].
inline torch::Tensor pool_tokens(const torch::Tensor& features) { return features.mean({2, 3}); }

kernels::Batch to_batch(const torch::Tensor& rows);

}  // namespace tapnet::afdf
