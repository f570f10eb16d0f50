#pragma once

#include <torch/torch.h>

#include <array>
#include <vector>

#include "tapnet/nn_common.hpp"
#include "tapnet/proposals.hpp"

namespace tapnet::pointhead {

struct HeadConfig {
  /// Patch size of the proposal grid; equals the stride of the level-4 features.
  int stride = 16;
  /// Reference points per patch; must be a perfect square.
  int K = 4;
  double gamma = 100.0;
  std::vector<int> hidden_dims{256, 512, 1024, 2048};
  int pe_bands = 8;
  /// Width of the implicit interpolator's per-corner network and its output.
  int ifi_hidden = 64;
  int ifi_dim = 64;
  /// Stride of the latent grid queried by the interpolator (level-3 features).
  int latent_stride = 8;
  bool use_ifi = true;

  void validate() const;
  int side() const;  // sqrt(K)
};

/// K points per stride×stride patch, patch-major then row-major within the
/// patch, at patch-relative offsets (i + 0.5)·s/√K.
std::vector<Point> make_reference_points(int height, int width, const HeadConfig& cfg);
torch::Tensor reference_tensor(int height, int width, const HeadConfig& cfg);  // [M, 2]

/// Sinusoidal encoding of offsets [..., 2] -> [..., 4L]: the 2L sine terms
/// sin(2^l·π·δ) for l = 0..L-1 and both coordinates, followed by the matching
/// cosines.
torch::Tensor positional_encoding(const torch::Tensor& delta, int bands);

/// Corner bookkeeping for one query inside a latent cell. Corners are ordered
/// (x0,y0), (x1,y0), (x0,y1), (x1,y1). areas[i] is the rectangle spanned by the
/// query and corner i; corner i is weighted by the area toward its diagonally
/// opposite corner, weights[i] = areas[3 - i] / S.
struct CornerWeights {
  std::array<int, 4> gx{};
  std::array<int, 4> gy{};
  std::array<double, 4> areas{};
  std::array<double, 4> weights{};
  std::array<std::array<double, 2>, 4> offsets{};  // query - corner, grid units
};

/// Query given in grid units of a grid_h×grid_w latent. Throws ShapeError when
/// the query lies outside [0, grid_w-1]×[0, grid_h-1].
CornerWeights corner_weights(double qx, double qy, int grid_h, int grid_w);

/// Pixel coordinate (pixel centres at integers) to grid units of a latent at `stride`.
inline double to_grid(double pixel, int stride) { return (pixel + 0.5) / stride - 0.5; }

/// Area-weighted sum over the four nearest latents of f(Z_i, δ_i, φ(δ_i)).
class ImplicitInterpolatorImpl : public torch::nn::Module {
 public:
  ImplicitInterpolatorImpl(int latent_dim, int hidden, int out_dim, int bands);

  /// latent [B, C, h, w]; queries [B, Q, 2] in pixels. Queries outside the
  /// grid are clamped to it. Returns [B, Q, out_dim].
  torch::Tensor forward(const torch::Tensor& latent, const torch::Tensor& queries, int stride);

  /// Strict single-query form on latent [C, h, w] with the query in grid
  /// units; out-of-extent queries throw. Returns [out_dim].
  torch::Tensor interpolate(const torch::Tensor& latent, double qx, double qy);

  int out_dim() const noexcept { return out_dim_; }

 private:
  torch::Tensor corner_feature(const torch::Tensor& z, const torch::Tensor& delta);

  int bands_, out_dim_;
  torch::nn::Sequential f_{nullptr};
};
TORCH_MODULE(ImplicitInterpolator);

/// Dilated 3x3 branches at rates 1, 2, 4 and a global-pool branch,
/// concatenated and projected back to `channels`.
class AsppImpl : public torch::nn::Module {
 public:
  AsppImpl(int channels, int branch_channels);
  torch::Tensor forward(const torch::Tensor& x);
  /// Global-pool branch broadcast to the input's spatial size.
  torch::Tensor pool_branch(const torch::Tensor& x);

 private:
  std::vector<torch::nn::Conv2d> dilated_;
  torch::nn::Conv2d pool_conv_{nullptr}, project_{nullptr};
};
TORCH_MODULE(Aspp);

struct HeadQuery {
  torch::Tensor delta;   // [B, Q, 2] raw regression outputs
  torch::Tensor logits;  // [B, Q]
};

struct HeadOutput {
  torch::Tensor reference;  // [M, 2]
  torch::Tensor coords;     // [B, M, 2] = reference + γ·Δ
  torch::Tensor delta;      // [B, M, 2]
  torch::Tensor logits;     // [B, M]
};

/// Shared prediction head over bilinearly sampled level-4 features and the
/// implicitly interpolated context of the ASPP-refined level-3 features.
class PointHeadImpl : public torch::nn::Module {
 public:
  PointHeadImpl(const HeadConfig& cfg, int c3, int c4);

  torch::Tensor latent(const torch::Tensor& f3);
  /// Regression offsets and confidence logits at arbitrary pixel positions.
  HeadQuery query(const torch::Tensor& f4, const torch::Tensor& latent, const torch::Tensor& points);
  HeadOutput forward(const torch::Tensor& f3, const torch::Tensor& f4, int height, int width);
  /// Proposals from level-4 features and a precomputed latent grid.
  HeadOutput propose(const torch::Tensor& f4, const torch::Tensor& latent, int height, int width);

  const HeadConfig& config() const noexcept { return cfg_; }

  Aspp aspp{nullptr};
  ImplicitInterpolator ifi{nullptr};
  torch::nn::Sequential trunk{nullptr};
  torch::nn::Linear reg{nullptr}, cls{nullptr};

 private:
  HeadConfig cfg_;
};
TORCH_MODULE(PointHead);

/// Bilinear samples of features [B, C, h, w] at pixel positions [B, Q, 2]
/// -> [B, Q, C], border values beyond the map.
torch::Tensor sample_features(const torch::Tensor& features, const torch::Tensor& points, int stride);

/// Proposal set of batch item `b` with sigmoid confidences, clamped strictly
/// inside (0, 1).
ProposalSet to_proposals(const HeadOutput& out, int b, const HeadConfig& cfg);

}  // namespace tapnet::pointhead
