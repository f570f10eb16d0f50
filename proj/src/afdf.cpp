#include "tapnet/afdf.hpp"

#include <cmath>

#include "tapnet/errors.hpp"

namespace tapnet::afdf {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

void AfdfConfig::validate() const {
  if (dim < 2 || dim % 2 != 0) throw ConfigError("afdf dim must be even and >= 2");
  if (heads < 1 || dim % heads != 0) throw ConfigError("afdf heads must divide dim");
  if (shared_blocks < 1 || branch_blocks < 1) throw ConfigError("afdf block counts must be >= 1");
  if (!(tau_attn > 0.0)) throw ConfigError("afdf attention temperature must be > 0");
  if (!(ffn_expansion > 0.0)) throw ConfigError("afdf ffn_expansion must be > 0");
  if (max_side < 16) throw ConfigError("afdf max_side must be >= 16");
}

ChannelLayerNormImpl::ChannelLayerNormImpl(int dim, bool bias) {
  weight_ = register_parameter("weight", torch::ones({1, dim, 1, 1}));
  if (bias) bias_ = register_parameter("bias", torch::zeros({1, dim, 1, 1}));
}

torch::Tensor ChannelLayerNormImpl::forward(const torch::Tensor& x) {
  const auto mu = x.mean(1, true);
  const auto var = (x - mu).pow(2).mean(1, true);
  auto y = (x - mu) / torch::sqrt(var + 1e-5) * weight_;
  return bias_.defined() ? y + bias_ : y;
}

torch::Tensor attention_probs(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& tau) {
  return torch::softmax(torch::matmul(q, k.transpose(-2, -1)) / tau, -1);
}

ConvAttentionImpl::ConvAttentionImpl(int dim, int heads, double tau, bool bias)
    : dim_(dim), heads_(heads) {
  to_qkv_ = register_module("to_qkv", nn::Conv2d(nn::Conv2dOptions(dim, 3 * dim, 1).bias(bias)));
  dw_qkv_ = register_module(
      "dw_qkv", nn::Conv2d(nn::Conv2dOptions(3 * dim, 3 * dim, 3).padding(1).groups(3 * dim).bias(bias)));
  proj_ = register_module("proj", nn::Conv2d(nn::Conv2dOptions(dim, dim, 1).bias(bias)));
  log_tau_ = register_parameter("log_tau", torch::full({1}, std::log(tau)));
}

void ConvAttentionImpl::set_tau(double tau) {
  torch::NoGradGuard guard;
  log_tau_.fill_(std::log(tau));
}

std::tuple<torch::Tensor, torch::Tensor, torch::Tensor> ConvAttentionImpl::qkv(const torch::Tensor& x) {
  const auto b = x.size(0);
  const auto hw = x.size(2) * x.size(3);
  auto parts = dw_qkv_->forward(to_qkv_->forward(x)).chunk(3, 1);
  auto shape = [&](const torch::Tensor& t) { return t.reshape({b, heads_, dim_ / heads_, hw}); };
  auto q = F::normalize(shape(parts[0]), F::NormalizeFuncOptions().dim(-1));
  auto k = F::normalize(shape(parts[1]), F::NormalizeFuncOptions().dim(-1));
  return {q, k, shape(parts[2])};
}

torch::Tensor ConvAttentionImpl::attention(const torch::Tensor& x) {
  auto [q, k, v] = qkv(x);
  return attention_probs(q, k, tau());
}

torch::Tensor ConvAttentionImpl::forward(const torch::Tensor& x) {
  auto [q, k, v] = qkv(x);
  const auto out = torch::matmul(attention_probs(q, k, tau()), v);
  return proj_->forward(out.reshape(x.sizes()));
}

GatedFeedForwardImpl::GatedFeedForwardImpl(int dim, double expansion, bool bias) {
  const int hidden = std::max(1, static_cast<int>(std::lround(dim * expansion)));
  project_in_ = register_module("project_in", nn::Conv2d(nn::Conv2dOptions(dim, 2 * hidden, 1).bias(bias)));
  dw_ = register_module(
      "dw", nn::Conv2d(nn::Conv2dOptions(2 * hidden, 2 * hidden, 3).padding(1).groups(2 * hidden).bias(bias)));
  project_out_ = register_module("project_out", nn::Conv2d(nn::Conv2dOptions(hidden, dim, 1).bias(bias)));
}

torch::Tensor GatedFeedForwardImpl::forward(const torch::Tensor& x) {
  auto parts = dw_->forward(project_in_->forward(x)).chunk(2, 1);
  return project_out_->forward(torch::gelu(parts[0]) * parts[1]);
}

TransformerBlockImpl::TransformerBlockImpl(int dim, int heads, double tau, double expansion, bool bias) {
  norm1 = register_module("norm1", ChannelLayerNorm(dim, bias));
  attn = register_module("attn", ConvAttention(dim, heads, tau, bias));
  norm2 = register_module("norm2", ChannelLayerNorm(dim, bias));
  ffn = register_module("ffn", GatedFeedForward(dim, expansion, bias));
}

torch::Tensor TransformerBlockImpl::forward(const torch::Tensor& x) {
  auto y = x + attn->forward(norm1->forward(x));
  return y + ffn->forward(norm2->forward(y));
}

namespace {

nn::Sequential bottleneck(int channels, bool bias, bool zero_last) {
  const int hidden = 2 * channels;
  nn::Conv2d last(nn::Conv2dOptions(hidden, channels, 1).bias(bias));
  if (zero_last) {
    torch::NoGradGuard guard;
    last->weight.zero_();
    if (bias) last->bias.zero_();
  }
  return nn::Sequential(nn::Conv2d(nn::Conv2dOptions(channels, hidden, 1).bias(bias)), nn::ReLU6(),
                        nn::Conv2d(nn::Conv2dOptions(hidden, hidden, 3).padding(1).groups(hidden).bias(bias)),
                        nn::ReLU6(), last);
}

torch::Tensor swap_halves(const torch::Tensor& x) {
  auto parts = x.chunk(2, 1);
  return torch::cat({parts[1], parts[0]}, 1);
}

}  // namespace

InvertibleCouplingImpl::InvertibleCouplingImpl(int dim, bool bias) {
  const int half = dim / 2;
  phi_ = register_module("phi", bottleneck(half, bias, false));
  rho_ = register_module("rho", bottleneck(half, bias, true));
  eta_ = register_module("eta", bottleneck(half, bias, false));
}

torch::Tensor InvertibleCouplingImpl::forward(const torch::Tensor& x) {
  auto parts = x.chunk(2, 1);
  auto z2 = parts[1] + phi_->forward(parts[0]);
  auto z1 = parts[0] * torch::exp(rho_->forward(z2)) + eta_->forward(z2);
  return torch::cat({z1, z2}, 1);
}

torch::Tensor InvertibleCouplingImpl::inverse(const torch::Tensor& y) {
  auto parts = y.chunk(2, 1);
  const auto& z2 = parts[1];
  auto z1 = (parts[0] - eta_->forward(z2)) * torch::exp(-rho_->forward(z2));
  return torch::cat({z1, z2 - phi_->forward(z1)}, 1);
}

DetailEncoderImpl::DetailEncoderImpl(int dim, int layers, bool bias) {
  for (int i = 0; i < layers; ++i) {
    layers_.push_back(register_module("coupling" + std::to_string(i), InvertibleCoupling(dim, bias)));
  }
}

torch::Tensor DetailEncoderImpl::forward(const torch::Tensor& x) {
  auto y = x;
  for (auto& layer : layers_) y = swap_halves(layer->forward(y));
  return y;
}

torch::Tensor DetailEncoderImpl::inverse(const torch::Tensor& y) {
  auto x = y;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) x = (*it)->inverse(swap_halves(x));
  return x;
}

AfdfImpl::AfdfImpl(const AfdfConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg_.dim;
  const bool b = cfg_.bias;
  auto blocks = [&](int n) {
    nn::Sequential s;
    for (int i = 0; i < n; ++i) {
      s->push_back(TransformerBlock(d, cfg_.heads, cfg_.tau_attn, cfg_.ffn_expansion, b));
    }
    return s;
  };
  embed = register_module("embed", nn::Conv2d(nn::Conv2dOptions(3, d, 3).padding(1).bias(b)));
  shared = register_module("shared", blocks(cfg_.shared_blocks));
  base_encoder = register_module("base_encoder", blocks(cfg_.branch_blocks));
  detail_encoder = register_module("detail_encoder", DetailEncoder(d, cfg_.branch_blocks, b));
  base_fusion = register_module("base_fusion", blocks(1));
  detail_fusion = register_module("detail_fusion", DetailEncoder(d, 1, b));
  reduce = register_module("reduce", nn::Conv2d(nn::Conv2dOptions(2 * d, d, 1).bias(b)));
  decoder_body = register_module("decoder_body", blocks(1));
  output = register_module("output", nn::Conv2d(nn::Conv2dOptions(d, 3, 3).padding(1).bias(b)));
  // Zero residual at initialisation: the fused image starts as V.
  torch::NoGradGuard guard;
  output->weight.zero_();
  if (b) output->bias.zero_();
}

void AfdfImpl::check_input(const torch::Tensor& tir, const torch::Tensor& rgb) const {
  expect_rank(rgb, 4, "afdf input");
  expect_same_shape(tir, rgb, "afdf input");
  if (rgb.size(1) != 3) throw ShapeError("afdf inputs must have 3 channels");
  if (rgb.size(2) > cfg_.max_side || rgb.size(3) > cfg_.max_side) {
    throw ShapeError("afdf runs at full resolution and accepts at most " +
                     std::to_string(cfg_.max_side) + " px per side, got " + shape_string(rgb));
  }
}

std::pair<torch::Tensor, torch::Tensor> AfdfImpl::shared_encode(const torch::Tensor& tir,
                                                                const torch::Tensor& rgb) {
  check_input(tir, rgb);
  return {shared->forward(embed->forward(tir)), shared->forward(embed->forward(rgb))};
}

std::pair<torch::Tensor, torch::Tensor> AfdfImpl::branch_encode(const torch::Tensor& y) {
  return {base_encoder->forward(y), detail_encoder->forward(y)};
}

std::pair<torch::Tensor, torch::Tensor> AfdfImpl::cross_fuse(const torch::Tensor& base_i,
                                                             const torch::Tensor& base_v,
                                                             const torch::Tensor& detail_i,
                                                             const torch::Tensor& detail_v) {
  expect_same_shape(base_i, base_v, "cross_fuse base");
  expect_same_shape(detail_i, detail_v, "cross_fuse detail");
  return {base_fusion->forward(base_i + base_v), detail_fusion->forward(detail_i + detail_v)};
}

torch::Tensor AfdfImpl::decode(const torch::Tensor& rgb, const torch::Tensor& base,
                               const torch::Tensor& detail) {
  expect_same_shape(base, detail, "decode features");
  if (base.size(0) != rgb.size(0) || base.size(2) != rgb.size(2) || base.size(3) != rgb.size(3)) {
    throw ShapeError("decode: branch features " + shape_string(base) +
                     " are not aligned with the visible image " + shape_string(rgb));
  }
  const auto x = decoder_body->forward(reduce->forward(torch::cat({base, detail}, 1)));
  return torch::clamp(rgb + output->forward(x), 0.0, 1.0);
}

AfdfOutput AfdfImpl::forward(const torch::Tensor& tir, const torch::Tensor& rgb,
                             const KernelSpec& kernel) {
  AfdfOutput out;
  std::tie(out.shared_i, out.shared_v) = shared_encode(tir, rgb);
  std::tie(out.base_i, out.detail_i) = branch_encode(out.shared_i);
  std::tie(out.base_v, out.detail_v) = branch_encode(out.shared_v);
  std::tie(out.base_fused, out.detail_fused) =
      cross_fuse(out.base_i, out.base_v, out.detail_i, out.detail_v);
  out.fused = decode(rgb, out.base_fused, out.detail_fused);
  const auto xi = pool_tokens(out.base_i);
  const auto xv = pool_tokens(out.base_v);
  out.kernel = adapt_kernel(xi, xv, kernel);
  out.mmd = mkmmd(xi, xv, out.kernel);
  return out;
}

torch::Tensor hybrid_kernel_matrix(const torch::Tensor& a, const torch::Tensor& b,
                                   const KernelSpec& k) {
  expect_rank(a, 2, "hybrid_kernel_matrix");
  expect_rank(b, 2, "hybrid_kernel_matrix");
  if (a.size(1) != b.size(1)) throw ShapeError("hybrid_kernel_matrix: feature lengths differ");
  const auto d2 = (a.unsqueeze(1) - b.unsqueeze(0)).pow(2).sum(-1);
  // sqrt has an infinite slope at 0; coincident pairs get distance exactly 0.
  const auto tiny = 1e-30;
  const auto positive = d2 > tiny;
  const auto d = torch::where(positive, torch::sqrt(torch::clamp_min(d2, tiny)), torch::zeros_like(d2));
  auto gauss = torch::zeros_like(d2);
  for (std::size_t j = 0; j < k.gaussian_bandwidths.size(); ++j) {
    const double t = k.gaussian_bandwidths[j];
    gauss = gauss + k.gaussian_weights[j] * torch::exp(-d2 / (2.0 * t * t));
  }
  auto lap = torch::zeros_like(d2);
  for (std::size_t j = 0; j < k.laplacian_bandwidths.size(); ++j) {
    lap = lap + k.laplacian_weights[j] * torch::exp(-d / k.laplacian_bandwidths[j]);
  }
  return k.c1 * gauss + k.c2 * lap;
}

torch::Tensor mkmmd(const torch::Tensor& source, const torch::Tensor& target, const KernelSpec& k) {
  if (!source.defined() || !target.defined() || source.size(0) == 0 || target.size(0) == 0) {
    throw ShapeError("mkmmd: empty batch");
  }
  const auto kss = hybrid_kernel_matrix(source, source, k).mean();
  const auto ktt = hybrid_kernel_matrix(target, target, k).mean();
  const auto kst = 0.5 * (hybrid_kernel_matrix(source, target, k).mean() +
                          hybrid_kernel_matrix(target, source, k).mean());
  return kss + ktt - 2.0 * kst;
}

kernels::Batch to_batch(const torch::Tensor& rows) {
  const auto r = rows.detach().to(torch::kCPU, torch::kDouble).contiguous();
  kernels::Batch out(static_cast<std::size_t>(r.size(0)));
  const double* p = r.data_ptr<double>();
  for (int64_t i = 0; i < r.size(0); ++i) out[i].assign(p + i * r.size(1), p + (i + 1) * r.size(1));
  return out;
}

KernelSpec adapt_kernel(const torch::Tensor& source, const torch::Tensor& target,
                        const KernelSpec& k) {
  if (!k.median_heuristic) return k;
  const double median = kernels::median_pairwise_distance(to_batch(source), to_batch(target));
  auto adapted = kernels::ladder_spec(median > 0.0 ? median : 1.0,
                                      static_cast<int>(k.gaussian_bandwidths.size()), k.c1, k.c2);
  adapted.median_heuristic = true;
  return adapted;
}

}  // namespace tapnet::afdf
