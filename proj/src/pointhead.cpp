#include "tapnet/pointhead.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "tapnet/errors.hpp"

namespace tapnet::pointhead {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

int HeadConfig::side() const {
  const int r = static_cast<int>(std::lround(std::sqrt(static_cast<double>(K))));
  return r * r == K ? r : 0;
}

void HeadConfig::validate() const {
  if (stride < 1) throw ConfigError("head stride must be >= 1");
  if (K < 1 || side() == 0) throw ConfigError("head K must be a positive perfect square");
  if (!(gamma > 0.0)) throw ConfigError("head gamma must be > 0");
  if (hidden_dims.empty()) throw ConfigError("head hidden_dims must not be empty");
  for (int d : hidden_dims) {
    if (d < 1) throw ConfigError("head hidden_dims entries must be >= 1");
  }
  if (pe_bands < 1) throw ConfigError("head pe_bands must be >= 1");
  if (ifi_hidden < 1 || ifi_dim < 1) throw ConfigError("head ifi widths must be >= 1");
  if (latent_stride < 1) throw ConfigError("head latent_stride must be >= 1");
}

std::vector<Point> make_reference_points(int height, int width, const HeadConfig& cfg) {
  cfg.validate();
  const int s = cfg.stride;
  if (height <= 0 || width <= 0 || height % s != 0 || width % s != 0) {
    throw ShapeError("reference grid: image " + std::to_string(height) + "x" +
                     std::to_string(width) + " is not divisible by stride " + std::to_string(s));
  }
  const int side = cfg.side();
  const double step = static_cast<double>(s) / side;
  std::vector<Point> out;
  out.reserve(static_cast<std::size_t>(cfg.K) * (height / s) * (width / s));
  for (int py = 0; py < height / s; ++py) {
    for (int px = 0; px < width / s; ++px) {
      for (int j = 0; j < side; ++j) {
        for (int i = 0; i < side; ++i) {
          out.push_back({px * s + (i + 0.5) * step, py * s + (j + 0.5) * step});
        }
      }
    }
  }
  return out;
}

torch::Tensor reference_tensor(int height, int width, const HeadConfig& cfg) {
  const auto pts = make_reference_points(height, width, cfg);
  auto t = torch::empty({static_cast<int64_t>(pts.size()), 2}, torch::kDouble);
  auto a = t.accessor<double, 2>();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    a[i][0] = pts[i].x;
    a[i][1] = pts[i].y;
  }
  return t;
}

torch::Tensor positional_encoding(const torch::Tensor& delta, int bands) {
  if (delta.size(-1) != 2) throw ShapeError("positional_encoding expects [..., 2] offsets");
  std::vector<torch::Tensor> freq;
  for (int l = 0; l < bands; ++l) freq.push_back(delta * (std::ldexp(1.0, l) * std::numbers::pi));
  const auto arg = torch::cat(freq, -1);
  return torch::cat({torch::sin(arg), torch::cos(arg)}, -1);
}

CornerWeights corner_weights(double qx, double qy, int grid_h, int grid_w) {
  if (grid_h < 2 || grid_w < 2) throw ShapeError("corner_weights: latent grid must be at least 2x2");
  if (!(qx >= 0.0 && qx <= grid_w - 1 && qy >= 0.0 && qy <= grid_h - 1)) {
    throw ShapeError("corner_weights: query (" + std::to_string(qx) + ", " + std::to_string(qy) +
                     ") outside the latent grid extent");
  }
  const int x0 = std::min(static_cast<int>(std::floor(qx)), grid_w - 2);
  const int y0 = std::min(static_cast<int>(std::floor(qy)), grid_h - 2);
  CornerWeights w;
  w.gx = {x0, x0 + 1, x0, x0 + 1};
  w.gy = {y0, y0, y0 + 1, y0 + 1};
  double total = 0.0;
  for (int i = 0; i < 4; ++i) {
    w.offsets[i] = {qx - w.gx[i], qy - w.gy[i]};
    w.areas[i] = std::abs(w.offsets[i][0]) * std::abs(w.offsets[i][1]);
    total += w.areas[i];
  }
  for (int i = 0; i < 4; ++i) w.weights[i] = w.areas[3 - i] / total;
  return w;
}

ImplicitInterpolatorImpl::ImplicitInterpolatorImpl(int latent_dim, int hidden, int out_dim, int bands)
    : bands_(bands), out_dim_(out_dim) {
  const int in = latent_dim + 2 + 4 * bands;
  f_ = register_module("f", nn::Sequential(nn::Linear(in, hidden), nn::Functional(torch::relu),
                                           nn::Linear(hidden, out_dim)));
}

torch::Tensor ImplicitInterpolatorImpl::corner_feature(const torch::Tensor& z, const torch::Tensor& delta) {
  return f_->forward(torch::cat({z, delta, positional_encoding(delta, bands_)}, -1));
}

torch::Tensor ImplicitInterpolatorImpl::forward(const torch::Tensor& latent,
                                                const torch::Tensor& queries, int stride) {
  expect_rank(latent, 4, "ifi latent");
  expect_rank(queries, 3, "ifi queries");
  const auto b = latent.size(0);
  const auto c = latent.size(1);
  const auto h = latent.size(2);
  const auto w = latent.size(3);
  const auto q = queries.size(1);
  const auto opts = latent.options();
  const auto pts = queries.detach().to(opts.dtype());
  const auto gx = ((pts.select(-1, 0) + 0.5) / stride - 0.5).clamp(0, w - 1);
  const auto gy = ((pts.select(-1, 1) + 0.5) / stride - 0.5).clamp(0, h - 1);
  const auto x0 = gx.floor().clamp_max(std::max<int64_t>(w - 2, 0));
  const auto y0 = gy.floor().clamp_max(std::max<int64_t>(h - 2, 0));
  const auto x1 = (x0 + 1).clamp_max(w - 1);
  const auto y1 = (y0 + 1).clamp_max(h - 1);
  const auto fx = gx - x0;
  const auto fy = gy - y0;
  const std::array<std::array<torch::Tensor, 2>, 4> corners{
      {{x0, y0}, {x1, y0}, {x0, y1}, {x1, y1}}};
  const std::array<torch::Tensor, 4> weights{(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
  const auto flat = latent.flatten(2);
  torch::Tensor out;
  for (int i = 0; i < 4; ++i) {
    const auto& [cx, cy] = corners[i];
    const auto idx = (cy * w + cx).to(torch::kLong).unsqueeze(1).expand({b, c, q});
    const auto z = flat.gather(2, idx).transpose(1, 2);
    const auto delta = torch::stack({gx - cx, gy - cy}, -1);
    const auto term = weights[i].unsqueeze(-1) * corner_feature(z, delta);
    out = out.defined() ? out + term : term;
  }
  return out;
}

torch::Tensor ImplicitInterpolatorImpl::interpolate(const torch::Tensor& latent, double qx, double qy) {
  expect_rank(latent, 3, "ifi latent");
  const auto cw = corner_weights(qx, qy, static_cast<int>(latent.size(1)), static_cast<int>(latent.size(2)));
  torch::Tensor out;
  for (int i = 0; i < 4; ++i) {
    const auto z = latent.index({torch::indexing::Slice(), cw.gy[i], cw.gx[i]});
    const auto delta = torch::tensor({cw.offsets[i][0], cw.offsets[i][1]}, latent.options());
    const auto term = cw.weights[i] * corner_feature(z, delta);
    out = out.defined() ? out + term : term;
  }
  return out;
}

AsppImpl::AsppImpl(int channels, int branch_channels) {
  for (int rate : {1, 2, 4}) {
    dilated_.push_back(register_module(
        "rate" + std::to_string(rate),
        nn::Conv2d(nn::Conv2dOptions(channels, branch_channels, 3).padding(rate).dilation(rate))));
  }
  pool_conv_ = register_module("pool", nn::Conv2d(nn::Conv2dOptions(channels, branch_channels, 1)));
  project_ = register_module("project", nn::Conv2d(nn::Conv2dOptions(4 * branch_channels, channels, 1)));
}

torch::Tensor AsppImpl::pool_branch(const torch::Tensor& x) {
  const auto pooled = torch::relu(pool_conv_->forward(x.mean({2, 3}, true)));
  return pooled.expand({x.size(0), pooled.size(1), x.size(2), x.size(3)});
}

torch::Tensor AsppImpl::forward(const torch::Tensor& x) {
  expect_rank(x, 4, "aspp input");
  std::vector<torch::Tensor> parts;
  for (auto& conv : dilated_) parts.push_back(torch::relu(conv->forward(x)));
  parts.push_back(pool_branch(x));
  return project_->forward(torch::cat(parts, 1));
}

torch::Tensor sample_features(const torch::Tensor& features, const torch::Tensor& points, int stride) {
  expect_rank(features, 4, "sample_features");
  expect_rank(points, 3, "sample_features points");
  const auto pts = points.detach().to(features.options().dtype());
  const double img_w = static_cast<double>(features.size(3)) * stride;
  const double img_h = static_cast<double>(features.size(2)) * stride;
  const auto grid = torch::stack({(2 * pts.select(-1, 0) + 1) / img_w - 1,
                                  (2 * pts.select(-1, 1) + 1) / img_h - 1},
                                 -1)
                        .unsqueeze(1);
  const auto sampled = F::grid_sample(
      features, grid,
      F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kBorder).align_corners(false));
  return sampled.squeeze(2).transpose(1, 2);
}

PointHeadImpl::PointHeadImpl(const HeadConfig& cfg, int c3, int c4) : cfg_(cfg) {
  cfg_.validate();
  int in = c4;
  if (cfg_.use_ifi) {
    aspp = register_module("aspp", Aspp(c3, std::max(1, c3 / 2)));
    ifi = register_module("ifi", ImplicitInterpolator(c3, cfg_.ifi_hidden, cfg_.ifi_dim, cfg_.pe_bands));
    in += cfg_.ifi_dim;
  }
  trunk = register_module("trunk", nn::Sequential());
  for (int d : cfg_.hidden_dims) {
    trunk->push_back(nn::Linear(in, d));
    trunk->push_back(nn::Functional(torch::relu));
    in = d;
  }
  reg = register_module("reg", nn::Linear(in, 2));
  cls = register_module("cls", nn::Linear(in, 1));
  torch::NoGradGuard guard;
  reg->weight.zero_();
  reg->bias.zero_();
}

torch::Tensor PointHeadImpl::latent(const torch::Tensor& f3) {
  return cfg_.use_ifi ? aspp->forward(f3) : torch::Tensor();
}

HeadQuery PointHeadImpl::query(const torch::Tensor& f4, const torch::Tensor& lat,
                               const torch::Tensor& points) {
  auto x = sample_features(f4, points, cfg_.stride);
  if (cfg_.use_ifi) x = torch::cat({x, ifi->forward(lat, points, cfg_.latent_stride)}, -1);
  const auto h = trunk->forward(x);
  return {reg->forward(h), cls->forward(h).squeeze(-1)};
}

HeadOutput PointHeadImpl::forward(const torch::Tensor& f3, const torch::Tensor& f4, int height,
                                  int width) {
  return propose(f4, latent(f3), height, width);
}

HeadOutput PointHeadImpl::propose(const torch::Tensor& f4, const torch::Tensor& lat, int height,
                                  int width) {
  expect_rank(f4, 4, "point head features");
  if (f4.size(2) * cfg_.stride != height || f4.size(3) * cfg_.stride != width) {
    throw ShapeError("point head: features " + shape_string(f4) + " do not cover a " +
                     std::to_string(height) + "x" + std::to_string(width) + " image at stride " +
                     std::to_string(cfg_.stride));
  }
  HeadOutput out;
  out.reference = reference_tensor(height, width, cfg_).to(f4.options().dtype());
  const auto points = out.reference.unsqueeze(0).expand({f4.size(0), out.reference.size(0), 2});
  auto q = query(f4, lat, points);
  out.delta = q.delta;
  out.logits = q.logits;
  out.coords = out.reference.unsqueeze(0) + cfg_.gamma * q.delta;
  return out;
}

ProposalSet to_proposals(const HeadOutput& out, int b, const HeadConfig& cfg) {
  const auto coords = out.coords[b].detach().to(torch::kCPU, torch::kDouble).contiguous();
  const auto conf = torch::sigmoid(out.logits[b].detach().to(torch::kCPU, torch::kDouble)).contiguous();
  const auto c = coords.accessor<double, 2>();
  const auto p = conf.accessor<double, 1>();
  ProposalSet set;
  const auto m = coords.size(0);
  set.coords.reserve(m);
  for (int64_t j = 0; j < m; ++j) {
    set.coords.push_back({c[j][0], c[j][1]});
    set.confidence.push_back(std::clamp(p[j], 1e-12, 1.0 - 1e-12));
    set.reference_index.push_back(static_cast<int>(j % cfg.K));
  }
  return set;
}

}  // namespace tapnet::pointhead
