#include "tapnet/backbone.hpp"

#include <sstream>

#include "tapnet/errors.hpp"

namespace tapnet {

std::string shape_string(const torch::Tensor& t) {
  std::ostringstream out;
  out << t.sizes();
  return out.str();
}

void expect_rank(const torch::Tensor& t, int64_t dims, const std::string& what) {
  if (!t.defined() || t.dim() != dims) {
    throw ShapeError(what + ": expected a " + std::to_string(dims) + "-d tensor, got " +
                     (t.defined() ? shape_string(t) : std::string("undefined")));
  }
}

void expect_same_shape(const torch::Tensor& a, const torch::Tensor& b, const std::string& what) {
  if (!a.defined() || !b.defined() || a.sizes() != b.sizes()) {
    throw ShapeError(what + ": shape mismatch " + (a.defined() ? shape_string(a) : "?") + " vs " +
                     (b.defined() ? shape_string(b) : "?"));
  }
}

}  // namespace tapnet

namespace tapnet::backbone {

namespace nn = torch::nn;

void BackboneConfig::validate() const {
  for (int i = 0; i < 4; ++i) {
    if (channels[i] < 1) throw ConfigError("backbone channels must be positive");
    if (i > 0 && channels[i] < channels[i - 1]) {
      throw ConfigError("backbone channels must be non-decreasing across levels");
    }
  }
  if (strides != std::array<int, 4>{4, 8, 8, 16}) {
    throw ConfigError("backbone strides are fixed at (4, 8, 8, 16)");
  }
  if (extra_convs < 0) throw ConfigError("backbone extra_convs must be >= 0");
}

ConvNormActImpl::ConvNormActImpl(int in, int out, int stride, bool bias, Activation act, int kernel)
    : act_(act) {
  conv_ = register_module(
      "conv", nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2).bias(bias)));
  norm_ = register_module("norm", nn::GroupNorm(nn::GroupNormOptions(norm_groups(out), out).affine(bias)));
}

torch::Tensor ConvNormActImpl::forward(const torch::Tensor& x) {
  return activate(norm_->forward(conv_->forward(x)), act_);
}

BottleneckImpl::BottleneckImpl(int in, int out, int stride, bool bias) {
  const int mid = std::max(1, out / 4);
  body_ = register_module(
      "body",
      nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, mid, 1).bias(bias)),
                     nn::GroupNorm(nn::GroupNormOptions(norm_groups(mid), mid).affine(bias)),
                     nn::Functional(torch::relu),
                     nn::Conv2d(nn::Conv2dOptions(mid, mid, 3).stride(stride).padding(1).bias(bias)),
                     nn::GroupNorm(nn::GroupNormOptions(norm_groups(mid), mid).affine(bias)),
                     nn::Functional(torch::relu),
                     nn::Conv2d(nn::Conv2dOptions(mid, out, 1).bias(bias)),
                     nn::GroupNorm(nn::GroupNormOptions(norm_groups(out), out).affine(bias))));
  if (in != out || stride != 1) {
    shortcut_ = register_module(
        "shortcut",
        nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, out, 1).stride(stride).bias(bias)),
                       nn::GroupNorm(nn::GroupNormOptions(norm_groups(out), out).affine(bias))));
  }
}

torch::Tensor BottleneckImpl::forward(const torch::Tensor& x) {
  auto identity = shortcut_ ? shortcut_->forward(x) : x;
  return torch::relu(body_->forward(x) + identity);
}

BackboneImpl::BackboneImpl(const BackboneConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto& c = cfg_.channels;
  const bool b = cfg_.bias;
  const auto act = cfg_.activation;
  if (cfg_.variant == Variant::toy) {
    stem_ = register_module("stem", nn::Sequential(ConvNormAct(3, c[0], 2, b, act)));
    const std::array<int, 4> in{c[0], c[0], c[1], c[2]};
    const std::array<int, 4> stride{2, 2, 1, 2};
    for (int i = 0; i < 4; ++i) {
      nn::Sequential stage(ConvNormAct(in[i], c[i], stride[i], b, act));
      for (int k = 0; k < cfg_.extra_convs; ++k) stage->push_back(ConvNormAct(c[i], c[i], 1, b, act));
      stages_[i] = register_module("stage" + std::to_string(i + 1), stage);
    }
  } else {
    // Bottleneck layout (3, 4, 6, 3) behind a 7x7 stem and max-pool.
    stem_ = register_module(
        "stem", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(3, c[0], 7).stride(2).padding(3).bias(b)),
                               nn::GroupNorm(nn::GroupNormOptions(norm_groups(c[0]), c[0]).affine(b)),
                               nn::Functional(torch::relu),
                               nn::MaxPool2d(nn::MaxPool2dOptions(3).stride(2).padding(1))));
    const std::array<int, 4> blocks{3, 4, 6, 3};
    const std::array<int, 4> stride{1, 2, 1, 2};
    int in = c[0];
    for (int i = 0; i < 4; ++i) {
      nn::Sequential stage;
      for (int k = 0; k < blocks[i]; ++k) {
        stage->push_back(Bottleneck(in, c[i], k == 0 ? stride[i] : 1, b));
        in = c[i];
      }
      stages_[i] = register_module("stage" + std::to_string(i + 1), stage);
    }
  }
}

FeaturePyramid BackboneImpl::forward(const torch::Tensor& image) {
  auto x = image.dim() == 3 ? image.unsqueeze(0) : image;
  expect_rank(x, 4, "backbone input");
  if (x.size(1) != 3) throw ShapeError("backbone input must have 3 channels, got " + shape_string(x));
  if (x.size(2) % 16 != 0 || x.size(3) % 16 != 0) {
    throw ShapeError("backbone input height and width must be multiples of 16, got " +
                     shape_string(x));
  }
  FeaturePyramid p;
  x = stem_->forward(x);
  p.f1 = stages_[0]->forward(x);
  p.f2 = stages_[1]->forward(p.f1);
  p.f3 = stages_[2]->forward(p.f2);
  p.f4 = stages_[3]->forward(p.f3);
  return p;
}

}  // namespace tapnet::backbone
