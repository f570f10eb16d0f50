#pragma once

#include <torch/torch.h>

#include <string>

namespace tapnet {

enum class Activation { relu, silu };

inline torch::Tensor activate(const torch::Tensor& x, Activation act) {
  return act == Activation::relu ? torch::relu(x) : torch::silu(x);
}

/// Largest divisor of `channels` not exceeding 8.
inline int norm_groups(int channels) {
  for (int g = 8; g > 1; --g) {
    if (channels % g == 0) return g;
  }
  return 1;
}

/// Throws ShapeError unless `t` has `dims` dimensions.
void expect_rank(const torch::Tensor& t, int64_t dims, const std::string& what);

/// Throws ShapeError unless `a` and `b` have identical shapes.
void expect_same_shape(const torch::Tensor& a, const torch::Tensor& b, const std::string& what);

std::string shape_string(const torch::Tensor& t);

}  // namespace tapnet
