#pragma once

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "tapnet/dataio.hpp"
#include "tapnet/matching.hpp"

namespace tapnet::testing {

/// Largest elementwise relative error between autograd gradients of the
/// scalar `f` and five-point central differences, over every entry of `inputs`.
inline double gradcheck(const std::function<torch::Tensor()>& f, const std::vector<torch::Tensor>& inputs,
                        double eps = 1e-5, double floor = 1e-6) {
  const auto grads = torch::autograd::grad({f()}, inputs, {}, false, false, true);
  double worst = 0.0;
  torch::NoGradGuard guard;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto flat = inputs[k].view(-1);
    const auto analytic = grads[k].defined() ? grads[k].reshape(-1) : torch::zeros_like(flat);
    for (int64_t i = 0; i < flat.numel(); ++i) {
      const double orig = flat[i].item<double>();
      auto at = [&](double offset) {
        flat[i] = orig + offset;
        return f().item<double>();
      };
      const double numeric = (8.0 * (at(eps) - at(-eps)) - (at(2.0 * eps) - at(-2.0 * eps))) / (12.0 * eps);
      flat[i] = orig;
      const double a = analytic[i].item<double>();
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

/// Every parameter of `module` as the gradcheck input list.
inline std::vector<torch::Tensor> parameter_list(torch::nn::Module& module) {
  std::vector<torch::Tensor> out;
  for (auto& p : module.parameters()) out.push_back(p);
  return out;
}

/// Minimum total cost over all injections of rows into columns.
inline double brute_force_min(const matching::Matrix<double>& c) {
  double best = std::numeric_limits<double>::infinity();
  std::vector<char> used(static_cast<std::size_t>(c.cols), 0);
  std::function<void(int, double)> go = [&](int row, double acc) {
    if (row == c.rows) {
      best = std::min(best, acc);
      return;
    }
    for (int j = 0; j < c.cols; ++j) {
      if (used[j]) continue;
      used[j] = 1;
      go(row + 1, acc + c(row, j));
      used[j] = 0;
    }
  };
  go(0, 0.0);
  return best;
}

inline long long brute_force_min(const matching::Matrix<long long>& c) {
  long long best = std::numeric_limits<long long>::max();
  std::vector<char> used(static_cast<std::size_t>(c.cols), 0);
  std::function<void(int, long long)> go = [&](int row, long long acc) {
    if (row == c.rows) {
      best = std::min(best, acc);
      return;
    }
    for (int j = 0; j < c.cols; ++j) {
      if (used[j]) continue;
      used[j] = 1;
      go(row + 1, acc + c(row, j));
      used[j] = 0;
    }
  };
  go(0, 0);
  return best;
}

/// True positives of the exhaustive minimum-total-distance matching.
inline long brute_force_tp(const std::vector<Point>& preds, const std::vector<Point>& gts, double radius) {
  if (preds.empty() || gts.empty()) return 0;
  const auto& rows = gts.size() <= preds.size() ? gts : preds;
  const auto& cols = gts.size() <= preds.size() ? preds : gts;
  double best = std::numeric_limits<double>::infinity();
  long best_tp = 0;
  std::vector<char> used(cols.size(), 0);
  std::function<void(std::size_t, double, long)> go = [&](std::size_t row, double acc, long tp) {
    if (row == rows.size()) {
      if (acc < best) {
        best = acc;
        best_tp = tp;
      }
      return;
    }
    for (std::size_t j = 0; j < cols.size(); ++j) {
      if (used[j]) continue;
      used[j] = 1;
      const double d = std::hypot(rows[row].x - cols[j].x, rows[row].y - cols[j].y);
      go(row + 1, acc + d, tp + (d <= radius ? 1 : 0));
      used[j] = 0;
    }
  };
  go(0, 0.0, 0);
  return best_tp;
}

inline std::vector<Point> random_points(std::mt19937_64& rng, int n, double extent) {
  std::uniform_real_distribution<double> u(0.0, extent);
  std::vector<Point> out;
  for (int i = 0; i < n; ++i) out.push_back({u(rng), u(rng)});
  return out;
}

}  // namespace tapnet::testing
