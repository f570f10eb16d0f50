#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tapnet/errors.hpp"

namespace tapnet::kernels {

/// Weighted Gaussian and Laplacian kernel ladders mixed as
/// c1·k_G + c2·k_L.
struct KernelSpec {
  std::vector<double> gaussian_bandwidths{0.25, 0.5, 1.0, 2.0, 4.0};
  std::vector<double> gaussian_weights{0.2, 0.2, 0.2, 0.2, 0.2};
  std::vector<double> laplacian_bandwidths{0.25, 0.5, 1.0, 2.0, 4.0};
  std::vector<double> laplacian_weights{0.2, 0.2, 0.2, 0.2, 0.2};
  double c1 = 1.0;
  double c2 = 1.0;
  /// Rescale both ladders around the batch median distance when training.
  bool median_heuristic = true;

  void validate() const {
    auto check = [](const std::vector<double>& bw, const std::vector<double>& w, const char* name) {
      if (bw.empty() || bw.size() != w.size()) {
        throw ConfigError(std::string(name) + " bandwidth and weight lists must be non-empty and equal length");
      }
      for (double b : bw) {
        if (!(b > 0.0) || !std::isfinite(b)) throw ConfigError(std::string(name) + " bandwidths must be > 0");
      }
      double sum = 0.0;
      for (double x : w) {
        if (!(x >= 0.0)) throw ConfigError(std::string(name) + " weights must be >= 0");
        sum += x;
      }
      if (std::abs(sum - 1.0) > 1e-9) throw ConfigError(std::string(name) + " weights must sum to 1");
    };
    check(gaussian_bandwidths, gaussian_weights, "gaussian");
    check(laplacian_bandwidths, laplacian_weights, "laplacian");
    if (!(c1 >= 0.0) || !(c2 >= 0.0)) throw ConfigError("kernel mix weights c1, c2 must be >= 0");
  }
};

/// K-kernel geometric ladder (ratio 2) centred on `centre`, uniform weights.
inline KernelSpec ladder_spec(double centre, int kernels = 5, double c1 = 1.0, double c2 = 1.0) {
  if (kernels < 1) throw ConfigError("kernel ladder needs at least one kernel");
  if (!(centre > 0.0) || !std::isfinite(centre)) centre = 1.0;
  KernelSpec k;
  k.gaussian_bandwidths.clear();
  k.laplacian_bandwidths.clear();
  const double mid = 0.5 * (kernels - 1);
  for (int j = 0; j < kernels; ++j) {
    const double bw = centre * std::pow(2.0, j - mid);
    k.gaussian_bandwidths.push_back(bw);
    k.laplacian_bandwidths.push_back(bw);
  }
  k.gaussian_weights.assign(kernels, 1.0 / kernels);
  k.laplacian_weights.assign(kernels, 1.0 / kernels);
  k.c1 = c1;
  k.c2 = c2;
  return k;
}

inline double squared_distance(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw ShapeError("kernel arguments differ in length: " + std::to_string(x.size()) + " vs " +
                     std::to_string(y.size()));
  }
  double d2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) d2 += (x[i] - y[i]) * (x[i] - y[i]);
  return d2;
}

inline double gaussian_kernel(double d2, const KernelSpec& k) {
  double v = 0.0;
  for (std::size_t j = 0; j < k.gaussian_bandwidths.size(); ++j) {
    const double t = k.gaussian_bandwidths[j];
    v += k.gaussian_weights[j] * std::exp(-d2 / (2.0 * t * t));
  }
  return v;
}

inline double laplacian_kernel(double d, const KernelSpec& k) {
  double v = 0.0;
  for (std::size_t j = 0; j < k.laplacian_bandwidths.size(); ++j) {
    v += k.laplacian_weights[j] * std::exp(-d / k.laplacian_bandwidths[j]);
  }
  return v;
}

/// c1·Σα_j exp(−‖x−y‖²/2τ_j²) + c2·Σβ_j exp(−‖x−y‖/τ_j)
inline double hybrid_kernel(std::span<const double> x, std::span<const double> y,
                            const KernelSpec& k) {
  const double d2 = squared_distance(x, y);
  return k.c1 * gaussian_kernel(d2, k) + k.c2 * laplacian_kernel(std::sqrt(d2), k);
}

using Batch = std::vector<std::vector<double>>;

/// Biased (V-statistic) squared MMD between two sample batches under the
/// hybrid kernel: mean k(t,t') − 2 mean k(t,v) + mean k(v,v').
inline double mkmmd(const Batch& source, const Batch& target, const KernelSpec& k) {
  if (source.empty() || target.empty()) throw ShapeError("mkmmd: empty batch");
  auto mean_kernel = [&](const Batch& a, const Batch& b) {
    double s = 0.0;
    for (const auto& x : a) {
      for (const auto& y : b) s += hybrid_kernel(x, y, k);
    }
    return s / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
  };
  const double kss = mean_kernel(source, source);
  const double ktt = mean_kernel(target, target);
  // Average both orientations so the estimate is symmetric bit for bit.
  const double kst = 0.5 * (mean_kernel(source, target) + mean_kernel(target, source));
  return kss + ktt - 2.0 * kst;
}

/// Median of all pairwise distances in the pooled batch (0 if degenerate).
inline double median_pairwise_distance(const Batch& a, const Batch& b) {
  Batch pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::vector<double> d;
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    for (std::size_t j = i + 1; j < pooled.size(); ++j) {
      d.push_back(std::sqrt(squared_distance(pooled[i], pooled[j])));
    }
  }
  if (d.empty()) return 0.0;
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid;
}

}  // namespace tapnet::kernels
