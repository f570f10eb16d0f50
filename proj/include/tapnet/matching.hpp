#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "tapnet/errors.hpp"
#include "tapnet/proposals.hpp"

namespace tapnet::matching {

/// Dense row-major matrix.
template <typename T>
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(int r, int c, T fill = T{})
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  T& operator()(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
  const T& operator()(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }
};

/// Injective map from ground-truth rows to proposal columns.
template <typename T>
struct Assignment {
  /// proposal index for each ground-truth point
  std::vector<int> gt_to_proposal;
  T realized_cost{};
  /// matched proposals, ascending
  std::vector<int> positives;
  /// unmatched proposals, ascending
  std::vector<int> negatives;
};

using MatchAssignment = Assignment<double>;

/// Matched proposals become positives, the rest negatives.
template <typename T>
std::pair<std::vector<int>, std::vector<int>> split_positive_negative(
    const Assignment<T>& assignment, int num_proposals) {
  std::vector<char> matched(static_cast<std::size_t>(num_proposals), 0);
  for (int j : assignment.gt_to_proposal) {
    if (j < 0 || j >= num_proposals) throw ShapeError("assignment refers to a missing proposal");
    if (matched[j]) throw ShapeError("assignment is not injective");
    matched[j] = 1;
  }
  std::pair<std::vector<int>, std::vector<int>> out;
  for (int j = 0; j < num_proposals; ++j) (matched[j] ? out.first : out.second).push_back(j);
  return out;
}

/// Minimum-cost assignment of every row to a distinct column (rows <= cols),
/// by shortest augmenting paths with row/column potentials. Exact for integral
/// T; for floating T exact up to rounding. Ties resolve toward the lowest
/// column index in each augmentation scan.
template <typename T>
Assignment<T> hungarian(const Matrix<T>& costs) {
  static_assert(std::is_arithmetic_v<T>);
  const int n = costs.rows;
  const int m = costs.cols;
  if (n > m) {
    throw ShapeError("hungarian: " + std::to_string(n) + " targets exceed " + std::to_string(m) +
                     " proposals");
  }
  if constexpr (std::is_floating_point_v<T>) {
    for (const T& c : costs.data) {
      if (!std::isfinite(c)) throw NumericError("cost_matrix", "hungarian: non-finite cost entry");
    }
  }

  const T inf = std::is_floating_point_v<T> ? std::numeric_limits<T>::infinity()
                                            : std::numeric_limits<T>::max() / 4;
  // 1-based bookkeeping: column 0 is the virtual source of each augmentation.
  std::vector<T> u(n + 1, T{}), v(m + 1, T{});
  std::vector<int> owner(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    owner[0] = i;
    int j0 = 0;
    std::vector<T> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = owner[j0];
      T delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const T cur = costs(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const int j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  Assignment<T> out;
  out.gt_to_proposal.assign(n, -1);
  for (int j = 1; j <= m; ++j) {
    if (owner[j] != 0) out.gt_to_proposal[owner[j] - 1] = j - 1;
  }
  for (int i = 0; i < n; ++i) out.realized_cost += costs(i, out.gt_to_proposal[i]);
  auto [pos, neg] = split_positive_negative(out, m);
  out.positives = std::move(pos);
  out.negatives = std::move(neg);
  return out;
}

/// N×M matrix with entry (i, j) = tau·‖p_i − p̂_j‖₂ − ĉ_j.
inline Matrix<double> cost_matrix(const std::vector<Point>& gt, const ProposalSet& proposals,
                                  double tau) {
  const int n = static_cast<int>(gt.size());
  const int m = static_cast<int>(proposals.size());
  if (n > m) {
    throw ShapeError("cost_matrix: " + std::to_string(n) + " ground-truth points but only " +
                     std::to_string(m) + " proposals");
  }
  if (proposals.confidence.size() != proposals.coords.size()) {
    throw ShapeError("cost_matrix: proposal coords and confidences differ in length");
  }
  Matrix<double> d(n, m);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      const double dist = std::hypot(gt[i].x - proposals.coords[j].x, gt[i].y - proposals.coords[j].y);
      d(i, j) = tau * dist - proposals.confidence[j];
    }
  }
  return d;
}

struct AuxPointConfig {
  int k_pos = 1;
  int k_neg = 0;
  double n_pos = 1.0;
  double n_neg = 4.0;

  void validate() const {
    if (k_pos < 0 || k_neg < 0) throw ConfigError("auxiliary point counts must be >= 0");
    if (!(n_pos > 0.0) || !(n_neg > 0.0)) throw ConfigError("auxiliary point ranges must be > 0");
    if (k_neg > 0 && n_pos > n_neg) throw ConfigError("auxiliary ranges need n_pos <= n_neg");
  }
};

/// Auxiliary points laid out row-major: entry [l * k + i] belongs to ground
/// truth l.
struct AuxPoints {
  int num_gt = 0;
  int k_pos = 0;
  int k_neg = 0;
  std::vector<Point> positives;
  std::vector<Point> negatives;
};

/// Positive offsets uniform in [−n_pos, n_pos]²; negative offsets uniform over
/// the square annulus [−n_neg, n_neg]² \ [−n_pos, n_pos]² (rejection sampled).
inline AuxPoints sample_aux_points(const std::vector<Point>& gt, const AuxPointConfig& cfg,
                                   std::mt19937_64& rng) {
  cfg.validate();
  AuxPoints out;
  out.num_gt = static_cast<int>(gt.size());
  out.k_pos = cfg.k_pos;
  out.k_neg = cfg.k_neg;
  std::uniform_real_distribution<double> pos(-cfg.n_pos, cfg.n_pos);
  std::uniform_real_distribution<double> neg(-cfg.n_neg, cfg.n_neg);
  for (const auto& p : gt) {
    for (int i = 0; i < cfg.k_pos; ++i) {
      const double dx = pos(rng);
      const double dy = pos(rng);
      out.positives.push_back({p.x + dx, p.y + dy});
    }
    for (int j = 0; j < cfg.k_neg; ++j) {
      double dx = 0.0;
      double dy = 0.0;
      do {
        dx = neg(rng);
        dy = neg(rng);
      } while (std::max(std::abs(dx), std::abs(dy)) <= cfg.n_pos);
      out.negatives.push_back({p.x + dx, p.y + dy});
    }
  }
  return out;
}

}  // namespace tapnet::matching
