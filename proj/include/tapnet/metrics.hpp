#pragma once

#include <string>
#include <vector>

#include "tapnet/proposals.hpp"

namespace tapnet::metrics {

struct CountErrors {
  double mae = 0.0;
  /// Root of the mean squared count error, reported as "MSE" by convention.
  double mse = 0.0;

  double rmse() const noexcept { return mse; }
};

CountErrors count_errors(const std::vector<double>& pred_counts,
                         const std::vector<double>& gt_counts);

struct MatchCounts {
  long tp = 0;
  long fp = 0;
  long fn = 0;
};

/// One-to-one minimum-total-distance matching of predictions to ground truth;
/// matched pairs within `match_radius` are true positives.
MatchCounts match_points(const std::vector<Point>& preds, const std::vector<Point>& gts,
                         double match_radius);

struct ThresholdRow {
  double threshold = 0.0;
  long tp = 0;
  long fp = 0;
  long fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  /// At least one true instance detected at this threshold.
  bool detected = false;
};

struct MetricsReport {
  double mae = 0.0;
  double mse = 0.0;
  double count_threshold = 0.5;
  std::vector<ThresholdRow> per_threshold;
  double ap = 0.0;
  double ar = 0.0;
  double f1 = 0.0;
  double match_radius = 8.0;
  int num_images = 0;

  double rmse() const noexcept { return mse; }
  /// Row for threshold k (exact match within 1e-9); throws if absent.
  const ThresholdRow& at(double k) const;
};

/// {0.05, 0.10, ..., 0.95}
std::vector<double> default_thresholds();

/// Pooled TP/FP/FN per confidence threshold, δ-weighted AP/AR and F1.
MetricsReport localization_f1(const std::vector<ProposalSet>& preds,
                              const std::vector<std::vector<Point>>& gts,
                              const std::vector<double>& thresholds, double match_radius);

/// Count errors at `count_threshold` plus the localization sweep. The
/// threshold grid always contains 0.8.
MetricsReport evaluate(const std::vector<ProposalSet>& preds,
                       const std::vector<std::vector<Point>>& gts,
                       std::vector<double> thresholds, double match_radius,
                       double count_threshold = 0.5);

std::string to_json(const MetricsReport& report);
MetricsReport from_json(const std::string& text);
std::string to_csv(const MetricsReport& report);

struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
};

/// Head point at (cx, cy − h/2 + h·head_frac).
std::vector<Point> boxes_to_points(const std::vector<Box>& boxes, double head_frac = 0.1);
/// Fixed-size boxes whose head point is `p` under the same convention.
std::vector<Box> points_to_boxes(const std::vector<Point>& points, double w, double h,
                                 double head_frac = 0.1);

}  // namespace tapnet::metrics
