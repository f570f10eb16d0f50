#include "tapnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "tapnet/matching.hpp"

namespace tapnet::metrics {

using nlohmann::json;

CountErrors count_errors(const std::vector<double>& pred_counts,
                         const std::vector<double>& gt_counts) {
  if (pred_counts.empty()) throw DataError("count_errors: empty count lists");
  if (pred_counts.size() != gt_counts.size()) {
    throw ShapeError("count_errors: prediction and ground-truth lists differ in length");
  }
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  for (std::size_t i = 0; i < pred_counts.size(); ++i) {
    const double e = gt_counts[i] - pred_counts[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
  }
  const auto n = static_cast<double>(pred_counts.size());
  return {abs_sum / n, std::sqrt(sq_sum / n)};
}

MatchCounts match_points(const std::vector<Point>& preds, const std::vector<Point>& gts,
                         double match_radius) {
  MatchCounts c;
  if (preds.empty() || gts.empty()) {
    c.fp = static_cast<long>(preds.size());
    c.fn = static_cast<long>(gts.size());
    return c;
  }
  const bool gt_rows = gts.size() <= preds.size();
  const auto& rows = gt_rows ? gts : preds;
  const auto& cols = gt_rows ? preds : gts;
  matching::Matrix<double> dist(static_cast<int>(rows.size()), static_cast<int>(cols.size()));
  for (int i = 0; i < dist.rows; ++i) {
    for (int j = 0; j < dist.cols; ++j) {
      dist(i, j) = std::hypot(rows[i].x - cols[j].x, rows[i].y - cols[j].y);
    }
  }
  const auto a = matching::hungarian(dist);
  for (int i = 0; i < dist.rows; ++i) {
    if (dist(i, a.gt_to_proposal[i]) <= match_radius) ++c.tp;
  }
  c.fp = static_cast<long>(preds.size()) - c.tp;
  c.fn = static_cast<long>(gts.size()) - c.tp;
  return c;
}

const ThresholdRow& MetricsReport::at(double k) const {
  for (const auto& row : per_threshold) {
    if (std::abs(row.threshold - k) < 1e-9) return row;
  }
  throw ConfigError("metrics report has no row for threshold " + std::to_string(k));
}

std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int i = 1; i <= 19; ++i) t.push_back(i / 20.0);
  return t;
}

MetricsReport localization_f1(const std::vector<ProposalSet>& preds,
                              const std::vector<std::vector<Point>>& gts,
                              const std::vector<double>& thresholds, double match_radius) {
  if (preds.size() != gts.size()) {
    throw ShapeError("localization_f1: prediction and ground-truth image counts differ");
  }
  if (!(match_radius > 0.0)) throw ConfigError("match_radius must be > 0");
  if (!std::is_sorted(thresholds.begin(), thresholds.end())) {
    throw ConfigError("confidence thresholds must be sorted ascending");
  }
  MetricsReport r;
  r.match_radius = match_radius;
  r.num_images = static_cast<int>(preds.size());
  double p_sum = 0.0;
  double r_sum = 0.0;
  int delta_sum = 0;
  for (double k : thresholds) {
    ThresholdRow row;
    row.threshold = k;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const auto kept = preds[i].filtered(k);
      const auto c = match_points(kept.coords, gts[i], match_radius);
      row.tp += c.tp;
      row.fp += c.fp;
      row.fn += c.fn;
    }
    row.precision = row.tp + row.fp > 0 ? static_cast<double>(row.tp) / (row.tp + row.fp) : 0.0;
    row.recall = row.tp + row.fn > 0 ? static_cast<double>(row.tp) / (row.tp + row.fn) : 0.0;
    row.f1 = row.precision + row.recall > 0.0
                 ? 2.0 * row.precision * row.recall / (row.precision + row.recall)
                 : 0.0;
    row.detected = row.tp > 0;
    if (row.detected) {
      p_sum += row.precision;
      r_sum += row.recall;
      ++delta_sum;
    }
    r.per_threshold.push_back(row);
  }
  if (delta_sum > 0) {
    r.ap = p_sum / delta_sum;
    r.ar = r_sum / delta_sum;
  }
  r.f1 = r.ap + r.ar > 0.0 ? 2.0 * r.ap * r.ar / (r.ap + r.ar) : 0.0;
  return r;
}

MetricsReport evaluate(const std::vector<ProposalSet>& preds,
                       const std::vector<std::vector<Point>>& gts,
                       std::vector<double> thresholds, double match_radius,
                       double count_threshold) {
  if (preds.empty()) throw DataError("evaluation dataset is empty");
  const bool has_08 = std::any_of(thresholds.begin(), thresholds.end(),
                                  [](double t) { return std::abs(t - 0.8) < 1e-9; });
  if (!has_08) thresholds.push_back(0.8);
  std::sort(thresholds.begin(), thresholds.end());
  auto report = localization_f1(preds, gts, thresholds, match_radius);
  std::vector<double> pc, gc;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    pc.push_back(static_cast<double>(preds[i].filtered(count_threshold).size()));
    gc.push_back(static_cast<double>(gts[i].size()));
  }
  const auto ce = count_errors(pc, gc);
  report.mae = ce.mae;
  report.mse = ce.mse;
  report.count_threshold = count_threshold;
  return report;
}

std::string to_json(const MetricsReport& r) {
  json rows = json::array();
  for (const auto& row : r.per_threshold) {
    rows.push_back({{"threshold", row.threshold},
                    {"tp", row.tp},
                    {"fp", row.fp},
                    {"fn", row.fn},
                    {"precision", row.precision},
                    {"recall", row.recall},
                    {"f1", row.f1},
                    {"delta", row.detected ? 1 : 0}});
  }
  json j{{"mae", r.mae},
         {"mse", r.mse},
         {"rmse", r.mse},
         {"count_threshold", r.count_threshold},
         {"ap", r.ap},
         {"ar", r.ar},
         {"f1", r.f1},
         {"match_radius", r.match_radius},
         {"num_images", r.num_images},
         {"per_threshold", rows}};
  return j.dump(2);
}

MetricsReport from_json(const std::string& text) {
  MetricsReport r;
  try {
    const auto j = json::parse(text);
    r.mae = j.at("mae").get<double>();
    r.mse = j.at("mse").get<double>();
    r.count_threshold = j.value("count_threshold", 0.5);
    r.ap = j.at("ap").get<double>();
    r.ar = j.at("ar").get<double>();
    r.f1 = j.at("f1").get<double>();
    r.match_radius = j.at("match_radius").get<double>();
    r.num_images = j.value("num_images", 0);
    for (const auto& row : j.at("per_threshold")) {
      ThresholdRow t;
      t.threshold = row.at("threshold").get<double>();
      t.tp = row.at("tp").get<long>();
      t.fp = row.at("fp").get<long>();
      t.fn = row.at("fn").get<long>();
      t.precision = row.at("precision").get<double>();
      t.recall = row.at("recall").get<double>();
      t.f1 = row.value("f1", 0.0);
      t.detected = row.at("delta").get<int>() != 0;
      r.per_threshold.push_back(t);
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed metrics JSON: ") + e.what());
  }
  return r;
}

std::string to_csv(const MetricsReport& r) {
  std::ostringstream out;
  out.precision(10);
  out << "threshold,tp,fp,fn,precision,recall,f1,delta\n";
  for (const auto& row : r.per_threshold) {
    out << row.threshold << ',' << row.tp << ',' << row.fp << ',' << row.fn << ','
        << row.precision << ',' << row.recall << ',' << row.f1 << ',' << (row.detected ? 1 : 0)
        << '\n';
  }
  out << "# mae," << r.mae << "\n# mse," << r.mse << "\n# ap," << r.ap << "\n# ar," << r.ar
      << "\n# f1," << r.f1 << "\n# match_radius," << r.match_radius << '\n';
  return out.str();
}

std::vector<Point> boxes_to_points(const std::vector<Box>& boxes, double head_frac) {
  std::vector<Point> points;
  points.reserve(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& b = boxes[i];
    if (!(b.w > 0.0) || !(b.h > 0.0)) {
      throw DataError("box " + std::to_string(i) + " has non-positive width or height");
    }
    points.push_back({b.cx, b.cy - b.h / 2.0 + b.h * head_frac});
  }
  return points;
}

std::vector<Box> points_to_boxes(const std::vector<Point>& points, double w, double h,
                                 double head_frac) {
  if (!(w > 0.0) || !(h > 0.0)) throw DataError("box size must be positive");
  std::vector<Box> boxes;
  boxes.reserve(points.size());
  for (const auto& p : points) boxes.push_back({p.x, p.y + h / 2.0 - h * head_frac, w, h});
  return boxes;
}

}  // namespace tapnet::metrics
