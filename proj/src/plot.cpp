#include "tapnet/plot.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tapnet/errors.hpp"
#include "tapnet/metrics.hpp"

namespace tapnet::plot {

namespace {

using dataio::Image;

// 3x5 bitmap glyphs, one row per entry, most significant bit on the left.
const std::array<std::uint8_t, 5>* glyph(char c) {
  static const std::array<std::array<std::uint8_t, 5>, 10> digits{{
      {7, 5, 5, 5, 7}, {2, 6, 2, 2, 7}, {7, 1, 7, 4, 7}, {7, 1, 7, 1, 7}, {5, 5, 7, 1, 1},
      {7, 4, 7, 1, 7}, {7, 4, 7, 5, 7}, {7, 1, 1, 1, 1}, {7, 5, 7, 5, 7}, {7, 5, 7, 1, 7},
  }};
  static const std::array<std::uint8_t, 5> dot{0, 0, 0, 0, 2};
  static const std::array<std::uint8_t, 5> minus{0, 0, 7, 0, 0};
  static const std::array<std::uint8_t, 5> plus{0, 2, 7, 2, 0};
  static const std::array<std::uint8_t, 5> e{7, 4, 7, 4, 7};
  if (c >= '0' && c <= '9') return &digits[c - '0'];
  switch (c) {
    case '.': return &dot;
    case '-': return &minus;
    case '+': return &plus;
    case 'e': return &e;
    default: return nullptr;
  }
}

class Canvas {
 public:
  Canvas(int width, int height) : image_(height, width, 3, 1.0f) {}

  void set(int x, int y, float r, float g, float b) {
    if (x < 0 || y < 0 || x >= image_.width() || y >= image_.height()) return;
    image_.at(y, x, 0) = r;
    image_.at(y, x, 1) = g;
    image_.at(y, x, 2) = b;
  }

  void line(int x0, int y0, int x1, int y1, float r, float g, float b) {
    const int dx = std::abs(x1 - x0);
    const int dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1;
    const int sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      set(x0, y0, r, g, b);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  /// Text with the top-left corner at (x, y), glyphs scaled by `scale`.
  void text(int x, int y, const std::string& s, int scale = 2) {
    for (char c : s) {
      if (const auto* g = glyph(c)) {
        for (int row = 0; row < 5; ++row) {
          for (int col = 0; col < 3; ++col) {
            if (((*g)[row] >> (2 - col)) & 1) {
              for (int a = 0; a < scale; ++a) {
                for (int b = 0; b < scale; ++b) set(x + col * scale + a, y + row * scale + b, 0, 0, 0);
              }
            }
          }
        }
      }
      x += 4 * scale;
    }
  }

  static int text_width(const std::string& s, int scale = 2) { return static_cast<int>(s.size()) * 4 * scale; }

  Image& image() { return image_; }

 private:
  Image image_;
};

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

}  // namespace

Image line_chart(const std::vector<Series>& series, int width, int height) {
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  if (!std::isfinite(xmin)) throw DataError("nothing to plot");
  if (xmax - xmin < 1e-12) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  if (ymax - ymin < 1e-12) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;

  Canvas canvas(width, height);
  const int left = 70, right = 20, top = 20, bottom = 40;
  const int pw = width - left - right;
  const int ph = height - top - bottom;
  auto px = [&](double x) { return left + static_cast<int>(std::lround((x - xmin) / (xmax - xmin) * pw)); };
  auto py = [&](double y) { return top + ph - static_cast<int>(std::lround((y - ymin) / (ymax - ymin) * ph)); };

  canvas.line(left, top, left, top + ph, 0, 0, 0);
  canvas.line(left, top + ph, left + pw, top + ph, 0, 0, 0);
  constexpr int ticks = 5;
  for (int t = 0; t < ticks; ++t) {
    const double xv = xmin + (xmax - xmin) * t / (ticks - 1);
    const double yv = ymin + (ymax - ymin) * t / (ticks - 1);
    const int x = px(xv);
    const int y = py(yv);
    canvas.line(x, top + ph, x, top + ph + 4, 0, 0, 0);
    canvas.line(left - 4, y, left, y, 0, 0, 0);
    for (int gx = left + 1; gx <= left + pw; gx += 4) canvas.set(gx, y, 0.85f, 0.85f, 0.85f);
    const auto xl = tick_label(xv);
    canvas.text(x - Canvas::text_width(xl) / 2, top + ph + 8, xl);
    const auto yl = tick_label(yv);
    canvas.text(left - 8 - Canvas::text_width(yl), y - 5, yl);
  }
  for (const auto& s : series) {
    for (std::size_t i = 1; i < s.x.size(); ++i) {
      canvas.line(px(s.x[i - 1]), py(s.y[i - 1]), px(s.x[i]), py(s.y[i]), s.r, s.g, s.b);
    }
    if (s.x.size() == 1) canvas.set(px(s.x[0]), py(s.y[0]), s.r, s.g, s.b);
  }
  return std::move(canvas.image());
}

Series read_loss_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  Series s;
  s.label = "total";
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      s.y.push_back(j.at("total").get<double>());
      s.x.push_back(j.contains("step") ? j.at("step").get<double>() : static_cast<double>(s.x.size() + 1));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ": line " + std::to_string(number) + " is not a loss record (" +
                      e.what() + ")");
    }
  }
  if (s.y.empty()) throw DataError(path.string() + ": loss log is empty");
  return s;
}

std::vector<std::filesystem::path> plot_file(const std::filesystem::path& in,
                                             const std::filesystem::path& out_dir) {
  std::ifstream file(in);
  if (!file) throw DataError("cannot open " + in.string());
  std::stringstream buf;
  buf << file.rdbuf();
  const std::string text = buf.str();

  nlohmann::json whole;
  bool metrics_file = false;
  try {
    whole = nlohmann::json::parse(text);
    metrics_file = whole.is_object() && whole.contains("per_threshold");
  } catch (const nlohmann::json::exception&) {
  }

  std::vector<Series> series;
  std::filesystem::path out;
  if (metrics_file) {
    const auto report = metrics::from_json(text);
    Series p{"precision", {}, {}, 0.1f, 0.4f, 0.9f};
    Series r{"recall", {}, {}, 0.1f, 0.7f, 0.2f};
    Series f{"f1", {}, {}, 0.85f, 0.1f, 0.1f};
    for (const auto& row : report.per_threshold) {
      for (auto* s : {&p, &r, &f}) s->x.push_back(row.threshold);
      p.y.push_back(row.precision);
      r.y.push_back(row.recall);
      f.y.push_back(row.f1);
    }
    if (f.x.empty()) throw DataError(in.string() + ": metrics report has no thresholds");
    series = {p, r, f};
    out = out_dir / "f1_vs_threshold.png";
  } else {
    auto raw = read_loss_log(in);
    raw.r = 0.65f;
    raw.g = 0.75f;
    raw.b = 0.95f;
    Series smooth{"smoothed", raw.x, {}, 0.05f, 0.15f, 0.6f};
    double ema = raw.y.front();
    for (double v : raw.y) {
      ema = 0.9 * ema + 0.1 * v;
      smooth.y.push_back(ema);
    }
    series = {raw, smooth};
    out = out_dir / "loss_vs_step.png";
  }
  const auto image = line_chart(series);
  std::filesystem::create_directories(out_dir);
  dataio::write_png(out, image);
  return {out};
}

}  // namespace tapnet::plot
