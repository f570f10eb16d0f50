#include "tapnet/dataio.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "tapnet/errors.hpp"

namespace tapnet::dataio {

using nlohmann::json;

Image::Image(int height, int width, int channels, float fill)
    : height_(height), width_(width), channels_(channels) {
  if (height < 0 || width < 0 || channels <= 0) {
    throw ShapeError("image dimensions must be non-negative");
  }
  pixels_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

void DualImage::validate() const {
  if (rgb.height() != tir.height() || rgb.width() != tir.width()) {
    throw ShapeError("rgb and tir images differ in size: " + std::to_string(rgb.height()) +
                     "x" + std::to_string(rgb.width()) + " vs " +
                     std::to_string(tir.height()) + "x" + std::to_string(tir.width()));
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (!(p.x >= 0.0 && p.x < rgb.width() && p.y >= 0.0 && p.y < rgb.height())) {
      throw DataError("point " + std::to_string(i) + " (" + std::to_string(p.x) + ", " +
                      std::to_string(p.y) + ") lies outside the image");
    }
  }
}

void SceneConfig::validate() const {
  if (width < 64 || height < 64) throw ConfigError("scene width and height must be >= 64");
  if (n_people < 0) throw ConfigError("n_people must be >= 0");
  if (!(low_light_factor >= 0.0 && low_light_factor <= 1.0)) {
    throw ConfigError("low_light_factor must lie in [0, 1]");
  }
  if (!(head_radius_range.first > 0.0 && head_radius_range.first <= head_radius_range.second)) {
    throw ConfigError("head_radius_range must satisfy 0 < min <= max");
  }
  if (noise_std < 0.0) throw ConfigError("noise_std must be >= 0");
  if (min_separation < 0.0) throw ConfigError("min_separation must be >= 0");
  if (n_clutter < 0) throw ConfigError("n_clutter must be >= 0");
  if (!(decoy_fraction >= 0.0 && decoy_fraction <= 1.0)) {
    throw ConfigError("decoy_fraction must lie in [0, 1]");
  }
}

namespace {

struct Wave {
  double kx, ky, phase, amplitude;
};

std::vector<Wave> random_waves(std::mt19937_64& rng, int count, double amplitude, int size) {
  std::uniform_real_distribution<double> freq(0.5, 3.0);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> amp(0.3, 1.0);
  std::vector<Wave> waves;
  for (int i = 0; i < count; ++i) {
    const double f = freq(rng) * 2.0 * std::numbers::pi / size;
    const double a = angle(rng);
    waves.push_back({f * std::cos(a), f * std::sin(a), angle(rng), amplitude * amp(rng)});
  }
  return waves;
}

double eval_waves(const std::vector<Wave>& waves, double x, double y) {
  double v = 0.0;
  for (const auto& w : waves) v += w.amplitude * std::sin(w.kx * x + w.ky * y + w.phase);
  return v;
}

/// Alpha-blends a Gaussian-profiled colour into the image.
void blend_blob(Image& img, double cx, double cy, double sigma,
                const std::array<double, 3>& colour, double opacity) {
  const int reach = static_cast<int>(std::ceil(3.5 * sigma));
  const int x0 = std::max(0, static_cast<int>(std::floor(cx)) - reach);
  const int x1 = std::min(img.width() - 1, static_cast<int>(std::ceil(cx)) + reach);
  const int y0 = std::max(0, static_cast<int>(std::floor(cy)) - reach);
  const int y1 = std::min(img.height() - 1, static_cast<int>(std::ceil(cy)) + reach);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
      const double a = opacity * std::exp(-d2 * inv);
      for (int c = 0; c < img.channels(); ++c) {
        float& px = img.at(y, x, c);
        px = static_cast<float>(px * (1.0 - a) + colour[c] * a);
      }
    }
  }
}

/// Adds a Gaussian bump to every channel.
void add_blob(Image& img, double cx, double cy, double sigma, double amplitude) {
  const int reach = static_cast<int>(std::ceil(3.5 * sigma));
  const int x0 = std::max(0, static_cast<int>(std::floor(cx)) - reach);
  const int x1 = std::min(img.width() - 1, static_cast<int>(std::ceil(cx)) + reach);
  const int y0 = std::max(0, static_cast<int>(std::floor(cy)) - reach);
  const int y1 = std::min(img.height() - 1, static_cast<int>(std::ceil(cy)) + reach);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
      const auto v = static_cast<float>(amplitude * std::exp(-d2 * inv));
      for (int c = 0; c < img.channels(); ++c) img.at(y, x, c) += v;
    }
  }
}

void add_noise_and_clamp(Image& img, double noise_std, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, noise_std > 0.0 ? noise_std : 1.0);
  for (auto& v : img.pixels()) {
    double x = v;
    if (noise_std > 0.0) x += noise(rng);
    v = static_cast<float>(std::clamp(x, 0.0, 1.0));
  }
}

constexpr std::array<std::array<double, 3>, 4> kHeadPalette{{
    {0.10, 0.08, 0.06},  // dark hair
    {0.85, 0.66, 0.52},  // skin
    {0.20, 0.20, 0.55},  // blue cap
    {0.75, 0.15, 0.12},  // red cap
}};

}  // namespace

DualImage generate_scene(const SceneConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  DualImage scene;
  scene.meta.scene_seed = cfg.seed;
  scene.meta.applied_tir_shift = {};

  // Head placement by rejection sampling with a per-head retry budget.
  constexpr int kRetryBudget = 2000;
  const double margin = 1.0;
  std::uniform_real_distribution<double> ux(margin, cfg.width - 1.0 - margin);
  std::uniform_real_distribution<double> uy(margin, cfg.height - 1.0 - margin);
  const double sep2 = cfg.min_separation * cfg.min_separation;
  for (int i = 0; i < cfg.n_people; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kRetryBudget && !placed; ++attempt) {
      const Point p{ux(rng), uy(rng)};
      const bool clear = std::none_of(scene.points.begin(), scene.points.end(), [&](const Point& q) {
        return (p.x - q.x) * (p.x - q.x) + (p.y - q.y) * (p.y - q.y) < sep2;
      });
      if (clear) {
        scene.points.push_back(p);
        placed = true;
      }
    }
    if (!placed) {
      if (!cfg.allow_partial) {
        throw DataError("over-dense scene request: could not place head " + std::to_string(i) +
                        " of " + std::to_string(cfg.n_people) + " with min_separation " +
                        std::to_string(cfg.min_separation));
      }
      ++scene.meta.dropped;
    }
  }

  const int size = std::max(cfg.width, cfg.height);
  std::uniform_real_distribution<double> radius(cfg.head_radius_range.first,
                                                cfg.head_radius_range.second);

  // Visible frame: textured background, clutter, heads, then global dimming.
  Image rgb(cfg.height, cfg.width, 3);
  std::array<double, 3> base{};
  for (auto& b : base) b = 0.3 + 0.3 * unit(rng);
  std::array<std::vector<Wave>, 3> texture;
  for (auto& t : texture) t = random_waves(rng, 3, 0.06, size);
  for (int y = 0; y < cfg.height; ++y) {
    for (int x = 0; x < cfg.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        rgb.at(y, x, c) = static_cast<float>(base[c] + eval_waves(texture[c], x, y));
      }
    }
  }
  for (int i = 0; i < cfg.n_clutter; ++i) {
    const double cx = unit(rng) * (cfg.width - 1);
    const double cy = unit(rng) * (cfg.height - 1);
    if (unit(rng) < cfg.decoy_fraction) {
      const auto& colour = kHeadPalette[static_cast<std::size_t>(unit(rng) * kHeadPalette.size()) %
                                        kHeadPalette.size()];
      blend_blob(rgb, cx, cy, 0.5 * radius(rng), colour, 0.9);
    } else {
      const std::array<double, 3> colour{unit(rng), unit(rng), unit(rng)};
      blend_blob(rgb, cx, cy, 2.0 + 4.0 * unit(rng), colour, 0.8);
    }
  }
  std::vector<double> head_sigma;
  for (const auto& p : scene.points) {
    const double sigma = 0.5 * radius(rng);
    head_sigma.push_back(sigma);
    const auto& colour =
        kHeadPalette[static_cast<std::size_t>(unit(rng) * kHeadPalette.size()) % kHeadPalette.size()];
    blend_blob(rgb, p.x, p.y, sigma, colour, 0.9);
  }
  for (auto& v : rgb.pixels()) v = static_cast<float>(v * cfg.low_light_factor);

  // Thermal frame: cool background, a few warm patches, heads displaced by
  // the configured misalignment.
  Image tir(cfg.height, cfg.width, 3);
  const double tir_base = 0.15 + 0.1 * unit(rng);
  const auto tir_texture = random_waves(rng, 2, 0.03, size);
  for (int y = 0; y < cfg.height; ++y) {
    for (int x = 0; x < cfg.width; ++x) {
      const auto v = static_cast<float>(tir_base + eval_waves(tir_texture, x, y));
      for (int c = 0; c < 3; ++c) tir.at(y, x, c) = v;
    }
  }
  for (int i = 0; i < 2; ++i) {
    const double cx = unit(rng) * (cfg.width - 1);
    const double cy = unit(rng) * (cfg.height - 1);
    add_blob(tir, cx, cy, 10.0 + 10.0 * unit(rng), 0.12 * unit(rng));
  }
  for (std::size_t i = 0; i < scene.points.size(); ++i) {
    const auto& p = scene.points[i];
    const double amplitude = 0.5 + 0.2 * unit(rng);
    add_blob(tir, p.x + cfg.misalignment.dx, p.y + cfg.misalignment.dy, head_sigma[i], amplitude);
  }

  add_noise_and_clamp(rgb, cfg.noise_std, rng);
  add_noise_and_clamp(tir, cfg.noise_std, rng);

  scene.rgb = std::move(rgb);
  scene.tir = std::move(tir);
  return scene;
}

namespace {

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

Image spatial_random_shift(const Image& tir, int dx, int dy, PadPolicy pad) {
  Image out(tir.height(), tir.width(), tir.channels());
  for (int y = 0; y < tir.height(); ++y) {
    for (int x = 0; x < tir.width(); ++x) {
      int sx = x - dx;
      int sy = y - dy;
      const bool inside = sx >= 0 && sx < tir.width() && sy >= 0 && sy < tir.height();
      if (!inside) {
        if (pad == PadPolicy::zero) continue;
        sx = reflect_index(sx, tir.width());
        sy = reflect_index(sy, tir.height());
      }
      for (int c = 0; c < tir.channels(); ++c) out.at(y, x, c) = tir.at(sy, sx, c);
    }
  }
  return out;
}

DualImage random_tir_shift(const DualImage& sample, int range, PadPolicy pad,
                           std::mt19937_64& rng) {
  if (range < 0) throw ConfigError("tir shift range must be >= 0");
  std::uniform_int_distribution<int> shift(-range, range);
  const int dx = shift(rng);
  const int dy = shift(rng);
  DualImage out = sample;
  out.tir = spatial_random_shift(sample.tir, dx, dy, pad);
  out.meta.applied_tir_shift = {dx, dy};
  return out;
}

void AugmentConfig::validate() const {
  if (!(scale_range.first > 0.0 && scale_range.first <= scale_range.second)) {
    throw ConfigError("augment scale_range must satisfy 0 < lo <= hi");
  }
  if (crop_size < 64) throw ConfigError("augment crop_size must be >= 64");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ConfigError("flip_prob must lie in [0, 1]");
  if (tir_shift_range < 0) throw ConfigError("tir_shift_range must be >= 0");
  if (crops_per_image < 1) throw ConfigError("crops_per_image must be >= 1");
}

Image resize_bilinear(const Image& image, int out_height, int out_width) {
  if (out_height <= 0 || out_width <= 0) throw ShapeError("resize target must be positive");
  if (out_height == image.height() && out_width == image.width()) return image;
  Image out(out_height, out_width, image.channels());
  const double sy = static_cast<double>(image.height()) / out_height;
  const double sx = static_cast<double>(image.width()) / out_width;
  for (int y = 0; y < out_height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width() - 1);
      const double wx = fx - x0;
      for (int c = 0; c < image.channels(); ++c) {
        const double top = image.at(y0, x0, c) * (1 - wx) + image.at(y0, x1, c) * wx;
        const double bottom = image.at(y1, x0, c) * (1 - wx) + image.at(y1, x1, c) * wx;
        out.at(y, x, c) = static_cast<float>(top * (1 - wy) + bottom * wy);
      }
    }
  }
  return out;
}

JitterParams sample_jitter(int height, int width, const AugmentConfig& cfg,
                           std::mt19937_64& rng) {
  cfg.validate();
  std::uniform_real_distribution<double> scale(cfg.scale_range.first, cfg.scale_range.second);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  JitterParams p;
  const double min_side = std::max(128, cfg.crop_size);
  p.scale = std::max(scale(rng), min_side / std::min(height, width));
  const int sh = static_cast<int>(std::lround(height * p.scale));
  const int sw = static_cast<int>(std::lround(width * p.scale));
  if (sh < cfg.crop_size || sw < cfg.crop_size) {
    throw ShapeError("scaled image smaller than crop size");
  }
  p.crop_x = std::uniform_int_distribution<int>(0, sw - cfg.crop_size)(rng);
  p.crop_y = std::uniform_int_distribution<int>(0, sh - cfg.crop_size)(rng);
  p.flip = unit(rng) < cfg.flip_prob;
  return p;
}

namespace {

Image crop_and_flip(const Image& src, int x0, int y0, int size, bool flip) {
  Image out(size, size, src.channels());
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const int sx = flip ? x0 + size - 1 - x : x0 + x;
      for (int c = 0; c < src.channels(); ++c) out.at(y, x, c) = src.at(y0 + y, sx, c);
    }
  }
  return out;
}

}  // namespace

DualImage apply_jitter(const DualImage& sample, const JitterParams& params, int crop_size) {
  sample.validate();
  const int sh = static_cast<int>(std::lround(sample.height() * params.scale));
  const int sw = static_cast<int>(std::lround(sample.width() * params.scale));
  if (sh < crop_size || sw < crop_size) {
    throw ShapeError("scaled image " + std::to_string(sh) + "x" + std::to_string(sw) +
                     " is smaller than crop size " + std::to_string(crop_size));
  }
  if (params.crop_x < 0 || params.crop_y < 0 || params.crop_x + crop_size > sw ||
      params.crop_y + crop_size > sh) {
    throw ShapeError("crop window exceeds the scaled image");
  }
  DualImage out;
  out.meta = sample.meta;
  out.rgb = crop_and_flip(resize_bilinear(sample.rgb, sh, sw), params.crop_x, params.crop_y,
                          crop_size, params.flip);
  out.tir = crop_and_flip(resize_bilinear(sample.tir, sh, sw), params.crop_x, params.crop_y,
                          crop_size, params.flip);
  const double fx = static_cast<double>(sw) / sample.width();
  const double fy = static_cast<double>(sh) / sample.height();
  const double last = crop_size - 1.0;
  for (const auto& p : sample.points) {
    double x = (p.x + 0.5) * fx - 0.5 - params.crop_x;
    const double y = (p.y + 0.5) * fy - 0.5 - params.crop_y;
    if (x < 0.0 || x > last || y < 0.0 || y > last) continue;
    if (params.flip) x = last - x;
    out.points.push_back({x, y});
  }
  return out;
}

DualImage lsj_augment(const DualImage& sample, const AugmentConfig& cfg, std::mt19937_64& rng) {
  const auto params = sample_jitter(sample.height(), sample.width(), cfg, rng);
  return apply_jitter(sample, params, cfg.crop_size);
}

// ---------------------------------------------------------------------------

namespace {

std::vector<Point> parse_points(const json& arr, const std::string& where, const char* field) {
  if (!arr.is_array()) throw DataError(where + ": field '" + field + "' must be an array");
  std::vector<Point> points;
  points.reserve(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& p = arr[i];
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
      throw DataError(where + ": " + field + "[" + std::to_string(i) + "] must be [x, y]");
    }
    const Point pt{p[0].get<double>(), p[1].get<double>()};
    if (!std::isfinite(pt.x) || !std::isfinite(pt.y) || pt.x < 0.0 || pt.y < 0.0) {
      throw DataError(where + ": " + field + "[" + std::to_string(i) +
                      "] has a negative or non-finite coordinate");
    }
    points.push_back(pt);
  }
  return points;
}

json points_json(const std::vector<Point>& points) {
  json arr = json::array();
  for (const auto& p : points) arr.push_back({p.x, p.y});
  return arr;
}

}  // namespace

std::vector<AnnotationRecord> parse_annotations(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("malformed annotation JSON: ") + e.what());
  }
  if (!doc.is_array()) throw DataError("annotation file must hold a top-level array");
  std::vector<AnnotationRecord> records;
  records.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& r = doc[i];
    std::string where = "annotation record " + std::to_string(i);
    if (!r.is_object()) throw DataError(where + ": not an object");
    if (r.contains("id") && r["id"].is_string()) where += " ('" + r["id"].get<std::string>() + "')";
    for (const char* field : {"id", "rgb", "tir"}) {
      if (!r.contains(field) || !r[field].is_string()) {
        throw DataError(where + ": missing string field '" + field + "'");
      }
    }
    if (!r.contains("points")) throw DataError(where + ": missing field 'points'");
    AnnotationRecord rec;
    rec.id = r["id"].get<std::string>();
    rec.rgb = r["rgb"].get<std::string>();
    rec.tir = r["tir"].get<std::string>();
    rec.points = parse_points(r["points"], where, "points");
    if (r.contains("points_tir") && !r["points_tir"].is_null()) {
      rec.points_tir = parse_points(r["points_tir"], where, "points_tir");
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open annotation file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_annotations(ss.str());
}

std::string dump_annotations(const std::vector<AnnotationRecord>& records) {
  json doc = json::array();
  for (const auto& r : records) {
    json j{{"id", r.id}, {"rgb", r.rgb}, {"tir", r.tir}, {"points", points_json(r.points)}};
    if (r.points_tir) j["points_tir"] = points_json(*r.points_tir);
    doc.push_back(std::move(j));
  }
  return doc.dump(1);
}

void save_annotations(const std::filesystem::path& path,
                      const std::vector<AnnotationRecord>& records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write annotation file " + path.string());
  out << dump_annotations(records) << '\n';
}

Image read_png(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw DataError("cannot read PNG " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw DataError("cannot decode PNG " + path.string() + ": " + msg);
  }
  Image img(static_cast<int>(png.height), static_cast<int>(png.width), 3);
  for (std::size_t i = 0; i < buffer.size(); ++i) img.pixels()[i] = buffer[i] / 255.0f;
  return img;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels() != 3 && image.channels() != 1) {
    throw ShapeError("PNG export supports 1 or 3 channels");
  }
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width());
  png.height = static_cast<png_uint_32>(image.height());
  png.format = image.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(image.pixels().size());
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    buffer[i] = static_cast<png_byte>(std::lround(std::clamp(image.pixels()[i], 0.0f, 1.0f) * 255.0f));
  }
  if (!png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw DataError("cannot write PNG " + path.string() + ": " + png.message);
  }
}

std::vector<DualImage> load_dataset(const std::filesystem::path& annotation_file) {
  const auto records = load_annotations(annotation_file);
  const auto root = annotation_file.parent_path();
  std::vector<DualImage> samples;
  samples.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    DualImage s;
    s.rgb = read_png(root / r.rgb);
    s.tir = read_png(root / r.tir);
    s.points = r.points;
    s.meta.scene_seed = i;
    try {
      s.validate();
    } catch (const std::exception& e) {
      throw DataError("annotation record " + std::to_string(i) + " ('" + r.id + "'): " + e.what());
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

std::filesystem::path write_dataset(const std::filesystem::path& dir,
                                    const std::vector<DualImage>& samples) {
  std::filesystem::create_directories(dir / "rgb");
  std::filesystem::create_directories(dir / "tir");
  std::vector<AnnotationRecord> records;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "%06zu", i);
    AnnotationRecord r;
    r.id = id;
    r.rgb = "rgb/" + r.id + ".png";
    r.tir = "tir/" + r.id + ".png";
    r.points = samples[i].points;
    write_png(dir / r.rgb, samples[i].rgb);
    write_png(dir / r.tir, samples[i].tir);
    records.push_back(std::move(r));
  }
  const auto path = dir / "annotations.json";
  save_annotations(path, records);
  return path;
}

void SyntheticSpec::validate() const {
  if (count < 0) throw ConfigError("synthetic count must be >= 0");
  if (width < 64 || height < 64) throw ConfigError("synthetic width and height must be >= 64");
  if (n_people.lo < 0 || n_people.lo > n_people.hi) {
    throw ConfigError("synthetic n_people range must satisfy 0 <= lo <= hi");
  }
  if (!(low_light.lo >= 0.0 && low_light.lo <= low_light.hi && low_light.hi <= 1.0)) {
    throw ConfigError("synthetic low_light range must lie in [0, 1] with lo <= hi");
  }
  if (misalignment.lo > misalignment.hi) throw ConfigError("misalignment range must satisfy lo <= hi");
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::vector<DualImage> generate_dataset(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<DualImage> samples;
  samples.reserve(spec.count);
  for (int i = 0; i < spec.count; ++i) {
    const auto seed = derive_seed(spec.seed, static_cast<std::uint64_t>(i));
    std::mt19937_64 rng(seed);
    SceneConfig cfg;
    cfg.width = spec.width;
    cfg.height = spec.height;
    cfg.n_people = std::uniform_int_distribution<int>(spec.n_people.lo, spec.n_people.hi)(rng);
    cfg.low_light_factor =
        std::uniform_real_distribution<double>(spec.low_light.lo, spec.low_light.hi)(rng);
    std::uniform_int_distribution<int> shift(spec.misalignment.lo, spec.misalignment.hi);
    cfg.misalignment.dx = shift(rng);
    cfg.misalignment.dy = shift(rng);
    cfg.head_radius_range = spec.head_radius_range;
    cfg.noise_std = spec.noise_std;
    cfg.min_separation = spec.min_separation;
    cfg.n_clutter = spec.n_clutter;
    cfg.seed = derive_seed(seed, 1);
    samples.push_back(generate_scene(cfg));
  }
  return samples;
}

}  // namespace tapnet::dataio
