#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace tapnet::dataio {

/// Continuous image coordinate: x is the column, y the row, origin top-left.
/// Integer values sit on pixel centres.
struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

/// Interleaved H×W×C float image with values in [0, 1].
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels = 3, float fill = 0.0f);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  bool empty() const noexcept { return pixels_.empty(); }

  float& at(int y, int x, int c) { return pixels_[index(y, x, c)]; }
  float at(int y, int x, int c) const { return pixels_[index(y, x, c)]; }

  std::vector<float>& pixels() noexcept { return pixels_; }
  const std::vector<float>& pixels() const noexcept { return pixels_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<float> pixels_;
};

struct Shift {
  int dx = 0;
  int dy = 0;

  friend bool operator==(const Shift&, const Shift&) = default;
};

struct SceneMeta {
  std::uint64_t scene_seed = 0;
  Shift applied_tir_shift;
  /// Heads requested but not placed (only non-zero with allow_partial).
  int dropped = 0;

  friend bool operator==(const SceneMeta&, const SceneMeta&) = default;
};

/// Paired RGB + thermal image with head annotations in the RGB frame.
struct DualImage {
  Image rgb;
  Image tir;
  std::vector<Point> points;
  SceneMeta meta;

  int height() const noexcept { return rgb.height(); }
  int width() const noexcept { return rgb.width(); }

  /// Throws ShapeError / DataError when the pair or its points are inconsistent.
  void validate() const;

  friend bool operator==(const DualImage&, const DualImage&) = default;
};

struct SceneConfig {
  int width = 128;
  int height = 128;
  int n_people = 10;
  /// Multiplier on RGB brightness; 1 is daylight.
  double low_light_factor = 1.0;
  /// Offset of thermal blobs relative to the annotated (RGB) positions.
  Shift misalignment;
  std::pair<double, double> head_radius_range{3.0, 5.0};
  double noise_std = 0.03;
  std::uint64_t seed = 0;
  /// Minimum centre distance between two heads.
  double min_separation = 6.0;
  /// RGB-only objects; a share of them mimic head appearance.
  int n_clutter = 4;
  double decoy_fraction = 0.5;
  /// Drop heads that cannot be placed instead of failing.
  bool allow_partial = false;

  void validate() const;
};

/// Renders a synthetic dual-modal crowd scene. Deterministic in cfg.seed.
/// Throws DataError when the requested density cannot be placed.
DualImage generate_scene(const SceneConfig& cfg);

enum class PadPolicy { zero, reflect };

/// output(x, y) = input(x - dx, y - dy); out-of-range sources follow `pad`.
Image spatial_random_shift(const Image& tir, int dx, int dy, PadPolicy pad);

/// Draws (dx, dy) uniformly from [-range, range]² and shifts the thermal
/// image of `sample`, recording the shift in its metadata.
DualImage random_tir_shift(const DualImage& sample, int range, PadPolicy pad,
                           std::mt19937_64& rng);

struct AugmentConfig {
  std::pair<double, double> scale_range{0.7, 1.3};
  int crop_size = 128;
  double flip_prob = 0.5;
  int tir_shift_range = 10;
  PadPolicy pad_policy = PadPolicy::zero;
  int crops_per_image = 4;

  void validate() const;
};

/// Concrete draw of the large-scale-jitter transform.
struct JitterParams {
  double scale = 1.0;
  int crop_x = 0;
  int crop_y = 0;
  bool flip = false;
};

/// Draws jitter parameters for an image of the given size. The effective scale
/// is raised so the shorter side stays at least max(128, crop_size).
JitterParams sample_jitter(int height, int width, const AugmentConfig& cfg,
                           std::mt19937_64& rng);

/// Applies a fixed jitter: bilinear rescale, crop, optional horizontal flip.
/// Points leaving the crop are dropped. Throws ShapeError if the scaled image
/// cannot hold the crop.
DualImage apply_jitter(const DualImage& sample, const JitterParams& params,
                       int crop_size);

DualImage lsj_augment(const DualImage& sample, const AugmentConfig& cfg,
                      std::mt19937_64& rng);

/// Bilinear resize with half-pixel centres.
Image resize_bilinear(const Image& image, int out_height, int out_width);

// ---------------------------------------------------------------------------
// Annotation files and images on disk.

struct AnnotationRecord {
  std::string id;
  std::string rgb;
  std::string tir;
  std::vector<Point> points;
  std::optional<std::vector<Point>> points_tir;

  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

std::vector<AnnotationRecord> parse_annotations(const std::string& json_text);
std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path);
std::string dump_annotations(const std::vector<AnnotationRecord>& records);
void save_annotations(const std::filesystem::path& path,
                      const std::vector<AnnotationRecord>& records);

/// 8-bit PNG (gray, RGB, RGBA or palette) to a 3-channel [0,1] image.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

/// Loads every record of an annotation file with its images. Image paths are
/// resolved relative to the annotation file's directory.
std::vector<DualImage> load_dataset(const std::filesystem::path& annotation_file);

/// Writes rgb/<id>.png, tir/<id>.png and annotations.json under `dir`.
std::filesystem::path write_dataset(const std::filesystem::path& dir,
                                    const std::vector<DualImage>& samples);

// ---------------------------------------------------------------------------
// Synthetic datasets.

template <typename T>
struct Range {
  T lo{};
  T hi{};
};

struct SyntheticSpec {
  int count = 200;
  int width = 128;
  int height = 128;
  Range<int> n_people{0, 20};
  Range<double> low_light{0.3, 1.0};
  /// Per-axis thermal misalignment, drawn uniformly from [lo, hi].
  Range<int> misalignment{0, 0};
  std::pair<double, double> head_radius_range{3.0, 5.0};
  double noise_std = 0.03;
  double min_separation = 6.0;
  int n_clutter = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Mixes a base seed with a stream index (splitmix64 finaliser).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

std::vector<DualImage> generate_dataset(const SyntheticSpec& spec);

}  // namespace tapnet::dataio
