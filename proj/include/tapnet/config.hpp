#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tapnet/dataio.hpp"
#include "tapnet/kernels.hpp"
#include "tapnet/losses.hpp"
#include "tapnet/matching.hpp"
#include "tapnet/model.hpp"

namespace tapnet {

struct DatasetConfig {
  /// Annotation files; when empty the synthetic specs are used.
  std::string train_annotations;
  std::string val_annotations;
  dataio::SyntheticSpec train_synthetic;
  dataio::SyntheticSpec val_synthetic;
  /// Enables the random thermal shift augmentation during training.
  bool misaligned = false;

  DatasetConfig();
};

struct OptimizerConfig {
  double lr = 1e-4;
  double backbone_lr = 1e-5;
  int batch = 4;
  int epochs = 500;
  /// AFDF only: the first `fusion_epochs` optimise the adaptive-fusion loss alone.
  bool two_phase = false;
  int fusion_epochs = 0;
};

struct TrainConfig {
  /// 0 writes only the initial and final checkpoints.
  int checkpoint_every = 0;
  int threads = 1;
};

struct EvalConfig {
  double match_radius = 8.0;
  double count_threshold = 0.5;
  std::vector<double> thresholds;  // empty: default grid
  int tile_overlap = 32;
  double nms_radius = 4.0;
  /// Apply radius NMS to every proposal; false merges only across tiles.
  bool suppress_duplicates = true;
};

struct RunConfig {
  ModelConfig model;
  DatasetConfig dataset;
  OptimizerConfig optimizer;
  matching::AuxPointConfig aux;
  double tau_match = 2e-2;
  losses::LossWeights loss;
  kernels::KernelSpec kernel;
  dataio::AugmentConfig augment;
  TrainConfig train;
  EvalConfig eval;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";

  void validate() const;
};

/// Unknown keys and ill-typed values raise ConfigError naming the key path.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& cfg);

RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& cfg);

/// Applies TAPNETLAB_SEED when set.
void apply_environment(RunConfig& cfg);

}  // namespace tapnet
