#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <random>
#include <vector>

#include "tapnet/config.hpp"
#include "tapnet/losses.hpp"
#include "tapnet/metrics.hpp"
#include "tapnet/model.hpp"

namespace tapnet {

/// [3, H, W] float tensor from an interleaved image.
torch::Tensor image_tensor(const dataio::Image& image);

struct Batch {
  torch::Tensor rgb;  // [B, 3, H, W]
  torch::Tensor tir;
  std::vector<std::vector<Point>> points;
};

/// All samples must share one size.
Batch make_batch(const std::vector<dataio::DualImage>& samples);

/// Full objective for one batch: Hungarian matching per image, auxiliary
/// points drawn from `rng`, per-image point and auxiliary terms averaged over
/// the batch, and the adaptive-fusion terms when the model fuses with AFDF.
losses::LossTerms compute_loss(TapNet& model, const Batch& batch, const RunConfig& cfg,
                               std::mt19937_64& rng);

/// Training or validation split described by the dataset config.
std::vector<dataio::DualImage> load_split(const DatasetConfig& cfg, bool validation);

struct TrainResult {
  std::vector<losses::LossReport> log;
  std::filesystem::path checkpoint;  // last checkpoint written
};

/// Trains on `train_set`, writing config.resolved.json, loss.jsonl and
/// checkpoints under cfg.output_dir.
TrainResult train(const RunConfig& cfg, const std::vector<dataio::DualImage>& train_set);
TrainResult train(const RunConfig& cfg);

/// Proposals for one image pair. Pairs larger than the crop size, or not a
/// multiple of 16, are tiled with overlap; duplicates from different tiles
/// within the NMS radius keep the more confident proposal.
ProposalSet predict(TapNet& model, const dataio::Image& rgb, const dataio::Image& tir, const RunConfig& cfg);
std::vector<ProposalSet> predict(TapNet& model, const std::vector<dataio::DualImage>& samples,
                                 const RunConfig& cfg);

/// Throws DataError on an empty dataset.
metrics::MetricsReport evaluate_model(TapNet& model, const std::vector<dataio::DualImage>& samples,
                                      const RunConfig& cfg, double match_radius,
                                      const std::vector<double>& thresholds);

/// Copy of `rgb` with a marker drawn at every point.
dataio::Image draw_points(const dataio::Image& rgb, const std::vector<Point>& points);

}  // namespace tapnet
