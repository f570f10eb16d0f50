#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "tapnet/config.hpp"
#include "tapnet/model.hpp"

namespace tapnet {

/// Single-file container: "TAPNETCK", u32 format version, u64 manifest length,
/// JSON manifest, then raw little-endian float32 tensor blobs.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::int64_t step = 0;
  int epoch = 0;
  RunConfig config;
  /// Serialised state of the trainer's random engine.
  std::string rng_state;
  /// Model parameters and buffers keyed by module path; optimizer moments
  /// under "optim/<group>/<index>/<name>".
  std::map<std::string, torch::Tensor> tensors;
  /// Per-group, per-parameter Adam step counts and learning rates.
  nlohmann::json optimizer;
};

void save_checkpoint(const std::filesystem::path& path, TapNet& model, torch::optim::Adam* optimizer,
                     const RunConfig& config, std::int64_t step, int epoch, const std::string& rng_state);

/// Throws DataError on unreadable files, bad magic or an unsupported version.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies parameters into `model`; names and shapes must match exactly.
void restore_model(TapNet& model, const Checkpoint& ckpt);
void restore_optimizer(torch::optim::Adam& optimizer, const Checkpoint& ckpt);

/// Builds the model described by the checkpoint's config and restores it.
TapNet load_model(const Checkpoint& ckpt);

}  // namespace tapnet
