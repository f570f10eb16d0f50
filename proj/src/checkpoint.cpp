#include "tapnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "tapnet/errors.hpp"

namespace tapnet {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

namespace {

constexpr char kMagic[8] = {'T', 'A', 'P', 'N', 'E', 'T', 'C', 'K'};

std::map<std::string, torch::Tensor> model_tensors(TapNet& model) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& p : model->named_parameters()) out[p.key()] = p.value();
  for (const auto& b : model->named_buffers()) out[b.key()] = b.value();
  return out;
}

std::string optim_key(std::size_t group, std::size_t index, const char* name) {
  return "optim/" + std::to_string(group) + "/" + std::to_string(index) + "/" + name;
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw DataError("checkpoint " + path.string() + " is truncated");
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, TapNet& model, torch::optim::Adam* optimizer,
                     const RunConfig& config, std::int64_t step, int epoch, const std::string& rng_state) {
  auto tensors = model_tensors(model);
  nlohmann::json optim = nlohmann::json::array();
  if (optimizer != nullptr) {
    auto& state = optimizer->state();
    const auto& groups = optimizer->param_groups();
    for (std::size_t g = 0; g < groups.size(); ++g) {
      nlohmann::json group;
      group["lr"] = static_cast<const torch::optim::AdamOptions&>(groups[g].options()).lr();
      group["params"] = nlohmann::json::array();
      for (std::size_t i = 0; i < groups[g].params().size(); ++i) {
        const auto it = state.find(groups[g].params()[i].unsafeGetTensorImpl());
        if (it == state.end()) {
          group["params"].push_back(nullptr);
          continue;
        }
        const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
        group["params"].push_back({{"step", s.step()}});
        tensors[optim_key(g, i, "exp_avg")] = s.exp_avg();
        tensors[optim_key(g, i, "exp_avg_sq")] = s.exp_avg_sq();
      }
      optim.push_back(group);
    }
  }

  nlohmann::json manifest;
  manifest["step"] = step;
  manifest["epoch"] = epoch;
  manifest["config"] = config_to_json(config);
  manifest["rng_state"] = rng_state;
  manifest["optimizer"] = optim;
  manifest["tensors"] = nlohmann::json::array();
  std::vector<torch::Tensor> blobs;
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    auto c = t.detach().to(torch::kCPU, torch::kFloat).contiguous();
    manifest["tensors"].push_back({{"name", name}, {"shape", c.sizes().vec()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(c.numel()) * sizeof(float);
    blobs.push_back(std::move(c));
  }
  const std::string text = manifest.dump();

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic));
    write_pod(out, kCheckpointVersion);
    write_pod(out, static_cast<std::uint64_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& b : blobs) {
      out.write(reinterpret_cast<const char*>(b.data_ptr<float>()),
                static_cast<std::streamsize>(b.numel() * sizeof(float)));
    }
    if (!out) throw DataError("failed while writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw DataError(path.string() + " is not a checkpoint file");
  }
  Checkpoint ckpt;
  ckpt.version = read_pod<std::uint32_t>(in, path);
  if (ckpt.version != kCheckpointVersion) {
    throw DataError("checkpoint " + path.string() + " has format version " + std::to_string(ckpt.version) +
                    ", expected " + std::to_string(kCheckpointVersion));
  }
  const auto length = read_pod<std::uint64_t>(in, path);
  std::string text(length, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(length))) {
    throw DataError("checkpoint " + path.string() + " is truncated");
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
    ckpt.step = manifest.at("step").get<std::int64_t>();
    ckpt.epoch = manifest.at("epoch").get<int>();
    ckpt.rng_state = manifest.at("rng_state").get<std::string>();
    ckpt.optimizer = manifest.at("optimizer");
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + path.string() + " has a malformed manifest: " + e.what());
  }
  ckpt.config = config_from_json(manifest.at("config"));
  const auto base = in.tellg();
  for (const auto& entry : manifest.at("tensors")) {
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    auto t = torch::empty(shape, torch::kFloat);
    in.seekg(base + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    if (!in.read(reinterpret_cast<char*>(t.data_ptr<float>()),
                 static_cast<std::streamsize>(t.numel() * sizeof(float)))) {
      throw DataError("checkpoint " + path.string() + " is truncated");
    }
    ckpt.tensors[entry.at("name").get<std::string>()] = t;
  }
  return ckpt;
}

void restore_model(TapNet& model, const Checkpoint& ckpt) {
  torch::NoGradGuard guard;
  for (auto& [name, t] : model_tensors(model)) {
    const auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw DataError("checkpoint lacks tensor '" + name + "'");
    if (it->second.sizes() != t.sizes()) {
      throw DataError("checkpoint tensor '" + name + "' has shape " + shape_string(it->second) +
                      ", model expects " + shape_string(t));
    }
    t.copy_(it->second);
  }
}

void restore_optimizer(torch::optim::Adam& optimizer, const Checkpoint& ckpt) {
  auto& groups = optimizer.param_groups();
  if (ckpt.optimizer.size() != groups.size()) throw DataError("checkpoint optimizer groups do not match");
  auto& state = optimizer.state();
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& params = ckpt.optimizer[g].at("params");
    if (params.size() != groups[g].params().size()) {
      throw DataError("checkpoint optimizer group " + std::to_string(g) + " has a different size");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].is_null()) continue;
      auto s = std::make_unique<torch::optim::AdamParamState>();
      s->step(params[i].at("step").get<std::int64_t>());
      s->exp_avg(ckpt.tensors.at(optim_key(g, i, "exp_avg")).clone());
      s->exp_avg_sq(ckpt.tensors.at(optim_key(g, i, "exp_avg_sq")).clone());
      state[groups[g].params()[i].unsafeGetTensorImpl()] = std::move(s);
    }
  }
}

TapNet load_model(const Checkpoint& ckpt) {
  TapNet model(ckpt.config.model);
  restore_model(model, ckpt);
  model->eval();
  return model;
}

}  // namespace tapnet
