#include "tapnet/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "tapnet/errors.hpp"

namespace tapnet {

using nlohmann::json;

DatasetConfig::DatasetConfig() {
  val_synthetic.count = 32;
  val_synthetic.seed = 1;
}

namespace {

// Leaf conversions with strict JSON types.

void decode(const json& j, int& v) {
  if (!j.is_number_integer()) throw ConfigError("expected an integer");
  v = j.get<int>();
}

void decode(const json& j, std::uint64_t& v) {
  if (!j.is_number_unsigned()) throw ConfigError("expected a non-negative integer");
  v = j.get<std::uint64_t>();
}

void decode(const json& j, double& v) {
  if (!j.is_number()) throw ConfigError("expected a number");
  v = j.get<double>();
}

void decode(const json& j, bool& v) {
  if (!j.is_boolean()) throw ConfigError("expected true or false");
  v = j.get<bool>();
}

void decode(const json& j, std::string& v) {
  if (!j.is_string()) throw ConfigError("expected a string");
  v = j.get<std::string>();
}

template <typename T>
void decode(const json& j, std::vector<T>& v) {
  if (!j.is_array()) throw ConfigError("expected an array");
  v.clear();
  for (const auto& e : j) {
    T x{};
    decode(e, x);
    v.push_back(x);
  }
}

template <typename T, std::size_t N>
void decode(const json& j, std::array<T, N>& v) {
  if (!j.is_array() || j.size() != N) throw ConfigError("expected an array of " + std::to_string(N));
  for (std::size_t i = 0; i < N; ++i) decode(j[i], v[i]);
}

template <typename T>
void decode(const json& j, std::pair<T, T>& v) {
  if (!j.is_array() || j.size() != 2) throw ConfigError("expected a [low, high] pair");
  decode(j[0], v.first);
  decode(j[1], v.second);
}

template <typename T>
void decode(const json& j, dataio::Range<T>& v) {
  if (!j.is_array() || j.size() != 2) throw ConfigError("expected a [low, high] range");
  decode(j[0], v.lo);
  decode(j[1], v.hi);
}

template <typename T>
json encode(const T& v) {
  return json(v);
}

template <typename T>
json encode(const dataio::Range<T>& v) {
  return json::array({v.lo, v.hi});
}

template <typename E>
struct EnumNames;

template <>
struct EnumNames<backbone::Variant> {
  static constexpr std::array<std::pair<backbone::Variant, const char*>, 2> names{
      {{backbone::Variant::toy, "toy"}, {backbone::Variant::resnet50_like, "resnet50_like"}}};
};

template <>
struct EnumNames<Activation> {
  static constexpr std::array<std::pair<Activation, const char*>, 2> names{
      {{Activation::relu, "relu"}, {Activation::silu, "silu"}}};
};

template <>
struct EnumNames<dataio::PadPolicy> {
  static constexpr std::array<std::pair<dataio::PadPolicy, const char*>, 2> names{
      {{dataio::PadPolicy::zero, "zero"}, {dataio::PadPolicy::reflect, "reflect"}}};
};

template <typename E>
  requires std::is_enum_v<E>
void decode(const json& j, E& v) {
  if (!j.is_string()) throw ConfigError("expected a string");
  const auto s = j.get<std::string>();
  if constexpr (std::is_same_v<E, FusionMode>) {
    v = fusion_mode_from_string(s);
  } else {
    for (const auto& [value, name] : EnumNames<E>::names) {
      if (s == name) {
        v = value;
        return;
      }
    }
    throw ConfigError("unknown value '" + s + "'");
  }
}

template <typename E>
  requires std::is_enum_v<E>
json encode(const E& v) {
  if constexpr (std::is_same_v<E, FusionMode>) {
    return to_string(v);
  } else {
    for (const auto& [value, name] : EnumNames<E>::names) {
      if (value == v) return name;
    }
    return "?";
  }
}

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config '" + where() + "' must be a JSON object");
  }

  template <typename T>
  void operator()(const char* key, T& v) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      decode(j_.at(key), v);
    } catch (const ConfigError& e) {
      throw ConfigError("config key '" + path_ + key + "': " + e.what());
    }
  }

  template <typename S, typename F>
  void object(const char* key, S& s, F&& fields) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    Reader sub(j_.at(key), path_ + key + ".");
    fields(sub, s);
    sub.finish();
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + path_ + key + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "<root>" : path_.substr(0, path_.size() - 1); }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

class Writer {
 public:
  explicit Writer(json& j) : j_(j) { j_ = json::object(); }

  template <typename T>
  void operator()(const char* key, T& v) {
    j_[key] = encode(v);
  }

  template <typename S, typename F>
  void object(const char* key, S& s, F&& fields) {
    Writer sub(j_[key]);
    fields(sub, s);
  }

 private:
  json& j_;
};

// One field list per struct, shared by reading and writing.

template <typename V>
void synthetic_fields(V& v, dataio::SyntheticSpec& s) {
  v("count", s.count);
  v("width", s.width);
  v("height", s.height);
  v("n_people", s.n_people);
  v("low_light", s.low_light);
  v("misalignment", s.misalignment);
  v("head_radius_range", s.head_radius_range);
  v("noise_std", s.noise_std);
  v("min_separation", s.min_separation);
  v("n_clutter", s.n_clutter);
  v("seed", s.seed);
}

template <typename V>
void dataset_fields(V& v, DatasetConfig& d) {
  v("train_annotations", d.train_annotations);
  v("val_annotations", d.val_annotations);
  v.object("train_synthetic", d.train_synthetic, [](auto& w, auto& s) { synthetic_fields(w, s); });
  v.object("val_synthetic", d.val_synthetic, [](auto& w, auto& s) { synthetic_fields(w, s); });
  v("misaligned", d.misaligned);
}

template <typename V>
void backbone_fields(V& v, backbone::BackboneConfig& b) {
  v("channels", b.channels);
  v("strides", b.strides);
  v("weight_sharing", b.weight_sharing);
  v("variant", b.variant);
  v("bias", b.bias);
  v("extra_convs", b.extra_convs);
  v("activation", b.activation);
}

template <typename V>
void dafp_fields(V& v, dafp::DafpConfig& d) {
  v("reduction", d.reduction);
  v("alpha_init", d.alpha_init);
  v("beta_init", d.beta_init);
}

template <typename V>
void afdf_fields(V& v, afdf::AfdfConfig& a) {
  v("dim", a.dim);
  v("heads", a.heads);
  v("shared_blocks", a.shared_blocks);
  v("branch_blocks", a.branch_blocks);
  v("tau_attn", a.tau_attn);
  v("ffn_expansion", a.ffn_expansion);
  v("max_side", a.max_side);
  v("bias", a.bias);
}

template <typename V>
void head_fields(V& v, pointhead::HeadConfig& h) {
  v("stride", h.stride);
  v("K", h.K);
  v("gamma", h.gamma);
  v("hidden_dims", h.hidden_dims);
  v("pe_bands", h.pe_bands);
  v("ifi_hidden", h.ifi_hidden);
  v("ifi_dim", h.ifi_dim);
  v("latent_stride", h.latent_stride);
  v("use_ifi", h.use_ifi);
}

template <typename V>
void optimizer_fields(V& v, OptimizerConfig& o) {
  v("lr", o.lr);
  v("backbone_lr", o.backbone_lr);
  v("batch", o.batch);
  v("epochs", o.epochs);
  v("two_phase", o.two_phase);
  v("fusion_epochs", o.fusion_epochs);
}

template <typename V>
void aux_fields(V& v, matching::AuxPointConfig& a) {
  v("k_pos", a.k_pos);
  v("k_neg", a.k_neg);
  v("n_pos", a.n_pos);
  v("n_neg", a.n_neg);
}

template <typename V>
void loss_fields(V& v, losses::LossWeights& w) {
  v("beta1", w.beta1);
  v("beta2", w.beta2);
  v("beta3", w.beta3);
  v("beta4", w.beta4);
  v("gamma1", w.gamma1);
  v("gamma2", w.gamma2);
  v("lambda1", w.lambda1);
  v("lambda2", w.lambda2);
  v("lambda3", w.lambda3);
  v("lambda4", w.lambda4);
  v("decomp_alpha", w.decomp_alpha);
  v("infonce_tau", w.infonce_tau);
  v("cross_modal_correlation", w.cross_modal_correlation);
  v("decomp_in_fuse", w.decomp_in_fuse);
}

template <typename V>
void kernel_fields(V& v, kernels::KernelSpec& k) {
  v("gaussian_bandwidths", k.gaussian_bandwidths);
  v("gaussian_weights", k.gaussian_weights);
  v("laplacian_bandwidths", k.laplacian_bandwidths);
  v("laplacian_weights", k.laplacian_weights);
  v("c1", k.c1);
  v("c2", k.c2);
  v("median_heuristic", k.median_heuristic);
}

template <typename V>
void augment_fields(V& v, dataio::AugmentConfig& a) {
  v("scale_range", a.scale_range);
  v("crop_size", a.crop_size);
  v("flip_prob", a.flip_prob);
  v("tir_shift_range", a.tir_shift_range);
  v("pad_policy", a.pad_policy);
  v("crops_per_image", a.crops_per_image);
}

template <typename V>
void train_fields(V& v, TrainConfig& t) {
  v("checkpoint_every", t.checkpoint_every);
  v("threads", t.threads);
}

template <typename V>
void eval_fields(V& v, EvalConfig& e) {
  v("match_radius", e.match_radius);
  v("count_threshold", e.count_threshold);
  v("thresholds", e.thresholds);
  v("tile_overlap", e.tile_overlap);
  v("nms_radius", e.nms_radius);
  v("suppress_duplicates", e.suppress_duplicates);
}

template <typename V>
void run_fields(V& v, RunConfig& c) {
  v("fusion_mode", c.model.fusion);
  v("seed", c.seed);
  v("output_dir", c.output_dir);
  v("tau_match", c.tau_match);
  v.object("dataset", c.dataset, [](auto& w, auto& s) { dataset_fields(w, s); });
  v.object("optimizer", c.optimizer, [](auto& w, auto& s) { optimizer_fields(w, s); });
  v.object("backbone", c.model.backbone, [](auto& w, auto& s) { backbone_fields(w, s); });
  v.object("dafp", c.model.dafp, [](auto& w, auto& s) { dafp_fields(w, s); });
  v.object("afdf", c.model.afdf, [](auto& w, auto& s) { afdf_fields(w, s); });
  v.object("head", c.model.head, [](auto& w, auto& s) { head_fields(w, s); });
  v.object("aux", c.aux, [](auto& w, auto& s) { aux_fields(w, s); });
  v.object("loss", c.loss, [](auto& w, auto& s) { loss_fields(w, s); });
  v.object("kernel", c.kernel, [](auto& w, auto& s) { kernel_fields(w, s); });
  v.object("augment", c.augment, [](auto& w, auto& s) { augment_fields(w, s); });
  v.object("train", c.train, [](auto& w, auto& s) { train_fields(w, s); });
  v.object("eval", c.eval, [](auto& w, auto& s) { eval_fields(w, s); });
}

void check_density(const dataio::SyntheticSpec& s, int side, const pointhead::HeadConfig& head,
                   const char* which) {
  const long m = static_cast<long>(head.K) * (side / head.stride) * (side / head.stride);
  if (m <= s.n_people.hi) {
    throw ConfigError(std::string(which) + ": " + std::to_string(m) + " proposals per image cannot exceed " +
                      std::to_string(s.n_people.hi) + " heads; raise K or the image size");
  }
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  aux.validate();
  loss.validate();
  kernel.validate();
  augment.validate();
  if (!(optimizer.lr > 0.0) || !(optimizer.backbone_lr > 0.0)) {
    throw ConfigError("optimizer learning rates must be > 0");
  }
  if (optimizer.batch < 1) throw ConfigError("optimizer batch must be >= 1");
  if (optimizer.epochs < 0) throw ConfigError("optimizer epochs must be >= 0");
  if (optimizer.fusion_epochs < 0 || optimizer.fusion_epochs > optimizer.epochs) {
    throw ConfigError("optimizer fusion_epochs must lie in [0, epochs]");
  }
  if (!(tau_match >= 0.0)) throw ConfigError("tau_match must be >= 0");
  if (augment.crop_size % model.head.stride != 0 || augment.crop_size % 16 != 0) {
    throw ConfigError("augment crop_size must be a multiple of 16");
  }
  if (model.fusion == FusionMode::afdf && augment.crop_size > model.afdf.max_side) {
    throw ConfigError("augment crop_size exceeds afdf max_side");
  }
  if (train.threads < 1) throw ConfigError("train threads must be >= 1");
  if (train.checkpoint_every < 0) throw ConfigError("train checkpoint_every must be >= 0");
  if (!(eval.match_radius > 0.0)) throw ConfigError("eval match_radius must be > 0");
  if (!(eval.nms_radius >= 0.0) || eval.tile_overlap < 0 || eval.tile_overlap >= augment.crop_size) {
    throw ConfigError("eval tiling parameters out of range");
  }
  for (std::size_t i = 0; i < eval.thresholds.size(); ++i) {
    const double k = eval.thresholds[i];
    if (!(k > 0.0 && k < 1.0)) throw ConfigError("eval thresholds must lie in (0, 1)");
    if (i > 0 && !(k > eval.thresholds[i - 1])) throw ConfigError("eval thresholds must be ascending");
  }
  if (dataset.train_annotations.empty()) {
    dataset.train_synthetic.validate();
    check_density(dataset.train_synthetic, augment.crop_size, model.head, "train_synthetic");
  }
  if (dataset.val_annotations.empty()) {
    dataset.val_synthetic.validate();
    const int side = std::min(dataset.val_synthetic.width, dataset.val_synthetic.height);
    check_density(dataset.val_synthetic, std::min(side, augment.crop_size), model.head, "val_synthetic");
  }
}

RunConfig config_from_json(const json& j) {
  RunConfig cfg;
  Reader r(j, "");
  run_fields(r, cfg);
  r.finish();
  return cfg;
}

json config_to_json(const RunConfig& cfg) {
  json j;
  RunConfig copy = cfg;
  Writer w(j);
  run_fields(w, copy);
  return j;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void save_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << config_to_json(cfg).dump(2) << '\n';
}

void apply_environment(RunConfig& cfg) {
  const char* seed = std::getenv("TAPNETLAB_SEED");
  if (seed == nullptr || *seed == '\0') return;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(seed, &used);
    if (used != std::char_traits<char>::length(seed)) throw std::invalid_argument(seed);
    cfg.seed = v;
  } catch (const std::exception&) {
    throw ConfigError(std::string("TAPNETLAB_SEED is not a non-negative integer: ") + seed);
  }
}

}  // namespace tapnet
