#include <gtest/gtest.h>
#include <torch/torch.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "desk.hpp"
#include "tapnet/checkpoint.hpp"
#include "tapnet/config.hpp"

using namespace tapnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("tapnet_config_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string config_error(const std::string& text) {
  try {
    config_from_json(nlohmann::json::parse(text));
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

ModelConfig small_model() {
  ModelConfig m;
  m.backbone.channels = {4, 8, 8, 8};
  m.head.hidden_dims = {8};
  m.head.ifi_hidden = 4;
  m.head.ifi_dim = 4;
  return m;
}

}  // namespace

TEST(Config, PublishedDefaults) {
  const RunConfig c;
  EXPECT_EQ(c.optimizer.lr, 1e-4);
  EXPECT_EQ(c.optimizer.backbone_lr, 1e-5);
  EXPECT_EQ(c.optimizer.batch, 4);
  EXPECT_EQ(c.optimizer.epochs, 500);
  EXPECT_EQ(c.loss.beta1, 2.0);
  EXPECT_EQ(c.loss.beta2, 2.0);
  EXPECT_EQ(c.loss.beta3, 0.1);
  EXPECT_EQ(c.loss.beta4, 1.0);
  EXPECT_EQ(c.loss.gamma1, 10.0);
  EXPECT_EQ(c.loss.gamma2, 2.0);
  EXPECT_EQ(c.loss.lambda1, 0.5);
  EXPECT_EQ(c.loss.lambda2, 2e-4);
  EXPECT_EQ(c.loss.lambda3, 2e-4);
  EXPECT_EQ(c.loss.lambda4, 0.2);
  EXPECT_EQ(c.loss.infonce_tau, 0.1);
  EXPECT_EQ(c.model.head.stride, 16);
  EXPECT_EQ(c.model.head.gamma, 100.0);
  EXPECT_EQ(c.aux.k_pos, 1);
  EXPECT_EQ(c.aux.k_neg, 0);
  EXPECT_EQ(c.eval.match_radius, 8.0);
  EXPECT_EQ(c.eval.tile_overlap, 32);
  EXPECT_EQ(c.eval.nms_radius, 4.0);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, JsonRoundTripIsLossless) {
  RunConfig c = tapnet::testing::desk_config("/tmp/x", 42);
  c.model.fusion = FusionMode::afdf;
  c.augment.pad_policy = dataio::PadPolicy::reflect;
  c.dataset.val_synthetic.misalignment = {-8, 8};
  c.eval.thresholds = {0.2, 0.8};
  const auto j = config_to_json(c);
  EXPECT_EQ(config_to_json(config_from_json(j)), j);
  EXPECT_EQ(j.at("fusion_mode"), "afdf");
  EXPECT_EQ(j.at("seed"), 42);
}

TEST(Config, PartialDocumentFillsDefaults) {
  const auto c = config_from_json(nlohmann::json::parse(R"({"optimizer": {"epochs": 3}})"));
  EXPECT_EQ(c.optimizer.epochs, 3);
  EXPECT_EQ(c.optimizer.lr, 1e-4);
  EXPECT_EQ(c.dataset.val_synthetic.count, 32);
}

TEST(Config, UnknownKeysNamed) {
  EXPECT_NE(config_error(R"({"optimiser": {}})").find("optimiser"), std::string::npos);
  EXPECT_NE(config_error(R"({"optimizer": {"learning_rate": 1}})").find("optimizer.learning_rate"),
            std::string::npos);
}

TEST(Config, TypeErrorsNamed) {
  EXPECT_NE(config_error(R"({"optimizer": {"batch": "four"}})").find("batch"), std::string::npos);
  EXPECT_NE(config_error(R"({"fusion_mode": "late"})").find("fusion_mode"), std::string::npos);
  EXPECT_NE(config_error(R"({"dataset": {"train_synthetic": {"n_people": [1]}}})").find("n_people"),
            std::string::npos);
}

TEST(Config, ValidationRejectsBadValues) {
  auto expect_invalid = [](auto mutate) {
    RunConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), ConfigError);
  };
  expect_invalid([](RunConfig& c) { c.optimizer.lr = 0; });
  expect_invalid([](RunConfig& c) { c.optimizer.batch = 0; });
  expect_invalid([](RunConfig& c) { c.optimizer.epochs = -1; });
  expect_invalid([](RunConfig& c) { c.augment.crop_size = 120; });
  expect_invalid([](RunConfig& c) { c.eval.thresholds = {0.5, 0.3}; });
  expect_invalid([](RunConfig& c) { c.model.head.K = 2; });
  expect_invalid([](RunConfig& c) { c.dataset.train_synthetic.n_people = {0, 400}; });
  expect_invalid([](RunConfig& c) {
    c.model.fusion = FusionMode::afdf;
    c.augment.crop_size = 256;
  });
}

TEST(Config, FileRoundTripAndEnvironmentSeed) {
  const auto dir = scratch("file");
  RunConfig c;
  c.seed = 9;
  save_config(dir / "c.json", c);
  auto back = load_config(dir / "c.json");
  EXPECT_EQ(back.seed, 9u);
  ::setenv("TAPNETLAB_SEED", "123", 1);
  apply_environment(back);
  EXPECT_EQ(back.seed, 123u);
  ::setenv("TAPNETLAB_SEED", "12x", 1);
  EXPECT_THROW(apply_environment(back), ConfigError);
  ::unsetenv("TAPNETLAB_SEED");
  std::ofstream(dir / "bad.json") << "{";
  EXPECT_THROW(load_config(dir / "bad.json"), ConfigError);
  fs::remove_all(dir);
}

TEST(Checkpoint, RoundTripReproducesForwardBitwise) {
  const auto dir = scratch("ckpt");
  RunConfig cfg;
  cfg.model = small_model();
  torch::manual_seed(1);
  TapNet model(cfg.model);
  model->eval();
  const auto rgb = torch::rand({1, 3, 32, 48});
  const auto tir = torch::rand({1, 3, 32, 48});
  torch::NoGradGuard g;
  const auto before = model->forward(rgb, tir).head;
  save_checkpoint(dir / "m.tapnet", model, nullptr, cfg, 17, 2, "state");
  const auto ckpt = read_checkpoint(dir / "m.tapnet");
  EXPECT_EQ(ckpt.step, 17);
  EXPECT_EQ(ckpt.epoch, 2);
  EXPECT_EQ(ckpt.rng_state, "state");
  EXPECT_EQ(config_to_json(ckpt.config), config_to_json(cfg));
  auto loaded = load_model(ckpt);
  const auto after = loaded->forward(rgb, tir).head;
  EXPECT_TRUE(torch::equal(before.coords, after.coords));
  EXPECT_TRUE(torch::equal(before.logits, after.logits));
  fs::remove_all(dir);
}

TEST(Checkpoint, OptimizerStateRestored) {
  const auto dir = scratch("optim");
  RunConfig cfg;
  cfg.model = small_model();
  TapNet model(cfg.model);
  torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(1e-3));
  for (int i = 0; i < 2; ++i) {
    opt.zero_grad();
    model->forward(torch::rand({1, 3, 32, 32}), torch::rand({1, 3, 32, 32})).head.logits.sum().backward();
    opt.step();
  }
  save_checkpoint(dir / "o.tapnet", model, &opt, cfg, 2, 1, "");
  const auto ckpt = read_checkpoint(dir / "o.tapnet");
  TapNet other(cfg.model);
  restore_model(other, ckpt);
  torch::optim::Adam opt2(other->parameters(), torch::optim::AdamOptions(1e-3));
  restore_optimizer(opt2, ckpt);
  const auto ps = model->parameters();
  const auto qs = other->parameters();
  int compared = 0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto it = opt.state().find(ps[i].unsafeGetTensorImpl());
    if (it == opt.state().end()) continue;
    const auto jt = opt2.state().find(qs[i].unsafeGetTensorImpl());
    ASSERT_NE(jt, opt2.state().end()) << i;
    const auto& s1 = static_cast<torch::optim::AdamParamState&>(*it->second);
    const auto& s2 = static_cast<torch::optim::AdamParamState&>(*jt->second);
    EXPECT_EQ(s1.step(), s2.step());
    EXPECT_TRUE(torch::equal(s1.exp_avg(), s2.exp_avg()));
    EXPECT_TRUE(torch::equal(s1.exp_avg_sq(), s2.exp_avg_sq()));
    ++compared;
  }
  EXPECT_GT(compared, 0);
  fs::remove_all(dir);
}

TEST(Checkpoint, CorruptFilesRejected) {
  const auto dir = scratch("corrupt");
  std::ofstream(dir / "magic.tapnet") << "NOTACKPT0000";
  EXPECT_THROW(read_checkpoint(dir / "magic.tapnet"), DataError);
  {
    std::ofstream out(dir / "version.tapnet", std::ios::binary);
    out.write("TAPNETCK", 8);
    const std::uint32_t v = 99;
    out.write(reinterpret_cast<const char*>(&v), 4);
  }
  EXPECT_THROW(read_checkpoint(dir / "version.tapnet"), DataError);
  EXPECT_THROW(read_checkpoint(dir / "missing.tapnet"), DataError);

  RunConfig cfg;
  cfg.model = small_model();
  TapNet model(cfg.model);
  save_checkpoint(dir / "full.tapnet", model, nullptr, cfg, 0, 0, "");
  const auto size = fs::file_size(dir / "full.tapnet");
  fs::copy_file(dir / "full.tapnet", dir / "short.tapnet");
  fs::resize_file(dir / "short.tapnet", size - 64);
  EXPECT_THROW(read_checkpoint(dir / "short.tapnet"), DataError);
  fs::remove_all(dir);
}

TEST(Checkpoint, ArchitectureMismatchRejected) {
  const auto dir = scratch("arch");
  RunConfig cfg;
  cfg.model = small_model();
  TapNet model(cfg.model);
  save_checkpoint(dir / "a.tapnet", model, nullptr, cfg, 0, 0, "");
  auto other_cfg = small_model();
  other_cfg.head.hidden_dims = {16};
  TapNet other(other_cfg);
  EXPECT_ANY_THROW(restore_model(other, read_checkpoint(dir / "a.tapnet")));
  fs::remove_all(dir);
}

TEST(Config, ShippedConfigsValidate) {
  int n = 0;
  for (const auto& e : fs::directory_iterator(TAPNET_CONFIG_DIR)) {
    if (e.path().extension() != ".json") continue;
    EXPECT_NO_THROW(load_config(e.path()).validate()) << e.path();
    ++n;
  }
  EXPECT_GE(n, 2);
  const auto desk = load_config(fs::path(TAPNET_CONFIG_DIR) / "desk.json");
  auto expected = tapnet::testing::desk_config(desk.output_dir, 1);
  EXPECT_EQ(config_to_json(desk), config_to_json(expected));
}
