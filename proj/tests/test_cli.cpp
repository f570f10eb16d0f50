#include <gtest/gtest.h>

#include <json.hpp>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>
#include <unistd.h>

#include "desk.hpp"
#include "tapnet/config.hpp"

using namespace tapnet;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(TAPNETLAB_BIN) + " " + args + " 2>/dev/null";
  Run r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe) != nullptr) r.out += buf.data();
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("tapnet_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    auto cfg = tapnet::testing::tiny_config(dir_ / "run", 2, 1);
    save_config(dir_ / "tiny.json", cfg);
    trained_ = run("train --config " + (dir_ / "tiny.json").string()).code;
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static fs::path dir_;
  static int trained_;
};

fs::path Cli::dir_;
int Cli::trained_ = -1;

}  // namespace

TEST_F(Cli, MissingSubcommandIsUsageError) { EXPECT_EQ(run("").code, 2); }

TEST_F(Cli, UnknownOptionIsUsageError) { EXPECT_EQ(run("evaluate --bogus 1").code, 2); }

TEST_F(Cli, ConfigErrorsExitTwo) {
  std::ofstream(dir_ / "bad.json") << R"({"optimizer": {"lr": -1}})";
  EXPECT_EQ(run("train --config " + (dir_ / "bad.json").string()).code, 2);
  std::ofstream(dir_ / "unknown.json") << R"({"optimiser": {}})";
  EXPECT_EQ(run("train --config " + (dir_ / "unknown.json").string()).code, 2);
  EXPECT_EQ(run("train --config " + (dir_ / "nope.json").string()).code, 2);
}

TEST_F(Cli, TrainWritesArtifacts) {
  ASSERT_EQ(trained_, 0);
  for (const char* f : {"config.resolved.json", "loss.jsonl", "initial.tapnet", "final.tapnet", "val_metrics.json"}) {
    EXPECT_TRUE(fs::exists(dir_ / "run" / f)) << f;
  }
}

TEST_F(Cli, EvaluatePrintsReport) {
  ASSERT_EQ(trained_, 0);
  ASSERT_EQ(run("gen-data --config " + (dir_ / "tiny.json").string() + " --out " + (dir_ / "data").string()).code, 0);
  const auto ckpt = (dir_ / "run" / "final.tapnet").string();
  const auto r = run("evaluate --checkpoint " + ckpt + " --data " + (dir_ / "data" / "val").string() +
                     " --match-radius 6 --thresholds 0.3 0.6 --out " + (dir_ / "m.json").string());
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j.at("match_radius"), 6.0);
  EXPECT_EQ(j.at("per_threshold").size(), 3u);
  EXPECT_TRUE(fs::exists(dir_ / "m.json"));
  EXPECT_EQ(run("plot --in " + (dir_ / "m.json").string() + " --out " + (dir_ / "figs").string()).code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "figs" / "f1_vs_threshold.png"));
}

TEST_F(Cli, EvaluateOnMissingDataIsDataError) {
  ASSERT_EQ(trained_, 0);
  const auto ckpt = (dir_ / "run" / "final.tapnet").string();
  EXPECT_EQ(run("evaluate --checkpoint " + ckpt + " --data " + (dir_ / "nothing").string()).code, 3);
  std::ofstream(dir_ / "junk.tapnet") << "junk";
  EXPECT_EQ(run("evaluate --checkpoint " + (dir_ / "junk.tapnet").string() + " --data " + dir_.string()).code, 3);
  std::ofstream(dir_ / "empty.json") << "[]";
  EXPECT_EQ(run("evaluate --checkpoint " + ckpt + " --data " + (dir_ / "empty.json").string()).code, 3);
}

TEST_F(Cli, InferEmitsConsistentJson) {
  ASSERT_EQ(trained_, 0);
  ASSERT_EQ(run("gen-data --config " + (dir_ / "tiny.json").string() + " --out " + (dir_ / "pair").string()).code, 0);
  const auto ckpt = (dir_ / "run" / "final.tapnet").string();
  const auto rgb = (dir_ / "pair" / "val" / "rgb").string();
  const auto tir = (dir_ / "pair" / "val" / "tir").string();
  const auto first = fs::directory_iterator(rgb)->path().filename().string();
  const auto base = "infer --checkpoint " + ckpt + " --rgb " + rgb + "/" + first + " --tir " + tir + "/" + first;
  const auto r = run(base + " --conf 0.0 --out " + (dir_ / "inf").string());
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j.at("count"), j.at("points").size());
  EXPECT_GT(j.at("count").get<int>(), 0);
  EXPECT_TRUE(fs::exists(dir_ / "inf" / "overlay.png"));
  EXPECT_TRUE(fs::exists(dir_ / "inf" / "points.json"));
  const auto none = run(base + " --conf 1.0 --out " + (dir_ / "inf1").string());
  ASSERT_EQ(none.code, 0);
  EXPECT_EQ(nlohmann::json::parse(none.out).at("count"), 0);
  EXPECT_EQ(run(base.substr(0, base.find(" --tir")) + " --tir " + (dir_ / "missing.png").string()).code, 3);
}

TEST_F(Cli, InferSizeMismatchIsDataError) {
  ASSERT_EQ(trained_, 0);
  auto cfg = tapnet::testing::tiny_config(dir_ / "unused");
  cfg.dataset.val_synthetic.width = 80;
  save_config(dir_ / "narrow.json", cfg);
  ASSERT_EQ(run("gen-data --config " + (dir_ / "narrow.json").string() + " --out " + (dir_ / "narrow").string()).code,
            0);
  ASSERT_EQ(run("gen-data --config " + (dir_ / "tiny.json").string() + " --out " + (dir_ / "wide").string()).code, 0);
  const auto a = fs::directory_iterator(dir_ / "narrow" / "val" / "rgb")->path();
  const auto b = fs::directory_iterator(dir_ / "wide" / "val" / "tir")->path();
  EXPECT_EQ(run("infer --checkpoint " + (dir_ / "run" / "final.tapnet").string() + " --rgb " + a.string() +
                " --tir " + b.string())
                .code,
            3);
}

TEST_F(Cli, PlotErrorsAreDataErrors) {
  std::ofstream(dir_ / "empty.jsonl") << "";
  EXPECT_EQ(run("plot --in " + (dir_ / "empty.jsonl").string() + " --out " + (dir_ / "p").string()).code, 3);
  ASSERT_EQ(trained_, 0);
  EXPECT_EQ(run("plot --in " + (dir_ / "run" / "loss.jsonl").string() + " --out " + (dir_ / "p").string()).code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "p" / "loss_vs_step.png"));
}

TEST_F(Cli, NonFiniteLossExitsFour) {
  auto cfg = tapnet::testing::tiny_config(dir_ / "diverge", 2, 1);
  cfg.loss.lambda1 = 1e308;
  cfg.loss.lambda4 = 1e308;
  save_config(dir_ / "diverge.json", cfg);
  EXPECT_EQ(run("train --config " + (dir_ / "diverge.json").string()).code, 4);
}

TEST_F(Cli, EnvironmentSeedOverridesConfig) {
  auto cfg = tapnet::testing::tiny_config(dir_ / "seeded", 2, 0);
  save_config(dir_ / "seeded.json", cfg);
  const std::string cmd = "TAPNETLAB_SEED=77 " + std::string(TAPNETLAB_BIN) + " train --config " +
                          (dir_ / "seeded.json").string() + " >/dev/null 2>&1";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_EQ(load_config(dir_ / "seeded" / "config.resolved.json").seed, 77u);
}
