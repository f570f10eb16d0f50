#include <gtest/gtest.h>
#include <torch/torch.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <unistd.h>

#include "desk.hpp"
#include "tapnet/checkpoint.hpp"
#include "tapnet/pipeline.hpp"
#include "tapnet/plot.hpp"

using namespace tapnet;
using tapnet::testing::desk_config;
using tapnet::testing::tiny_config;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("tapnet_pipeline_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<std::string> lines(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

}  // namespace

TEST(Train, ZeroEpochsWritesOnlyInitialCheckpoint) {
  const auto dir = scratch("zero");
  const auto cfg = tiny_config(dir, 1, 0);
  const auto r = train(cfg);
  EXPECT_TRUE(r.log.empty());
  EXPECT_EQ(r.checkpoint, dir / "initial.tapnet");
  EXPECT_TRUE(fs::exists(dir / "initial.tapnet"));
  EXPECT_FALSE(fs::exists(dir / "final.tapnet"));
  EXPECT_TRUE(lines(dir / "loss.jsonl").empty());
  EXPECT_TRUE(fs::exists(dir / "config.resolved.json"));
  fs::remove_all(dir);
}

TEST(Train, SameSeedGivesIdenticalLogs) {
  const auto dir = scratch("det");
  const auto a = train(tiny_config(dir / "a", 4, 2));
  const auto b = train(tiny_config(dir / "b", 4, 2));
  const auto c = train(tiny_config(dir / "c", 5, 2));
  ASSERT_EQ(a.log.size(), 4u);
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].items(), b.log[i].items());
  EXPECT_NE(a.log[0].items(), c.log[0].items());
  EXPECT_EQ(lines(dir / "a" / "loss.jsonl"), lines(dir / "b" / "loss.jsonl"));
  fs::remove_all(dir);
}

TEST(Train, ResolvedConfigReproducesRun) {
  const auto dir = scratch("echo");
  const auto first = train(tiny_config(dir / "first", 6, 1));
  auto again = load_config(dir / "first" / "config.resolved.json");
  again.output_dir = (dir / "again").string();
  const auto second = train(again);
  ASSERT_EQ(first.log.size(), second.log.size());
  for (std::size_t i = 0; i < first.log.size(); ++i) EXPECT_EQ(first.log[i].items(), second.log[i].items());
  fs::remove_all(dir);
}

TEST(Train, PeriodicCheckpointsAndLogShape) {
  const auto dir = scratch("periodic");
  auto cfg = tiny_config(dir, 2, 3);
  cfg.train.checkpoint_every = 2;
  const auto r = train(cfg);
  EXPECT_TRUE(fs::exists(dir / "epoch_0002.tapnet"));
  EXPECT_FALSE(fs::exists(dir / "epoch_0001.tapnet"));
  EXPECT_EQ(r.checkpoint, dir / "final.tapnet");
  const auto log = lines(dir / "loss.jsonl");
  ASSERT_EQ(log.size(), 6u);
  const auto j = nlohmann::json::parse(log.back());
  EXPECT_EQ(j.at("step"), 6);
  EXPECT_EQ(j.at("epoch"), 3);
  for (const auto& [name, value] : r.log.back().items()) EXPECT_TRUE(j.contains(name)) << name;
  EXPECT_EQ(read_checkpoint(r.checkpoint).step, 6);
  EXPECT_EQ(plot::read_loss_log(dir / "loss.jsonl").x.size(), 6u);
  fs::remove_all(dir);
}

TEST(Train, AfdfModeTrainsWithTwoPhaseSchedule) {
  const auto dir = scratch("afdf");
  auto cfg = tiny_config(dir, 3, 2);
  cfg.model.fusion = FusionMode::afdf;
  cfg.optimizer.two_phase = true;
  cfg.optimizer.fusion_epochs = 1;
  const auto r = train(cfg);
  ASSERT_EQ(r.log.size(), 4u);
  EXPECT_GT(r.log[0].fuse, 0.0);
  EXPECT_NE(r.log[0].mmd, 0.0);
  for (const auto& rep : r.log) EXPECT_NEAR(rep.total, rep.af + rep.apg + rep.point, 1e-6 * std::abs(rep.total));
  fs::remove_all(dir);
}

TEST(Train, MisalignedDatasetTrains) {
  const auto dir = scratch("shift");
  auto cfg = tiny_config(dir, 3, 1);
  cfg.dataset.misaligned = true;
  cfg.aux.k_neg = 2;
  EXPECT_EQ(train(cfg).log.size(), 2u);
  fs::remove_all(dir);
}

TEST(Loss, BatchTermsAreFiniteAndAdditive) {
  auto cfg = tiny_config("/tmp/unused", 1, 1);
  torch::manual_seed(0);
  TapNet model(cfg.model);
  const auto samples = load_split(cfg.dataset, false);
  std::vector<dataio::DualImage> pair{samples[0], samples[1]};
  std::mt19937_64 rng(1);
  const auto r = compute_loss(model, make_batch(pair), cfg, rng).report();
  EXPECT_NEAR(r.total, r.af + r.apg + r.point, 1e-9);
  EXPECT_NEAR(r.point, r.ciz + cfg.loss.lambda4 * r.loc, 1e-6);
  EXPECT_EQ(r.af, 0.0);
  EXPECT_GT(r.total, 0.0);
}

TEST(Loss, NonFiniteInputAborts) {
  auto cfg = tiny_config("/tmp/unused", 1, 1);
  TapNet model(cfg.model);
  auto samples = load_split(cfg.dataset, false);
  samples.resize(1);
  samples[0].rgb.at(3, 3, 0) = NAN;
  std::mt19937_64 rng(1);
  EXPECT_THROW(compute_loss(model, make_batch(samples), cfg, rng), NumericError);
}

TEST(Batch, MixedSizesRejected) {
  dataio::SceneConfig a, b;
  b.width = 64;
  EXPECT_THROW(make_batch({dataio::generate_scene(a), dataio::generate_scene(b)}), ShapeError);
}

TEST(Predict, TilesLargeImagesAndKeepsProposalsInside) {
  auto cfg = tiny_config("/tmp/unused", 1, 1);
  TapNet model(cfg.model);
  dataio::SceneConfig sc;
  sc.width = 150;
  sc.height = 100;
  const auto s = dataio::generate_scene(sc);
  const auto p = predict(model, s.rgb, s.tir, cfg);
  EXPECT_GT(p.size(), 0u);
  EXPECT_NO_THROW(p.validate());
  for (const auto& q : p.coords) {
    EXPECT_GE(q.x, -0.5);
    EXPECT_LT(q.x, 149.5);
    EXPECT_GE(q.y, -0.5);
    EXPECT_LT(q.y, 99.5);
  }
  EXPECT_THROW(predict(model, s.rgb, dataio::Image(100, 149, 3), cfg), ShapeError);
}

TEST(Predict, DirectPathMatchesBatchedPath) {
  auto cfg = tiny_config("/tmp/unused", 1, 1);
  TapNet model(cfg.model);
  const auto samples = load_split(cfg.dataset, true);
  const auto batched = predict(model, samples, cfg);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto single = predict(model, samples[i].rgb, samples[i].tir, cfg);
    ASSERT_EQ(single.size(), batched[i].size());
    for (std::size_t j = 0; j < single.size(); ++j) {
      EXPECT_NEAR(single.confidence[j], batched[i].confidence[j], 1e-5);
      EXPECT_NEAR(single.coords[j].x, batched[i].coords[j].x, 1e-3);
    }
  }
}

TEST(Predict, DuplicateSuppressionKeepsStrongestWithinRadius) {
  auto cfg = tiny_config("/tmp/unused", 1, 1);
  TapNet model(cfg.model);
  const auto s = load_split(cfg.dataset, true).front();
  cfg.eval.suppress_duplicates = false;
  const auto raw = predict(model, s.rgb, s.tir, cfg);
  EXPECT_EQ(raw.size(), 4u * 4u * 4u);
  cfg.eval.suppress_duplicates = true;
  cfg.eval.nms_radius = 9.0;
  const auto kept = predict(model, s.rgb, s.tir, cfg);
  ASSERT_GT(kept.size(), 0u);
  EXPECT_LT(kept.size(), raw.size());
  EXPECT_EQ(kept.confidence.front(), *std::max_element(raw.confidence.begin(), raw.confidence.end()));
  for (std::size_t i = 0; i < kept.size(); ++i) {
    for (std::size_t j = i + 1; j < kept.size(); ++j) {
      EXPECT_GT(std::hypot(kept.coords[i].x - kept.coords[j].x, kept.coords[i].y - kept.coords[j].y), 9.0);
    }
  }
  for (const auto& q : raw.coords) {
    const bool covered = std::any_of(kept.coords.begin(), kept.coords.end(),
                                     [&](const Point& k) { return std::hypot(k.x - q.x, k.y - q.y) <= 9.0; });
    EXPECT_TRUE(covered);
  }
}

TEST(Evaluate, EmptyDatasetIsAnError) {
  auto cfg = tiny_config("/tmp/unused", 1, 1);
  TapNet model(cfg.model);
  EXPECT_THROW(evaluate_model(model, {}, cfg, 8.0, {}), DataError);
}

TEST(Evaluate, ThresholdOneKeepsNothing) {
  auto cfg = tiny_config("/tmp/unused", 1, 1);
  TapNet model(cfg.model);
  const auto samples = load_split(cfg.dataset, true);
  const auto p = predict(model, samples[0].rgb, samples[0].tir, cfg);
  EXPECT_EQ(p.filtered(1.0).size(), 0u);
  const auto report = evaluate_model(model, samples, cfg, 8.0, {});
  EXPECT_NO_THROW(report.at(0.8));
}

TEST(Overlay, MarksPoints) {
  dataio::Image img(20, 20, 3, 0.5f);
  const auto out = draw_points(img, {{10, 10}});
  EXPECT_NE(out, img);
  EXPECT_EQ(out.at(10, 10, 0), 1.0f);
  EXPECT_EQ(out.at(0, 19, 0), 0.5f);
}

TEST(Plot, LossCurveAndMetricsCurve) {
  const auto dir = scratch("plot");
  {
    std::ofstream log(dir / "loss.jsonl");
    for (int i = 1; i <= 5; ++i) log << R"({"step":)" << i << R"(,"total":)" << 10.0 / i << "}\n";
  }
  const auto s = plot::read_loss_log(dir / "loss.jsonl");
  EXPECT_EQ(s.x.size(), 5u);
  EXPECT_EQ(s.y[1], 5.0);
  const auto out = plot::plot_file(dir / "loss.jsonl", dir / "figs");
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].filename(), "loss_vs_step.png");
  EXPECT_EQ(dataio::read_png(out[0]).width(), 640);

  metrics::MetricsReport rep = metrics::evaluate({ProposalSet{{{1, 1}}, {0.9}, {}}}, {{{1, 1}}}, {}, 8.0);
  std::ofstream(dir / "m.json") << metrics::to_json(rep);
  EXPECT_EQ(plot::plot_file(dir / "m.json", dir / "figs")[0].filename(), "f1_vs_threshold.png");
  fs::remove_all(dir);
}

TEST(Plot, EmptyOrMalformedLogsRejected) {
  const auto dir = scratch("badplot");
  std::ofstream(dir / "empty.jsonl") << "";
  EXPECT_THROW(plot::plot_file(dir / "empty.jsonl", dir / "figs"), DataError);
  EXPECT_FALSE(fs::exists(dir / "figs" / "loss_vs_step.png"));
  std::ofstream(dir / "bad.jsonl") << "{\"total\": 1}\n{\"total\": 2}\nnot json\n";
  try {
    plot::read_loss_log(dir / "bad.jsonl");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(ConvergedRun, TrainingFitBeatsValidationAndInferCountsClose) {
  const auto dir = scratch("converged");
  auto cfg = desk_config(dir, 1, 50);
  cfg.augment.scale_range = {1.0, 1.0};
  cfg.augment.flip_prob = 0.0;
  const auto r = train(cfg);
  auto model = load_model(read_checkpoint(r.checkpoint));
  const auto train_set = load_split(cfg.dataset, false);
  const auto val_set = load_split(cfg.dataset, true);
  const auto train_report = evaluate_model(model, train_set, cfg, 8.0, {});
  const auto val_report = evaluate_model(model, val_set, cfg, 8.0, {});
  EXPECT_LT(train_report.mae, val_report.mae);
  int within = 0;
  for (const auto& s : val_set) {
    const auto n = static_cast<int>(predict(model, s.rgb, s.tir, cfg).filtered(0.5).size());
    within += std::abs(n - static_cast<int>(s.points.size())) <= 2 ? 1 : 0;
  }
  const auto& first = val_set.front();
  const auto first_count = static_cast<int>(predict(model, first.rgb, first.tir, cfg).filtered(0.5).size());
  EXPECT_LE(std::abs(first_count - static_cast<int>(first.points.size())), 2);
  EXPECT_GE(within, static_cast<int>(0.9 * val_set.size()));

  const auto figs = plot::plot_file(dir / "loss.jsonl", dir / "figs");
  const auto log = plot::read_loss_log(dir / "loss.jsonl");
  const std::size_t n = log.y.size();
  double head = 0, tail = 0;
  for (std::size_t i = 0; i < n / 10; ++i) {
    head += log.y[i];
    tail += log.y[n - 1 - i];
  }
  EXPECT_LT(tail, head);
  EXPECT_TRUE(fs::exists(figs[0]));
  fs::remove_all(dir);
}
