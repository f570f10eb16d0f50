#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "tapnet/checkpoint.hpp"
#include "tapnet/config.hpp"
#include "tapnet/errors.hpp"
#include "tapnet/pipeline.hpp"
#include "tapnet/plot.hpp"

namespace fs = std::filesystem;
using namespace tapnet;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4 };

fs::path annotation_file(const fs::path& data) {
  return fs::is_directory(data) ? data / "annotations.json" : data;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text << '\n';
}

int cmd_train(const std::string& config_path) {
  auto cfg = load_config(config_path);
  apply_environment(cfg);
  cfg.validate();
  const auto result = train(cfg);
  std::cout << "trained " << result.log.size() << " steps; checkpoint " << result.checkpoint.string() << '\n';
  auto model = load_model(read_checkpoint(result.checkpoint));
  const auto val = load_split(cfg.dataset, true);
  const auto report = evaluate_model(model, val, cfg, cfg.eval.match_radius, cfg.eval.thresholds);
  write_text(fs::path(cfg.output_dir) / "val_metrics.json", metrics::to_json(report));
  std::cout << "val mae " << report.mae << " mse " << report.mse << " f1@0.5 " << report.at(0.5).f1 << '\n';
  return kOk;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& data, double radius,
                 const std::vector<double>& thresholds, const std::string& out) {
  const auto ckpt = read_checkpoint(checkpoint);
  auto model = load_model(ckpt);
  const auto samples = dataio::load_dataset(annotation_file(data));
  const auto report = evaluate_model(model, samples, ckpt.config, radius, thresholds);
  const auto text = metrics::to_json(report);
  std::cout << text << '\n';
  write_text(out.empty() ? fs::path(checkpoint).parent_path() / "metrics.json" : fs::path(out), text);
  return kOk;
}

int cmd_infer(const std::string& checkpoint, const std::string& rgb_path, const std::string& tir_path,
              double conf, const std::string& out_dir) {
  const auto ckpt = read_checkpoint(checkpoint);
  auto model = load_model(ckpt);
  const auto rgb = dataio::read_png(rgb_path);
  const auto tir = dataio::read_png(tir_path);
  const auto kept = predict(model, rgb, tir, ckpt.config).filtered(conf);
  nlohmann::json j;
  j["count"] = kept.size();
  j["points"] = nlohmann::json::array();
  for (std::size_t i = 0; i < kept.size(); ++i) {
    j["points"].push_back({kept.coords[i].x, kept.coords[i].y, kept.confidence[i]});
  }
  std::cout << j.dump() << '\n';
  const fs::path dir = out_dir;
  write_text(dir / "points.json", j.dump(2));
  dataio::write_png(dir / "overlay.png", draw_points(rgb, kept.coords));
  return kOk;
}

int cmd_gen_data(const std::string& config_path, const std::string& out) {
  auto cfg = load_config(config_path);
  apply_environment(cfg);
  const fs::path dir = out;
  const auto train_dir = dataio::write_dataset(dir / "train", dataio::generate_dataset(cfg.dataset.train_synthetic));
  const auto val_dir = dataio::write_dataset(dir / "val", dataio::generate_dataset(cfg.dataset.val_synthetic));
  std::cout << train_dir.string() << '\n' << val_dir.string() << '\n';
  return kOk;
}

int cmd_plot(const std::string& in, const std::string& out) {
  for (const auto& p : plot::plot_file(in, out)) std::cout << p.string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-modal RGB + thermal head-point counting toolkit"};
  app.require_subcommand(1);

  std::string config, checkpoint, data, rgb, tir, out, in;
  double radius = 8.0;
  double conf = 0.5;
  std::vector<double> thresholds;

  auto* train_cmd = app.add_subcommand("train", "Train a model from a JSON run config");
  train_cmd->add_option("--config", config, "Run config")->required();

  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", checkpoint)->required();
  eval_cmd->add_option("--data", data, "Dataset directory or annotation file")->required();
  eval_cmd->add_option("--match-radius", radius, "Localization tolerance in pixels");
  eval_cmd->add_option("--thresholds", thresholds, "Confidence thresholds (ascending)");
  eval_cmd->add_option("--out", out, "Metrics JSON path");

  auto* infer_cmd = app.add_subcommand("infer", "Detect heads in one RGB/TIR pair");
  infer_cmd->add_option("--checkpoint", checkpoint)->required();
  infer_cmd->add_option("--rgb", rgb)->required();
  infer_cmd->add_option("--tir", tir)->required();
  infer_cmd->add_option("--conf", conf, "Confidence threshold");
  infer_cmd->add_option("--out", out, "Directory for points.json and overlay.png")->default_val(".");

  auto* gen_cmd = app.add_subcommand("gen-data", "Write synthetic train/val datasets");
  gen_cmd->add_option("--config", config)->required();
  gen_cmd->add_option("--out", out)->required();

  auto* plot_cmd = app.add_subcommand("plot", "Plot a loss log or metrics report");
  plot_cmd->add_option("--in", in)->required();
  plot_cmd->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(config);
    if (eval_cmd->parsed()) return cmd_evaluate(checkpoint, data, radius, thresholds, out);
    if (infer_cmd->parsed()) return cmd_infer(checkpoint, rgb, tir, conf, out);
    if (gen_cmd->parsed()) return cmd_gen_data(config, out);
    if (plot_cmd->parsed()) return cmd_plot(in, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric error in '" << e.term() << "': " << e.what() << '\n';
    return kNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
