#include "tapnet/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "tapnet/checkpoint.hpp"
#include "tapnet/errors.hpp"

namespace tapnet {

namespace fs = std::filesystem;
using dataio::DualImage;
using dataio::Image;

torch::Tensor image_tensor(const Image& image) {
  if (image.channels() != 3) throw ShapeError("image_tensor expects a 3-channel image");
  auto t = torch::from_blob(const_cast<float*>(image.pixels().data()),
                            {image.height(), image.width(), 3}, torch::kFloat);
  return t.permute({2, 0, 1}).clone();
}

Batch make_batch(const std::vector<DualImage>& samples) {
  if (samples.empty()) throw DataError("make_batch: no samples");
  std::vector<torch::Tensor> rgb, tir;
  Batch batch;
  for (const auto& s : samples) {
    if (s.height() != samples[0].height() || s.width() != samples[0].width()) {
      throw ShapeError("make_batch: samples differ in size");
    }
    rgb.push_back(image_tensor(s.rgb));
    tir.push_back(image_tensor(s.tir));
    batch.points.push_back(s.points);
  }
  batch.rgb = torch::stack(rgb);
  batch.tir = torch::stack(tir);
  return batch;
}

namespace {

torch::Tensor points_tensor(const std::vector<Point>& pts) {
  auto t = torch::empty({static_cast<int64_t>(pts.size()), 2}, torch::kFloat);
  auto a = t.accessor<float, 2>();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    a[i][0] = static_cast<float>(pts[i].x);
    a[i][1] = static_cast<float>(pts[i].y);
  }
  return t;
}

std::pair<losses::ApgTerms, losses::PointTerms> image_terms(TapNet& model, const ModelOutput& out, int b,
                                                            const std::vector<Point>& gt,
                                                            const RunConfig& cfg, std::mt19937_64& rng) {
  const auto& head_cfg = model->config().head;
  const auto& w = cfg.loss;
  const auto props = pointhead::to_proposals(out.head, b, head_cfg);
  const auto assignment = matching::hungarian(matching::cost_matrix(gt, props, cfg.tau_match));
  const auto gt_t = points_tensor(gt);
  auto point = losses::point_loss(losses::LogConfidence::from_logits(out.head.logits[b]), out.head.coords[b],
                                  gt_t, assignment, w);

  const auto aux = matching::sample_aux_points(gt, cfg.aux, rng);
  const auto n_pos = static_cast<int64_t>(aux.positives.size());
  auto all = aux.positives;
  all.insert(all.end(), aux.negatives.begin(), aux.negatives.end());
  torch::Tensor logits = torch::empty({0});
  torch::Tensor delta = torch::empty({0, 2});
  const auto pts = points_tensor(all);
  if (!all.empty()) {
    const auto lat = out.latent.defined() ? out.latent.narrow(0, b, 1) : torch::Tensor();
    auto q = model->head->query(out.f4.narrow(0, b, 1), lat, pts.unsqueeze(0));
    logits = q.logits[0];
    delta = q.delta[0];
  }
  const auto gamma = head_cfg.gamma;
  const auto pos_pts = pts.narrow(0, 0, n_pos);
  const auto pos_target =
      n_pos > 0 ? gt_t.repeat_interleave(aux.k_pos, 0) : torch::empty({0, 2}, torch::kFloat);
  auto apg = losses::apg_loss(losses::LogConfidence::from_logits(logits.narrow(0, 0, n_pos)),
                              pos_pts + gamma * delta.narrow(0, 0, n_pos), pos_target,
                              losses::LogConfidence::from_logits(logits.narrow(0, n_pos, logits.size(0) - n_pos)),
                              gamma * delta.narrow(0, n_pos, delta.size(0) - n_pos), w);
  return {std::move(apg), std::move(point)};
}

}  // namespace

losses::LossTerms compute_loss(TapNet& model, const Batch& batch, const RunConfig& cfg, std::mt19937_64& rng) {
  const auto out = model->forward(batch.rgb, batch.tir, cfg.kernel);
  const int b_size = static_cast<int>(batch.points.size());
  losses::ApgTerms apg;
  losses::PointTerms point;
  auto add = [](torch::Tensor& acc, const torch::Tensor& v) { acc = acc.defined() ? acc + v : v; };
  for (int b = 0; b < b_size; ++b) {
    auto [a, p] = image_terms(model, out, b, batch.points[b], cfg, rng);
    add(apg.pos, a.pos);
    add(apg.neg, a.neg);
    add(point.loc, p.loc);
    add(point.ciz, p.ciz);
  }
  for (auto* t : {&apg.pos, &apg.neg, &point.loc, &point.ciz}) *t = *t / b_size;
  apg.apg = apg.pos + apg.neg;
  point.point = point.ciz + cfg.loss.lambda4 * point.loc;

  losses::EncoderDecoderTerms ed;
  losses::FusionTerms fusion;
  if (out.afdf) {
    ed = losses::encoder_decoder_loss(*out.afdf, cfg.loss);
    fusion = losses::fusion_loss(batch.rgb, batch.tir, out.afdf->fused,
                                 cfg.loss.decomp_in_fuse ? ed.decomp : ed.cc_D, cfg.loss);
  }
  return losses::total_loss(std::move(ed), std::move(fusion), std::move(apg), std::move(point));
}

std::vector<DualImage> load_split(const DatasetConfig& cfg, bool validation) {
  const auto& path = validation ? cfg.val_annotations : cfg.train_annotations;
  if (!path.empty()) return dataio::load_dataset(path);
  return dataio::generate_dataset(validation ? cfg.val_synthetic : cfg.train_synthetic);
}

namespace {

std::string rng_string(const std::mt19937_64& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

std::string checkpoint_name(int epoch) {
  std::ostringstream out;
  out << "epoch_" << std::setw(4) << std::setfill('0') << epoch << ".tapnet";
  return out.str();
}

}  // namespace

TrainResult train(const RunConfig& cfg, const std::vector<DualImage>& train_set) {
  cfg.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  torch::set_num_threads(cfg.train.threads);
  torch::manual_seed(cfg.seed);
  TapNet model(cfg.model);
  model->train();
  std::vector<torch::optim::OptimizerParamGroup> groups;
  groups.emplace_back(model->backbone_parameters(),
                      std::make_unique<torch::optim::AdamOptions>(cfg.optimizer.backbone_lr));
  groups.emplace_back(model->head_parameters(), std::make_unique<torch::optim::AdamOptions>(cfg.optimizer.lr));
  torch::optim::Adam optimizer(std::move(groups), torch::optim::AdamOptions(cfg.optimizer.lr));

  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  save_config(dir / "config.resolved.json", cfg);
  std::ofstream log(dir / "loss.jsonl", std::ios::trunc);
  if (!log) throw DataError("cannot write " + (dir / "loss.jsonl").string());

  std::mt19937_64 rng(dataio::derive_seed(cfg.seed, 0x7a11));
  TrainResult result;
  std::int64_t step = 0;
  result.checkpoint = dir / "initial.tapnet";
  save_checkpoint(result.checkpoint, model, &optimizer, cfg, step, 0, rng_string(rng));

  const auto& aug = cfg.augment;
  for (int epoch = 1; epoch <= cfg.optimizer.epochs; ++epoch) {
    const bool fusion_only = cfg.optimizer.two_phase && cfg.model.fusion == FusionMode::afdf &&
                             epoch <= cfg.optimizer.fusion_epochs;
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<DualImage> pending;
    auto run_step = [&]() {
      const auto batch = make_batch(pending);
      pending.clear();
      optimizer.zero_grad();
      const auto terms = compute_loss(model, batch, cfg, rng);
      (fusion_only ? terms.af : terms.total).backward();
      optimizer.step();
      ++step;
      const auto report = terms.report();
      nlohmann::json line = report;
      line["step"] = step;
      line["epoch"] = epoch;
      log << line.dump() << '\n';
      result.log.push_back(report);
    };
    for (std::size_t idx : order) {
      for (int c = 0; c < aug.crops_per_image; ++c) {
        auto crop = dataio::lsj_augment(train_set[idx], aug, rng);
        if (cfg.dataset.misaligned) crop = dataio::random_tir_shift(crop, aug.tir_shift_range, aug.pad_policy, rng);
        pending.push_back(std::move(crop));
        if (static_cast<int>(pending.size()) == cfg.optimizer.batch) run_step();
      }
    }
    if (!pending.empty()) run_step();
    log.flush();

    const bool last = epoch == cfg.optimizer.epochs;
    if (last || (cfg.train.checkpoint_every > 0 && epoch % cfg.train.checkpoint_every == 0)) {
      result.checkpoint = dir / (last ? std::string("final.tapnet") : checkpoint_name(epoch));
      save_checkpoint(result.checkpoint, model, &optimizer, cfg, step, epoch, rng_string(rng));
    }
  }
  return result;
}

TrainResult train(const RunConfig& cfg) {
  cfg.validate();
  return train(cfg, load_split(cfg.dataset, false));
}

namespace {

Image pad_to(const Image& image, int height, int width) {
  if (image.height() == height && image.width() == width) return image;
  Image out(height, width, image.channels());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < image.channels(); ++c) out.at(y, x, c) = image.at(y, x, c);
    }
  }
  return out;
}

Image crop(const Image& image, int y0, int x0, int size) {
  Image out(size, size, image.channels());
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      for (int c = 0; c < image.channels(); ++c) out.at(y, x, c) = image.at(y0 + y, x0 + x, c);
    }
  }
  return out;
}

std::vector<int> tile_origins(int extent, int tile, int overlap) {
  std::vector<int> out{0};
  const int step = tile - overlap;
  while (out.back() + tile < extent) out.push_back(std::min(out.back() + step, extent - tile));
  return out;
}

std::vector<ProposalSet> forward_batch(TapNet& model, const std::vector<torch::Tensor>& rgb,
                                       const std::vector<torch::Tensor>& tir, const RunConfig& cfg) {
  torch::NoGradGuard guard;
  const auto out = model->forward(torch::stack(rgb), torch::stack(tir), cfg.kernel);
  std::vector<ProposalSet> sets;
  for (int b = 0; b < static_cast<int>(rgb.size()); ++b) {
    sets.push_back(pointhead::to_proposals(out.head, b, model->config().head));
  }
  return sets;
}

/// Greedy radius NMS by confidence; pairs from the same tile survive unless
/// suppress_duplicates is set.
ProposalSet suppress(const ProposalSet& set, const std::vector<int>& tiles, const RunConfig& cfg) {
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return set.confidence[a] > set.confidence[b]; });
  const double r2 = cfg.eval.nms_radius * cfg.eval.nms_radius;
  std::vector<std::size_t> kept;
  ProposalSet out;
  for (auto i : order) {
    const bool duplicate = std::any_of(kept.begin(), kept.end(), [&](std::size_t k) {
      const double dx = set.coords[k].x - set.coords[i].x;
      const double dy = set.coords[k].y - set.coords[i].y;
      return (cfg.eval.suppress_duplicates || tiles[k] != tiles[i]) && dx * dx + dy * dy <= r2;
    });
    if (duplicate) continue;
    kept.push_back(i);
    out.coords.push_back(set.coords[i]);
    out.confidence.push_back(set.confidence[i]);
    if (!set.reference_index.empty()) out.reference_index.push_back(set.reference_index[i]);
  }
  return out;
}

bool fits(const RunConfig& cfg, int height, int width) {
  return height <= cfg.augment.crop_size && width <= cfg.augment.crop_size && height % 16 == 0 &&
         width % 16 == 0;
}

}  // namespace

ProposalSet predict(TapNet& model, const Image& rgb, const Image& tir, const RunConfig& cfg) {
  if (rgb.height() != tir.height() || rgb.width() != tir.width()) {
    throw ShapeError("predict: RGB is " + std::to_string(rgb.width()) + "x" + std::to_string(rgb.height()) +
                     " but TIR is " + std::to_string(tir.width()) + "x" + std::to_string(tir.height()));
  }
  model->eval();
  if (fits(cfg, rgb.height(), rgb.width())) {
    const auto set = forward_batch(model, {image_tensor(rgb)}, {image_tensor(tir)}, cfg)[0];
    return cfg.eval.suppress_duplicates ? suppress(set, std::vector<int>(set.size(), 0), cfg) : set;
  }
  const int tile = cfg.augment.crop_size;
  const int h = std::max(rgb.height(), tile);
  const int w = std::max(rgb.width(), tile);
  const auto prgb = pad_to(rgb, h, w);
  const auto ptir = pad_to(tir, h, w);
  ProposalSet all;
  std::vector<int> tiles;
  int tile_id = 0;
  for (int y0 : tile_origins(h, tile, cfg.eval.tile_overlap)) {
    for (int x0 : tile_origins(w, tile, cfg.eval.tile_overlap)) {
      const auto set = forward_batch(model, {image_tensor(crop(prgb, y0, x0, tile))},
                                     {image_tensor(crop(ptir, y0, x0, tile))}, cfg)[0];
      for (std::size_t j = 0; j < set.size(); ++j) {
        const Point p{set.coords[j].x + x0, set.coords[j].y + y0};
        if (p.x < -0.5 || p.y < -0.5 || p.x >= rgb.width() - 0.5 || p.y >= rgb.height() - 0.5) continue;
        all.coords.push_back(p);
        all.confidence.push_back(set.confidence[j]);
        all.reference_index.push_back(set.reference_index[j]);
        tiles.push_back(tile_id);
      }
      ++tile_id;
    }
  }
  return suppress(all, tiles, cfg);
}

std::vector<ProposalSet> predict(TapNet& model, const std::vector<DualImage>& samples, const RunConfig& cfg) {
  model->eval();
  std::vector<ProposalSet> out(samples.size());
  constexpr std::size_t chunk = 8;
  std::vector<std::size_t> group;
  auto flush = [&]() {
    std::vector<torch::Tensor> rgb, tir;
    for (auto i : group) {
      rgb.push_back(image_tensor(samples[i].rgb));
      tir.push_back(image_tensor(samples[i].tir));
    }
    auto sets = forward_batch(model, rgb, tir, cfg);
    for (std::size_t k = 0; k < group.size(); ++k) {
      const auto& set = sets[k];
      out[group[k]] = cfg.eval.suppress_duplicates ? suppress(set, std::vector<int>(set.size(), 0), cfg) : set;
    }
    group.clear();
  };
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (!fits(cfg, s.height(), s.width())) {
      out[i] = predict(model, s.rgb, s.tir, cfg);
      continue;
    }
    if (!group.empty() && (samples[group[0]].height() != s.height() || samples[group[0]].width() != s.width())) {
      flush();
    }
    group.push_back(i);
    if (group.size() == chunk) flush();
  }
  if (!group.empty()) flush();
  return out;
}

metrics::MetricsReport evaluate_model(TapNet& model, const std::vector<DualImage>& samples,
                                      const RunConfig& cfg, double match_radius,
                                      const std::vector<double>& thresholds) {
  if (samples.empty()) throw DataError("evaluation dataset is empty");
  const auto preds = predict(model, samples, cfg);
  std::vector<std::vector<Point>> gts;
  for (const auto& s : samples) gts.push_back(s.points);
  return metrics::evaluate(preds, gts, thresholds.empty() ? metrics::default_thresholds() : thresholds,
                           match_radius, cfg.eval.count_threshold);
}

Image draw_points(const Image& rgb, const std::vector<Point>& points) {
  Image out = rgb;
  auto put = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= out.width() || y >= out.height()) return;
    out.at(y, x, 0) = 1.0f;
    out.at(y, x, 1) = 0.0f;
    out.at(y, x, 2) = 0.0f;
  };
  for (const auto& p : points) {
    const int cx = static_cast<int>(std::lround(p.x));
    const int cy = static_cast<int>(std::lround(p.y));
    for (int d = -3; d <= 3; ++d) {
      put(cx + d, cy);
      put(cx, cy + d);
    }
  }
  return out;
}

}  // namespace tapnet
