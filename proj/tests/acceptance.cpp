#include <torch/torch.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>
#include <unistd.h>

#include "desk.hpp"
#include "grad_suite.hpp"
#include "support.hpp"
#include "tapnet/checkpoint.hpp"
#include "tapnet/kernels.hpp"
#include "tapnet/matching.hpp"
#include "tapnet/metrics.hpp"
#include "tapnet/pipeline.hpp"
#include "tapnet/pointhead.hpp"

namespace fs = std::filesystem;
using namespace tapnet;
using namespace tapnet::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

fs::path work_root() {
  static const fs::path root = [] {
    auto p = fs::temp_directory_path() / ("tapnet_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(p);
    return p;
  }();
  return root;
}

metrics::MetricsReport train_and_validate(const RunConfig& cfg) {
  const auto result = train(cfg);
  auto model = load_model(read_checkpoint(result.checkpoint));
  return evaluate_model(model, load_split(cfg.dataset, true), cfg, cfg.eval.match_radius, {});
}

Outcome matching_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> entry(-1.0, 1.0);
  int mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int m = std::uniform_int_distribution<int>(1, 8)(rng);
    const int n = std::uniform_int_distribution<int>(1, std::min(6, m))(rng);
    matching::Matrix<long long> c(n, m);
    for (auto& v : c.data) v = std::llround(entry(rng) * 1e6);
    if (matching::hungarian(c).realized_cost != brute_force_min(c)) ++mismatches;
  }
  const double t = seconds_since(t0);
  return {mismatches == 0 && t < 10.0, fmt("%.0f mismatches over 200 matrices in %.2f s", mismatches, t)};
}

Outcome kernel_axioms() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g(0.0, 1.0);
  const kernels::KernelSpec k;
  double self = 0.0, asym = 0.0, diag = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int d = std::uniform_int_distribution<int>(1, 6)(rng);
    auto batch = [&](int n) {
      kernels::Batch b(n, std::vector<double>(d));
      for (auto& row : b) {
        for (auto& v : row) v = g(rng);
      }
      return b;
    };
    const auto a = batch(std::uniform_int_distribution<int>(1, 8)(rng));
    const auto b = batch(std::uniform_int_distribution<int>(1, 8)(rng));
    self = std::max(self, kernels::mkmmd(a, a, k));
    asym = std::max(asym, std::abs(kernels::mkmmd(a, b, k) - kernels::mkmmd(b, a, k)));
    for (const auto& x : a) diag = std::max(diag, std::abs(kernels::hybrid_kernel(x, x, k) - (k.c1 + k.c2)));
  }
  const double t = seconds_since(t0);
  const bool ok = self <= 1e-9 && asym <= 1e-12 && diag <= 1e-12 && t < 5.0;
  return {ok, fmt("max mmd(A,A) %.2e, max asymmetry %.2e, max |k(x,x)-(c1+c2)| %.2e, %.2f s", self, asym, diag, t)};
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = run_gradient_suite();
  double worst = 0.0;
  std::string worst_name;
  bool sizes_ok = true;
  for (const auto& r : results) {
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
    sizes_ok = sizes_ok && r.parameters <= 1000;
  }
  const double t = seconds_since(t0);
  std::ostringstream s;
  s << results.size() << " checks, worst " << worst_name << " " << fmt("%.2e", worst) << ", " << fmt("%.1f s", t);
  return {worst <= 1e-3 && sizes_ok && t < 300.0, s.str()};
}

Outcome metric_exactness() {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> conf(0.01, 0.99);
  const std::vector<double> thresholds{0.05, 0.3, 0.5, 0.8};
  int mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int np = std::uniform_int_distribution<int>(0, 6)(rng);
    const int ng = std::uniform_int_distribution<int>(0, 6)(rng);
    ProposalSet preds;
    preds.coords = random_points(rng, np, 40.0);
    for (int i = 0; i < np; ++i) preds.confidence.push_back(conf(rng));
    const auto gts = random_points(rng, ng, 40.0);
    const auto report = metrics::localization_f1({preds}, {gts}, thresholds, 8.0);
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      const auto kept = preds.filtered(thresholds[t]);
      const long tp = brute_force_tp(kept.coords, gts, 8.0);
      const auto& row = report.per_threshold[t];
      if (row.tp != tp || row.fp != static_cast<long>(kept.size()) - tp || row.fn != ng - tp) ++mismatches;
    }
  }
  const auto ce = metrics::count_errors({10, 20}, {12, 16});
  const double err = std::max(std::abs(ce.mae - 3.0), std::abs(ce.mse - std::sqrt(10.0)));
  return {mismatches == 0 && err <= 1e-9,
          fmt("%.0f TP/FP/FN mismatches over 400 sweeps; count error deviation %.1e", mismatches, err)};
}

Outcome toy_convergence() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto report = train_and_validate(desk_config(work_root() / "convergence", 1));
  const double t = seconds_since(t0);
  const double f1 = report.at(0.5).f1;
  return {report.mae <= 2.0 && f1 >= 0.7 && t <= 1800.0,
          fmt("val MAE %.3f, F1@0.5 %.3f (radius 8 px), %.0f s", report.mae, f1, t)};
}

Outcome dual_modal_advantage() {
  std::vector<double> dual, rgb_only;
  for (std::uint64_t seed : {1, 2, 3}) {
    for (auto mode : {FusionMode::dafp, FusionMode::rgb}) {
      auto cfg = desk_config(work_root() / ("lowlight_" + to_string(mode) + "_" + std::to_string(seed)), seed);
      cfg.model.fusion = mode;
      cfg.dataset.train_synthetic.low_light = {0.3, 0.3};
      cfg.dataset.val_synthetic.low_light = {0.3, 0.3};
      (mode == FusionMode::dafp ? dual : rgb_only).push_back(train_and_validate(cfg).mae);
    }
  }
  const double a = median3(dual), b = median3(rgb_only);
  return {a < b, fmt("median val MAE dafp %.3f vs rgb %.3f", a, b)};
}

Outcome shift_benefit() {
  std::vector<double> with, without;
  for (std::uint64_t seed : {1, 2, 3}) {
    for (bool shift : {true, false}) {
      auto cfg = desk_config(work_root() / ((shift ? "shift_" : "noshift_") + std::to_string(seed)), seed);
      cfg.dataset.misaligned = shift;
      cfg.augment.tir_shift_range = 8;
      cfg.dataset.val_synthetic.misalignment = {-8, 8};
      (shift ? with : without).push_back(train_and_validate(cfg).mae);
    }
  }
  const double a = median3(with), b = median3(without);
  return {a <= b, fmt("median val MAE with shift %.3f vs without %.3f", a, b)};
}

Outcome aux_contract() {
  const matching::AuxPointConfig d;
  const bool defaults = d.k_pos == 1 && d.k_neg == 0 && d.n_pos == 1.0 && d.n_neg == 4.0;
  matching::AuxPointConfig cfg = d;
  cfg.k_pos = 1;
  cfg.k_neg = 1;
  std::mt19937_64 rng(18);
  std::uniform_real_distribution<double> u(0.0, 128.0);
  std::vector<Point> gt;
  for (int i = 0; i < 5000; ++i) gt.push_back({u(rng), u(rng)});
  const auto aux = matching::sample_aux_points(gt, cfg, rng);
  long violations = 0;
  for (int i = 0; i < 5000; ++i) {
    const auto& p = aux.positives[i];
    const auto& q = aux.negatives[i];
    const double pc = std::max(std::abs(p.x - gt[i].x), std::abs(p.y - gt[i].y));
    const double nc = std::max(std::abs(q.x - gt[i].x), std::abs(q.y - gt[i].y));
    if (pc > cfg.n_pos) ++violations;
    if (nc <= cfg.n_pos || nc > cfg.n_neg) ++violations;
  }
  const long total = static_cast<long>(aux.positives.size() + aux.negatives.size());
  return {defaults && violations == 0 && total == 10000,
          fmt("defaults (k_pos,k_neg,n_pos,n_neg) = (%.0f,%.0f,%.0f,%.0f); ", d.k_pos, d.k_neg, d.n_pos, d.n_neg) +
              std::to_string(violations) + " violations over " + std::to_string(total) + " points"};
}

Outcome ifi_partition() {
  std::mt19937_64 rng(19);
  const int h = 9, w = 13;
  std::uniform_real_distribution<double> ux(0.0, w - 1.0), uy(0.0, h - 1.0);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const auto cw = pointhead::corner_weights(ux(rng), uy(rng), h, w);
    double s = 0.0;
    for (double v : cw.weights) s += v;
    worst = std::max(worst, std::abs(s - 1.0));
  }
  int corner_failures = 0;
  for (int gy = 0; gy < h; ++gy) {
    for (int gx = 0; gx < w; ++gx) {
      const auto cw = pointhead::corner_weights(gx, gy, h, w);
      int hits = 0;
      for (int c = 0; c < 4; ++c) {
        if (cw.weights[c] == 1.0 && cw.gx[c] == gx && cw.gy[c] == gy) ++hits;
        else if (cw.weights[c] != 0.0) ++corner_failures;
      }
      if (hits != 1) ++corner_failures;
    }
  }
  return {worst <= 1e-6 && corner_failures == 0,
          fmt("max |sum S_i/S - 1| %.1e over 1e4 queries; %.0f corner-pattern failures", worst, corner_failures)};
}

Outcome determinism_roundtrip() {
  auto a = tiny_config(work_root() / "det_a", 5, 2);
  auto b = a;
  b.output_dir = (work_root() / "det_b").string();
  const auto ra = train(a);
  const auto rb = train(b);
  bool same_logs = ra.log.size() == rb.log.size() && !ra.log.empty();
  for (std::size_t i = 0; same_logs && i < ra.log.size(); ++i) same_logs = ra.log[i].items() == rb.log[i].items();

  auto model = load_model(read_checkpoint(ra.checkpoint));
  torch::manual_seed(0);
  const auto rgb = torch::rand({2, 3, 64, 64});
  const auto tir = torch::rand({2, 3, 64, 64});
  torch::NoGradGuard g;
  const auto before = model->forward(rgb, tir).head;
  const auto path = work_root() / "roundtrip.tapnet";
  save_checkpoint(path, model, nullptr, a, 0, 0, "");
  auto reloaded = load_model(read_checkpoint(path));
  const auto after = reloaded->forward(rgb, tir).head;
  const bool bitwise = torch::equal(before.coords, after.coords) && torch::equal(before.logits, after.logits);
  return {same_logs && bitwise, std::string("loss logs ") + (same_logs ? "identical" : "differ") + " over " +
                                    std::to_string(ra.log.size()) + " steps; reload forward " +
                                    (bitwise ? "bitwise equal" : "differs")};
}

}  // namespace

int main() {
  torch::set_num_threads(1);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"matching oracle equivalence", matching_oracle},
      {"mmd and kernel axioms", kernel_axioms},
      {"gradient suite", gradient_suite},
      {"metric exactness", metric_exactness},
      {"toy end-to-end convergence", toy_convergence},
      {"dual-modal advantage under low light", dual_modal_advantage},
      {"shift-augmentation benefit", shift_benefit},
      {"auxiliary-point contract", aux_contract},
      {"implicit interpolation partition", ifi_partition},
      {"determinism and checkpoint round-trip", determinism_roundtrip},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::error_code ec;
  fs::remove_all(work_root(), ec);
  return failed == 0 ? 0 : 1;
}
