#include "tapnet/losses.hpp"

#include <cmath>

#include "tapnet/errors.hpp"

namespace tapnet::losses {

namespace F = torch::nn::functional;

void LossWeights::validate() const {
  for (double v : {beta1, beta2, beta3, beta4, gamma1, gamma2, lambda1, lambda2, lambda3, lambda4,
                   decomp_alpha}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and >= 0");
  }
  if (!(infonce_tau > 0.0)) throw ConfigError("infonce_tau must be > 0");
}

LogConfidence LogConfidence::from_confidence(const torch::Tensor& c) {
  if (c.numel() > 0 && !((c > 0).all().item<bool>() && (c < 1).all().item<bool>())) {
    throw NumericError("confidence", "confidences must lie strictly inside (0, 1)");
  }
  return {torch::log(c), torch::log1p(-c)};
}

LogConfidence LogConfidence::from_logits(const torch::Tensor& logits) {
  return {F::logsigmoid(logits), F::logsigmoid(-logits)};
}

Correlation correlation(const torch::Tensor& a, const torch::Tensor& b) {
  expect_same_shape(a, b, "correlation");
  const auto fa = (a.dim() == 1 ? a.unsqueeze(0) : a).flatten(1);
  const auto fb = (b.dim() == 1 ? b.unsqueeze(0) : b).flatten(1);
  const auto ca = fa - fa.mean(1, true);
  const auto cb = fb - fb.mean(1, true);
  const auto num = (ca * cb).sum(1);
  const auto den2 = ca.pow(2).sum(1) * cb.pow(2).sum(1);
  const double tiny = 1e-24;
  const auto valid = den2 > tiny;
  const auto r = torch::where(valid, num / torch::sqrt(torch::clamp_min(den2, tiny)), torch::zeros_like(num));
  return {r.mean(), !valid.all().item<bool>()};
}

torch::Tensor decomposition_loss(const torch::Tensor& cc_base, const torch::Tensor& cc_detail, double alpha) {
  return alpha * cc_detail.pow(2) / (1.01 + cc_base);
}

torch::Tensor infonce(const torch::Tensor& x, const torch::Tensor& y, double tau) {
  expect_rank(x, 2, "infonce");
  expect_same_shape(x, y, "infonce");
  if (x.size(0) < 1) throw ShapeError("infonce needs at least one pair");
  if (!(tau > 0.0)) throw ConfigError("infonce temperature must be > 0");
  const auto logp = torch::log_softmax(torch::matmul(x, y.transpose(0, 1)) / tau, 1);
  return -logp.diagonal().mean();
}

double combine_encoder_decoder(double cc_B, double cc_D, double mmd, double nce, const LossWeights& w) {
  return w.beta1 * cc_B + w.beta2 * cc_D + w.beta3 * mmd + w.beta4 * nce;
}

EncoderDecoderTerms encoder_decoder_loss(const afdf::AfdfOutput& out, const LossWeights& w) {
  EncoderDecoderTerms t;
  t.cc_B = (w.cross_modal_correlation ? correlation(out.base_i, out.base_v)
                                      : correlation(out.base_i, out.base_i))
               .value;
  t.cc_D = correlation(out.detail_i, out.detail_v).value;
  t.decomp = decomposition_loss(t.cc_B, t.cc_D, w.decomp_alpha);
  t.mmd = out.mmd;
  t.infonce = infonce(afdf::pool_tokens(out.base_i), afdf::pool_tokens(out.base_v), w.infonce_tau);
  t.ed = w.beta1 * t.cc_B + w.beta2 * t.cc_D + w.beta3 * t.mmd + w.beta4 * t.infonce;
  return t;
}

torch::Tensor sobel_magnitude(const torch::Tensor& x) {
  expect_rank(x, 4, "sobel_magnitude");
  const auto c = x.size(1);
  const auto gx = torch::tensor({-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0}, x.options()).reshape({1, 1, 3, 3});
  const auto kx = gx.expand({c, 1, 3, 3}).contiguous();
  const auto ky = gx.transpose(2, 3).expand({c, 1, 3, 3}).contiguous();
  const auto padded = F::pad(x, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate));
  const auto opts = F::Conv2dFuncOptions().groups(c);
  return F::conv2d(padded, kx, opts).abs() + F::conv2d(padded, ky, opts).abs();
}

FusionTerms fusion_loss(const torch::Tensor& visible, const torch::Tensor& thermal,
                        const torch::Tensor& fused, const torch::Tensor& decomp, const LossWeights& w) {
  expect_same_shape(visible, thermal, "fusion_loss");
  expect_same_shape(visible, fused, "fusion_loss");
  FusionTerms t;
  t.intensity = (torch::maximum(visible, thermal) - fused).abs().mean();
  t.max_grad = (torch::maximum(sobel_magnitude(visible), sobel_magnitude(thermal)) - sobel_magnitude(fused))
                   .abs()
                   .mean();
  t.fuse = t.intensity + w.gamma1 * t.max_grad + w.gamma2 * decomp;
  return t;
}

namespace {

torch::Tensor mean_or_zero(const torch::Tensor& x, const torch::TensorOptions& opts) {
  return x.numel() > 0 ? x.mean() : torch::zeros({}, opts);
}

torch::Tensor squared_norm(const torch::Tensor& d) {
  return d.numel() > 0 ? d.pow(2).sum(-1) : d.sum(-1);
}

}  // namespace

ApgTerms apg_loss(const LogConfidence& pos_conf, const torch::Tensor& pos_pred,
                  const torch::Tensor& pos_target, const LogConfidence& neg_conf,
                  const torch::Tensor& neg_displacement, const LossWeights& w) {
  expect_same_shape(pos_pred, pos_target, "apg positives");
  const auto opts = pos_pred.options();
  ApgTerms t;
  t.pos = mean_or_zero(-pos_conf.log_c, opts) + w.lambda1 * mean_or_zero(squared_norm(pos_target - pos_pred), opts);
  t.neg = mean_or_zero(-neg_conf.log_1mc, opts) + w.lambda2 * mean_or_zero(squared_norm(neg_displacement), opts);
  t.apg = t.pos + t.neg;
  return t;
}

PointTerms point_loss(const LogConfidence& conf, const torch::Tensor& coords, const torch::Tensor& gt,
                      const matching::MatchAssignment& assignment, const LossWeights& w) {
  expect_rank(coords, 2, "point_loss coords");
  const auto m = coords.size(0);
  const auto n = gt.numel() == 0 ? 0 : gt.size(0);
  if (static_cast<int64_t>(assignment.gt_to_proposal.size()) != n) {
    throw ShapeError("point_loss: assignment covers " + std::to_string(assignment.gt_to_proposal.size()) +
                     " targets, expected " + std::to_string(n));
  }
  if (m == 0) throw ShapeError("point_loss: no proposals");
  const auto opts = coords.options();
  const auto lopts = torch::TensorOptions().dtype(torch::kLong).device(coords.device());
  auto index = [&](const std::vector<int>& v) {
    return torch::tensor(std::vector<int64_t>(v.begin(), v.end()), lopts);
  };
  PointTerms t;
  t.loc = torch::zeros({}, opts);
  if (n > 0) {
    const auto matched = coords.index_select(0, index(assignment.gt_to_proposal));
    t.loc = (gt.to(opts.dtype()) - matched).pow(2).sum(1).mean();
  }
  auto sum = [&](const torch::Tensor& x, const std::vector<int>& idx) {
    return idx.empty() ? torch::zeros({}, opts) : x.index_select(0, index(idx)).sum();
  };
  t.ciz = -(sum(conf.log_c, assignment.positives) + w.lambda3 * sum(conf.log_1mc, assignment.negatives)) /
          static_cast<double>(m);
  t.point = t.ciz + w.lambda4 * t.loc;
  return t;
}

std::vector<std::pair<std::string, double>> LossReport::items() const {
  return {{"cc_B", cc_B},   {"cc_D", cc_D},           {"decomp", decomp}, {"mmd", mmd},
          {"infonce", infonce}, {"ed", ed},           {"intensity", intensity},
          {"max_grad", max_grad}, {"fuse", fuse},     {"af", af},         {"pos", pos},
          {"neg", neg},     {"apg", apg},             {"loc", loc},       {"ciz", ciz},
          {"point", point}, {"total", total}};
}

void to_json(nlohmann::json& j, const LossReport& r) {
  j = nlohmann::json::object();
  for (const auto& [name, value] : r.items()) j[name] = value;
}

void from_json(const nlohmann::json& j, LossReport& r) {
  auto get = [&](const char* key, double& v) { v = j.at(key).get<double>(); };
  get("cc_B", r.cc_B);
  get("cc_D", r.cc_D);
  get("decomp", r.decomp);
  get("mmd", r.mmd);
  get("infonce", r.infonce);
  get("ed", r.ed);
  get("intensity", r.intensity);
  get("max_grad", r.max_grad);
  get("fuse", r.fuse);
  get("af", r.af);
  get("pos", r.pos);
  get("neg", r.neg);
  get("apg", r.apg);
  get("loc", r.loc);
  get("ciz", r.ciz);
  get("point", r.point);
  get("total", r.total);
}

namespace {

double value(const torch::Tensor& t) { return t.defined() ? t.detach().item<double>() : 0.0; }

}  // namespace

LossReport LossTerms::report() const {
  LossReport r;
  r.cc_B = value(ed.cc_B);
  r.cc_D = value(ed.cc_D);
  r.decomp = value(ed.decomp);
  r.mmd = value(ed.mmd);
  r.infonce = value(ed.infonce);
  r.ed = value(ed.ed);
  r.intensity = value(fusion.intensity);
  r.max_grad = value(fusion.max_grad);
  r.fuse = value(fusion.fuse);
  r.af = value(af);
  r.pos = value(apg.pos);
  r.neg = value(apg.neg);
  r.apg = value(apg.apg);
  r.loc = value(point.loc);
  r.ciz = value(point.ciz);
  r.point = value(point.point);
  r.total = value(total);
  return r;
}

void check_finite(const LossReport& report) {
  for (const auto& [name, v] : report.items()) {
    if (!std::isfinite(v)) throw NumericError(name, "non-finite loss term '" + name + "'");
  }
}

LossTerms total_loss(EncoderDecoderTerms ed, FusionTerms fusion, ApgTerms apg, PointTerms point) {
  if (!point.point.defined() || !apg.apg.defined()) {
    throw ShapeError("total_loss needs point and auxiliary terms");
  }
  const auto zero = torch::zeros({}, point.point.options());
  LossTerms t{std::move(ed), std::move(fusion), std::move(apg), std::move(point), {}, {}};
  t.af = (t.ed.ed.defined() ? t.ed.ed : zero) + (t.fusion.fuse.defined() ? t.fusion.fuse : zero);
  t.total = t.af + t.apg.apg + t.point.point;
  check_finite(t.report());
  return t;
}

}  // namespace tapnet::losses
