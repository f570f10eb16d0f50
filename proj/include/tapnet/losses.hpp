#pragma once

#include <torch/torch.h>

#include <json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "tapnet/afdf.hpp"
#include "tapnet/matching.hpp"

namespace tapnet::losses {

struct LossWeights {
  double beta1 = 2.0;
  double beta2 = 2.0;
  double beta3 = 0.1;
  double beta4 = 1.0;
  double gamma1 = 10.0;
  double gamma2 = 2.0;
  double lambda1 = 0.5;
  double lambda2 = 2e-4;
  double lambda3 = 2e-4;
  double lambda4 = 0.2;
  double decomp_alpha = 1.0;
  double infonce_tau = 0.1;
  /// Base correlation between the thermal and visible encodings rather than
  /// the thermal encoding with itself.
  bool cross_modal_correlation = true;
  /// The fusion loss uses the decomposition loss; otherwise the raw detail correlation.
  bool decomp_in_fuse = true;

  void validate() const;
};

/// Log-confidences log c and log(1 - c), kept separate for numerical stability.
struct LogConfidence {
  torch::Tensor log_c;
  torch::Tensor log_1mc;

  /// Throws NumericError unless every confidence lies strictly in (0, 1).
  static LogConfidence from_confidence(const torch::Tensor& c);
  static LogConfidence from_logits(const torch::Tensor& logits);
};

struct Correlation {
  torch::Tensor value;  // scalar, batch mean of per-sample coefficients
  bool degenerate = false;  // some sample had zero variance and contributed 0
};

/// Pearson correlation of mean-centred flattened features per batch item,
/// averaged over the batch. a, b: [B, ...].
Correlation correlation(const torch::Tensor& a, const torch::Tensor& b);

torch::Tensor decomposition_loss(const torch::Tensor& cc_base, const torch::Tensor& cc_detail, double alpha);

/// Contrastive loss with dot-product similarity; row i of x pairs with row i of y.
torch::Tensor infonce(const torch::Tensor& x, const torch::Tensor& y, double tau);

struct EncoderDecoderTerms {
  torch::Tensor cc_B, cc_D, decomp, mmd, infonce, ed;
};

EncoderDecoderTerms encoder_decoder_loss(const afdf::AfdfOutput& out, const LossWeights& w);
/// ed from precomputed components.
double combine_encoder_decoder(double cc_B, double cc_D, double mmd, double infonce, const LossWeights& w);

struct FusionTerms {
  torch::Tensor intensity, max_grad, fuse;
};

/// Per-channel 3x3 Sobel magnitude |Gx| + |Gy| with replicated borders.
torch::Tensor sobel_magnitude(const torch::Tensor& x);

/// `decomp` is the decomposition (or raw correlation) term weighted by gamma2.
FusionTerms fusion_loss(const torch::Tensor& visible, const torch::Tensor& thermal,
                        const torch::Tensor& fused, const torch::Tensor& decomp, const LossWeights& w);

struct ApgTerms {
  torch::Tensor pos, neg, apg;
};

/// pos: -log c over auxiliary positives plus lambda1·‖p - p̂‖²; neg: -log(1 - c)
/// over auxiliary negatives plus lambda2·‖Δ‖². Both averaged over their points,
/// 0 when there are none.
ApgTerms apg_loss(const LogConfidence& pos_conf, const torch::Tensor& pos_pred,
                  const torch::Tensor& pos_target, const LogConfidence& neg_conf,
                  const torch::Tensor& neg_displacement, const LossWeights& w);

struct PointTerms {
  torch::Tensor loc, ciz, point;
};

/// conf over M proposals, coords [M, 2], gt [N, 2].
PointTerms point_loss(const LogConfidence& conf, const torch::Tensor& coords, const torch::Tensor& gt,
                      const matching::MatchAssignment& assignment, const LossWeights& w);

struct LossReport {
  double cc_B = 0, cc_D = 0, decomp = 0, mmd = 0, infonce = 0, ed = 0;
  double intensity = 0, max_grad = 0, fuse = 0, af = 0;
  double pos = 0, neg = 0, apg = 0;
  double loc = 0, ciz = 0, point = 0, total = 0;

  /// (name, value) in declaration order.
  std::vector<std::pair<std::string, double>> items() const;
};

void to_json(nlohmann::json& j, const LossReport& r);
void from_json(const nlohmann::json& j, LossReport& r);

struct LossTerms {
  EncoderDecoderTerms ed;
  FusionTerms fusion;
  ApgTerms apg;
  PointTerms point;
  torch::Tensor af, total;

  LossReport report() const;
};

/// af = ed + fuse; total = af + apg + point. Undefined encoder-decoder or
/// fusion terms count as 0. Throws NumericError naming the first non-finite term.
LossTerms total_loss(EncoderDecoderTerms ed, FusionTerms fusion, ApgTerms apg, PointTerms point);

void check_finite(const LossReport& report);

}  // namespace tapnet::losses
