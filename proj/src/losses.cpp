#include "slic/losses.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace slic {

std::string to_string(RegTarget t) { return t == RegTarget::SftTarget ? "sft_target" : "best_decode"; }

RegTarget reg_target_from_string(const std::string& s) {
  if (s == "sft_target") return RegTarget::SftTarget;
  if (s == "best_decode") return RegTarget::BestDecode;
  throw ConfigError("unknown regularization target '" + s + "' (expected sft_target | best_decode)");
}

void CalibrationConfig::validate() const {
  if (!(margin >= 0.0) || !std::isfinite(margin)) throw ConfigError("calib.margin must be >= 0");
  if (!(reg_weight >= 0.0) || !std::isfinite(reg_weight)) throw ConfigError("calib.reg_weight must be >= 0");
}

double sft_loss(const ModelParams& params, const Tokens& context, const Tokens& target, Gradients* grads,
                double weight) {
  if (target.empty()) throw Error("sft_loss: empty target");
  const TargetScore s = score_target(params, context, target);
  const double n = static_cast<double>(target.size());
  if (grads) {
    const std::vector<double> coeff(target.size(), -weight / n);
    accumulate_target_grad(params, s, coeff, *grads);
  }
  return -s.total / n;
}

double sft_batch_loss(const ModelParams& params, std::span<const ContextTarget> batch, Gradients* grads) {
  if (batch.empty()) throw Error("sft_batch_loss: empty batch");
  const double w = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& ex : batch) total += w * sft_loss(params, ex.context, ex.target, grads, w);
  return total;
}

double calibration_loss(double logp_pos, double logp_neg, double margin) {
  return std::max(0.0, margin - logp_pos + logp_neg);
}

LossBreakdown slic_hf_loss(const ModelParams& params, const CalibrationExample& ex, const CalibrationConfig& config,
                           Gradients* grads, double weight) {
  if (ex.positive == ex.negative) throw Error("slic_hf_loss: positive and negative sequences are identical");
  if (ex.reg_target.empty()) throw Error("slic_hf_loss: empty regularization target");
  const TargetScore pos = score_target(params, ex.context, ex.positive);
  const TargetScore neg = score_target(params, ex.context, ex.negative);
  LossBreakdown out;
  out.pairs = 1;
  out.calibration = calibration_loss(pos.total, neg.total, config.margin);
  out.zero_hinge_pairs = out.calibration == 0.0 ? 1 : 0;
  const bool hinge_active = config.margin - pos.total + neg.total > 0.0;

  // The regularizer often targets the positive itself; reuse its forward pass then.
  const bool reg_is_pos = ex.reg_target == ex.positive;
  std::optional<TargetScore> reg_score;
  if (!reg_is_pos) reg_score = score_target(params, ex.context, ex.reg_target);
  const TargetScore& reg = reg_is_pos ? pos : *reg_score;
  const double reg_n = static_cast<double>(ex.reg_target.size());
  out.regularization = -reg.total / reg_n;
  out.total = out.calibration + config.reg_weight * out.regularization;

  if (grads) {
    const double reg_coeff = config.reg_weight > 0.0 ? -weight * config.reg_weight / reg_n : 0.0;
    std::vector<double> cpos(ex.positive.size(), hinge_active ? -weight : 0.0);
    if (reg_is_pos)
      for (double& c : cpos) c += reg_coeff;
    accumulate_target_grad(params, pos, cpos, *grads);
    if (hinge_active) {
      const std::vector<double> cneg(ex.negative.size(), weight);
      accumulate_target_grad(params, neg, cneg, *grads);
    }
    if (!reg_is_pos && reg_coeff != 0.0) {
      const std::vector<double> creg(ex.reg_target.size(), reg_coeff);
      accumulate_target_grad(params, reg, creg, *grads);
    }
  }
  return out;
}

LossBreakdown slic_hf_batch_loss(const ModelParams& params, std::span<const CalibrationExample> batch,
                                 const CalibrationConfig& config, Gradients* grads) {
  if (batch.empty()) throw Error("slic_hf_batch_loss: empty batch");
  const double w = 1.0 / static_cast<double>(batch.size());
  LossBreakdown out;
  for (const auto& ex : batch) {
    const LossBreakdown b = slic_hf_loss(params, ex, config, grads, w);
    out.calibration += w * b.calibration;
    out.regularization += w * b.regularization;
    out.pairs += 1;
    out.zero_hinge_pairs += b.zero_hinge_pairs;
  }
  out.total = out.calibration + config.reg_weight * out.regularization;
  return out;
}

double softplus(double z) {
  // log(1 + e^z) = max(z, 0) + log1p(e^{-|z|})
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

double reward_pair_loss(double r_pos, double r_neg) { return softplus(-(r_pos - r_neg)); }

double label_log_odds(const ModelParams& params, const Tokens& input, TokenId good, TokenId bad, Gradients* grads,
                      double weight) {
  const TargetScore s = score_target(params, input, {good, Vocab::kEos});
  const double r = s.log_probs(0, good) - s.log_probs(0, bad);
  if (grads && weight != 0.0) {
    // The softmax normalizer cancels: dr/dlogits = e_good - e_bad.
    RowMat dl = RowMat::Zero(2, params.config.vocab_size);
    dl(0, good) = weight;
    dl(0, bad) = -weight;
    accumulate_logit_grad(params, s, dl, *grads);
  }
  return r;
}

double reward_pair_model_loss(const ModelParams& params, const Tokens& input_pos, const Tokens& input_neg,
                              TokenId good, TokenId bad, Gradients* grads, double weight) {
  const double r_pos = label_log_odds(params, input_pos, good, bad);
  const double r_neg = label_log_odds(params, input_neg, good, bad);
  const double loss = reward_pair_loss(r_pos, r_neg);
  if (grads) {
    // d/dΔ softplus(-Δ) = -sigmoid(-Δ)
    const double delta = r_pos - r_neg;
    const double s = delta >= 0 ? std::exp(-delta) / (1.0 + std::exp(-delta)) : 1.0 / (1.0 + std::exp(delta));
    label_log_odds(params, input_pos, good, bad, grads, -weight * s);
    label_log_odds(params, input_neg, good, bad, grads, weight * s);
  }
  return loss;
}

}  // namespace slic
