#pragma once

#include <span>
#include <string>

#include "slic/model.hpp"

namespace slic {

enum class RegTarget { SftTarget, BestDecode };

std::string to_string(RegTarget t);
RegTarget reg_target_from_string(const std::string& s);

struct CalibrationConfig {
  double margin = 1.0;      // ranking margin (delta, a.k.a. beta)
  double reg_weight = 0.5;  // lambda on the cross-entropy regularizer
  RegTarget reg_target = RegTarget::SftTarget;

  void validate() const;
};

struct LossBreakdown {
  double calibration = 0.0;
  double regularization = 0.0;
  double total = 0.0;  // calibration + reg_weight * regularization
  std::size_t pairs = 0;
  std::size_t zero_hinge_pairs = 0;
};

// Mean negative log-prob per target token. Adds weight * gradient when grads is set.
double sft_loss(const ModelParams& params, const Tokens& context, const Tokens& target, Gradients* grads = nullptr,
                double weight = 1.0);
// Mean of per-example sft_loss over the batch.
double sft_batch_loss(const ModelParams& params, std::span<const ContextTarget> batch, Gradients* grads = nullptr);

// max(0, margin - logp_pos + logp_neg)
double calibration_loss(double logp_pos, double logp_neg, double margin);

struct CalibrationExample {
  Tokens context;
  Tokens positive;  // targets, EOS terminated
  Tokens negative;
  Tokens reg_target;
};

// Rank-calibration hinge on unnormalized sequence log-probs plus
// reg_weight * cross-entropy on the regularization target.
LossBreakdown slic_hf_loss(const ModelParams& params, const CalibrationExample& ex, const CalibrationConfig& config,
                           Gradients* grads = nullptr, double weight = 1.0);
// Calibration and regularization terms are each averaged over the batch.
LossBreakdown slic_hf_batch_loss(const ModelParams& params, std::span<const CalibrationExample> batch,
                                 const CalibrationConfig& config, Gradients* grads = nullptr);

// -log sigmoid(r_pos - r_neg), evaluated without overflow.
double reward_pair_loss(double r_pos, double r_neg);
double softplus(double z);

// Scalar reward read off a text-to-text judge: the log-odds of `good` over
// `bad` at the first target position of (input, [good, EOS]).
double label_log_odds(const ModelParams& params, const Tokens& input, TokenId good, TokenId bad,
                      Gradients* grads = nullptr, double weight = 1.0);

// Pairwise reward-model loss on two judge inputs (preferred first).
double reward_pair_model_loss(const ModelParams& params, const Tokens& input_pos, const Tokens& input_neg,
                              TokenId good, TokenId bad, Gradients* grads = nullptr, double weight = 1.0);

}  // namespace slic
