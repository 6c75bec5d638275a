#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slic/common.hpp"

namespace slic {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
// Fixed base alignment keeps Eigen's vectorized reductions, and so results,
// independent of where the allocator places the buffer.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

// Architecture of the decoder-only model shared by generators and judges.
struct ModelConfig {
  int vocab_size = 64;
  int width = 32;
  int layers = 2;
  int heads = 2;
  int mlp_ratio = 4;
  int max_len = 128;
  std::size_t param_budget = 2'000'000;

  void validate() const;
  std::size_t parameter_count() const;
  // Architecture fingerprint stored in checkpoints, e.g. "dec-v64-d32-l2-h2-f4-t128".
  std::string fingerprint() const;
  static ModelConfig from_fingerprint(const std::string& fp);

  bool operator==(const ModelConfig&) const = default;
};

struct TensorSpec {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

std::vector<TensorSpec> parameter_tensors(const ModelConfig& config);

// All trainable values live in one flat buffer; tensors are views into it.
struct ModelParams {
  ModelConfig config;
  std::uint64_t seed = 0;
  Buffer values;

  std::string fingerprint() const { return config.fingerprint(); }
  bool all_finite() const;
};

struct Gradients {
  Buffer values;

  static Gradients zeros_like(const ModelParams& p) { return {Buffer(p.values.size(), 0.0)}; }
  double norm() const;
  bool all_finite() const;
};

// Process-wide call counters read by the efficiency ledger and stage checks.
struct ModelCounters {
  std::atomic<std::uint64_t> forward_passes{0};
  std::atomic<std::uint64_t> prefix_encodes{0};
  std::atomic<std::uint64_t> decode_steps{0};
  std::atomic<std::uint64_t> sequences_decoded{0};
  std::atomic<std::uint64_t> parameter_updates{0};
  std::atomic<std::uint64_t> checkpoint_loads{0};
};
ModelCounters& model_counters();

ModelParams init_model(const ModelConfig& config, std::uint64_t seed);

// Zeroes the output projection so every position predicts the uniform distribution.
void force_uniform_head(ModelParams& params);

// Network input for a (context, target) pair:
//   BOS context SEP target[0 .. n-2]
// The logits at position first_target_pos + i predict target[i].
struct SequenceLayout {
  Tokens input;
  std::size_t first_target_pos = 0;
  Tokens targets;
};
SequenceLayout layout_sequence(const Tokens& context, const Tokens& target);
Tokens generation_prefix(const Tokens& context);

struct LayerCache;
class DecoderState;

// Activations retained for the backward pass.
class ForwardPass {
 public:
  ForwardPass();
  ~ForwardPass();
  ForwardPass(ForwardPass&&) noexcept;
  ForwardPass& operator=(ForwardPass&&) noexcept;

  Tokens input;
  RowMat logits;  // T x V

 private:
  friend ForwardPass forward(const ModelParams&, const Tokens&);
  friend void backward(const ModelParams&, const ForwardPass&, const RowMat&, Gradients&);
  friend DecoderState encode_prefix(const ModelParams&, const Tokens&);

  std::vector<LayerCache> layers_;
  RowMat final_hat_;
  Eigen::VectorXd final_rstd_;
  RowMat final_out_;
};

ForwardPass forward(const ModelParams& params, const Tokens& input);
// dlogits has the shape of pass.logits; rows that do not contribute may be zero.
void backward(const ModelParams& params, const ForwardPass& pass, const RowMat& dlogits, Gradients& grads);

// Log-probabilities of a target given a context, with the activations needed
// to backpropagate any function of them.
struct TargetScore {
  SequenceLayout layout;
  ForwardPass pass;
  RowMat log_probs;  // n_targets x V, log-softmax at each predicting position
  std::vector<double> per_token;
  double total = 0.0;
};

TargetScore score_target(const ModelParams& params, const Tokens& context, const Tokens& target);

// grads += d/dθ [ sum_i coeff[i] * per_token[i] ]
void accumulate_target_grad(const ModelParams& params, const TargetScore& score, std::span<const double> coeff,
                            Gradients& grads);
// grads += d/dθ of a loss whose gradient w.r.t. the target-row logits is dlogits (n_targets x V).
void accumulate_logit_grad(const ModelParams& params, const TargetScore& score, const RowMat& dlogits,
                           Gradients& grads);

struct SeqLogProb {
  std::vector<double> per_token;
  double total = 0.0;
};

// Unnormalized sum of target token log-probabilities. target must end with EOS.
SeqLogProb sequence_log_prob(const ModelParams& params, const Tokens& context, const Tokens& target);

struct ContextTarget {
  Tokens context;
  Tokens target;  // ends with EOS
};

// exp(mean negative log-prob per target token) over the dataset.
double perplexity(const ModelParams& params, std::span<const ContextTarget> dataset);

// Incremental decoding with cached keys/values. The prefix is encoded once;
// copies of the state can then be advanced independently.
class DecoderState {
 public:
  int length() const { return length_; }
  const RowVec& next_logits() const { return logits_; }

 private:
  friend DecoderState encode_prefix(const ModelParams&, const Tokens&);
  friend void advance(const ModelParams&, DecoderState&, TokenId);

  int length_ = 0;
  std::vector<Buffer> keys_;    // per layer, length x width
  std::vector<Buffer> values_;  // per layer, length x width
  RowVec logits_;
};

DecoderState encode_prefix(const ModelParams& params, const Tokens& prefix);
void advance(const ModelParams& params, DecoderState& state, TokenId token);

// Loss closures evaluate a scalar loss and, when grads is non-null, add its
// exact gradient into it.
using LossClosure = std::function<double(const ModelParams&, Gradients*)>;

Gradients gradients(const ModelParams& params, const LossClosure& loss);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // 0 disables global-norm clipping
};

struct OptimizerState {
  std::uint64_t step = 0;
  double lr = 1e-3;
  Buffer m;
  Buffer v;

  static OptimizerState for_params(const ModelParams& p, double lr);
};

struct UpdateResult {
  ModelParams params;
  OptimizerState state;
};

UpdateResult apply_update(const ModelParams& params, const Gradients& grads, const OptimizerState& state,
                          const AdamConfig& config);

struct Checkpoint {
  ModelParams params;
  std::optional<OptimizerState> optimizer;
};

void save_checkpoint(const ModelParams& params, const OptimizerState* optimizer, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Rejects checkpoints whose architecture fingerprint differs from expected.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace slic
