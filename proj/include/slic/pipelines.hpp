#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "slic/data.hpp"
#include "slic/decoding.hpp"
#include "slic/evaluation.hpp"
#include "slic/io.hpp"
#include "slic/losses.hpp"
#include "slic/model.hpp"
#include "slic/preference.hpp"

namespace slic {

enum class Recipe { Sft, ContinueSft, SlicDirect, SlicSampleRank };
enum class FilterMode { PositivesHf, BestOfMReward, BestOfMRanking };

std::string to_string(Recipe r);
std::string to_string(FilterMode f);
Recipe recipe_from_string(const std::string& s);
FilterMode filter_mode_from_string(const std::string& s);

// One row of the ablation table.
struct PipelineSpec {
  Recipe recipe = Recipe::Sft;
  std::optional<FilterMode> filter;    // continue_sft only
  std::optional<JudgeKind> judge_mode; // slic_sample_rank only
  RegTarget reg_target = RegTarget::SftTarget;
  int m = 8;

  void validate() const;
  // Stable system name, e.g. "slic_sample_rank.ranking.best_decode".
  std::string name() const;
};

// The full ablation: sft, continue_sft x3, slic_direct, slic_sample_rank x4.
std::vector<PipelineSpec> ablation_specs(int m);

// ---- cross-entropy training ----

struct CeTrainConfig {
  int steps = 3000;
  int batch_size = 32;
  double lr = 1e-3;
  double clip_norm = 1.0;
  int eval_every = 100;
  std::uint64_t seed = 11;

  void validate() const;
};

struct CeLogRow {
  int step = 0;
  double train_loss = 0.0;
  double val_perplexity = -1.0;  // -1 when not evaluated at this step
};

struct CeTrainResult {
  ModelParams params;  // lowest validation perplexity
  int best_step = 0;
  double best_perplexity = 0.0;
  double initial_perplexity = 0.0;
  std::vector<CeLogRow> log;
};

// Minibatch cross-entropy from init; evaluates at step 0, every eval_every
// steps and at the end, keeping the lowest validation perplexity.
CeTrainResult train_cross_entropy(const ModelParams& init, const std::vector<ContextTarget>& train,
                                  const std::vector<ContextTarget>& validation, const CeTrainConfig& config);

std::vector<ContextTarget> reference_targets(const std::vector<SftExample>& examples);

CeTrainResult run_sft(const SftDatasets& data, const ModelConfig& model, std::uint64_t init_seed,
                      const CeTrainConfig& config);

// ---- stage A: offline decoding ----

struct ContextItem {
  std::int64_t example_id = 0;
  Tokens context;
};
std::vector<ContextItem> context_items(const std::vector<SftExample>& examples, std::size_t limit = 0);

struct DecodeStats {
  std::size_t contexts = 0;
  std::size_t sequences = 0;
  std::size_t truncated = 0;
  std::size_t context_encodes = 0;
  std::size_t single_text_sets = 0;  // every candidate textually identical
  double mean_length = 0.0;
  double mean_distinct = 0.0;
};

// m samples per context; each CandidateSet encodes its context once.
// Seeds derive from (config.seed, example_id), so output is independent of workers.
std::vector<CandidateSet> decode_stage(const ModelParams& policy, const std::vector<ContextItem>& items, int m,
                                       const DecodeConfig& config, int workers, DecodeStats* stats = nullptr);

std::vector<DecodeRecord> to_decode_records(const std::vector<ContextItem>& items,
                                            const std::vector<CandidateSet>& sets);

// ---- stage B: offline judging ----

struct JudgedSet {
  std::int64_t example_id = 0;
  Tokens context;
  std::vector<Tokens> candidates;  // completed (non-truncated) candidates in sample order
  std::size_t best = 0;            // index into candidates
  std::vector<double> scores;      // pointwise judge only
  RankedPairs pairs;
};

struct JudgeStageStats {
  std::size_t contexts = 0;
  std::size_t skipped_all_truncated = 0;
  std::size_t degenerate_sets = 0;  // fewer than two distinct candidates, no pairs
  std::size_t pairs = 0;
  std::size_t comparisons = 0;
  std::size_t dropped_truncated = 0;
};

// Pairwise judge: tournament, m-1 pairs per set of m distinct candidates.
// Pointwise judge: score every candidate and sample `reward_pairs` pairs.
std::vector<JudgedSet> judge_stage(const ModelParams& judge, JudgeKind kind, const std::vector<DecodeRecord>& decodes,
                                   const std::map<std::int64_t, Tokens>& contexts, std::size_t reward_pairs,
                                   std::uint64_t seed, int workers, JudgeStageStats* stats = nullptr);

void write_judged(const std::filesystem::path& path, const std::vector<JudgedSet>& sets);
std::vector<JudgedSet> read_judged(const std::filesystem::path& path);
std::vector<RankedPairRecord> pair_records(const std::vector<JudgedSet>& sets);

// ---- filtering baselines ----

std::vector<ContextTarget> filter_positives(const std::vector<PreferenceRecord>& feedback);
std::vector<ContextTarget> filter_best_of_m(const std::vector<JudgedSet>& sets);

CeTrainResult run_continue_sft(const ModelParams& sft, const std::vector<ContextTarget>& filtered_train,
                               const std::vector<ContextTarget>& filtered_validation, const CeTrainConfig& config);

// ---- calibration examples ----

struct CalibrationRecord {
  std::int64_t example_id = 0;
  std::string source;  // feedback | tournament | reward_sampled
  CalibrationExample example;
};

// Off-policy pairs straight from the feedback data, regularized toward the references.
std::vector<CalibrationRecord> direct_examples(const std::vector<PreferenceRecord>& feedback,
                                               const std::map<std::int64_t, Tokens>& references);

// Judged pairs with the chosen regularization target. `references` is only
// read for the sft_target mode and may be empty otherwise.
std::vector<CalibrationRecord> sample_rank_examples(const std::vector<JudgedSet>& sets, RegTarget reg,
                                                    const std::map<std::int64_t, Tokens>& references);

void write_calibration_examples(const std::filesystem::path& path, const std::vector<CalibrationRecord>& records);
std::vector<CalibrationRecord> read_calibration_examples(const std::filesystem::path& path);

// ---- stage C: calibration ----

struct CalibrateConfig {
  CalibrationConfig loss;
  int steps = 1000;
  int pairs_per_step = 32;
  double lr = 1e-5;
  double clip_norm = 1.0;
  int eval_every = 100;
  std::uint64_t seed = 23;

  void validate() const;
};

struct CalibLogRow {
  int step = 0;
  double calibration = 0.0;
  double regularization = 0.0;
  double total = 0.0;
  double zero_hinge_fraction = 0.0;
};

// Counters observed inside the training loop.
struct TrainingInstrumentation {
  std::uint64_t steps = 0;
  std::uint64_t min_updates_per_step = 0;
  std::uint64_t max_updates_per_step = 0;
  std::uint64_t checkpoint_loads = 0;
  std::uint64_t prefix_encodes = 0;
  std::uint64_t sequences_decoded = 0;
};

struct CalibrateResult {
  ModelParams final_params;
  std::vector<CalibLogRow> log;
  TrainingInstrumentation instrumentation;
};

// Snapshots are handed to on_snapshot at step 0, every eval_every steps and
// at the final step. The loop never decodes or loads models.
CalibrateResult calibrate(const ModelParams& init, const std::vector<CalibrationExample>& examples,
                          const CalibrateConfig& config,
                          const std::function<void(int step, const ModelParams&)>& on_snapshot);

// ---- checkpoint selection ----

struct SelectionRow {
  int step = 0;
  double judge_win_rate = 0.0;
  double mean_decode_length = 0.0;
  double truncation_rate = 0.0;
};

struct SelectionResult {
  std::size_t best_index = 0;
  int best_step = 0;
  std::vector<SelectionRow> rows;
};

// Beam-decodes validation contexts with every snapshot and picks the highest
// pairwise-judge win rate against the references; ties keep the earlier step.
SelectionResult select_by_win_rate(const std::vector<int>& steps,
                                   const std::function<ModelParams(std::size_t)>& load_snapshot,
                                   const ModelParams& ranking_judge, const std::vector<Tokens>& contexts,
                                   const std::vector<Tokens>& references, int beam_size, int max_len, int workers);

// ---- evaluation helpers ----

struct BeamDecodes {
  std::vector<Tokens> bodies;
  std::size_t truncated = 0;
};
BeamDecodes beam_decode_all(const ModelParams& params, const std::vector<Tokens>& contexts, int beam_size,
                            int max_len, int workers);

// ---- efficiency ledger ----

struct EfficiencyLedger {
  std::string system;
  std::uint64_t trainable_sets_per_step = 0;
  std::uint64_t auxiliary_models_in_training = 0;
  std::uint64_t decoder_calls_in_training = 0;
  std::uint64_t decoded_sequences = 0;
  std::uint64_t decode_contexts = 0;
  int m = 0;
  bool decode_offline = false;
  bool judging_offline = false;
  double context_encodes_per_set = 0.0;

  Json to_json() const;
  static EfficiencyLedger from_json(const Json& j);
  // Human-readable violations of the calibration-recipe invariants; empty when all hold.
  std::vector<std::string> violations() const;
};

EfficiencyLedger collect_efficiency_ledger(const PipelineSpec& spec, const TrainingInstrumentation& training,
                                           const std::optional<DecodeStats>& decode);

// Runs fn(i) for i in [0, n) on up to `workers` threads. Results must be
// written to per-index slots; the first exception is rethrown.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace slic
