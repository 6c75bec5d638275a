#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "slic/data.hpp"
#include "slic/model.hpp"

namespace slic {

enum class JudgeKind { Pointwise, Pairwise };

std::string to_string(JudgeKind k);
JudgeKind judge_kind_from_string(const std::string& s);

// A judge training row: the model reads `input` and is trained to emit `target`.
struct FormattedRow {
  Tokens input;
  Tokens target;  // {label, EOS}
};

// [CONTEXT] x [SUMMARY] y  ->  GOOD | BAD
// When the row does not fit max_len the context is cut from the end.
FormattedRow format_pointwise(const Tokens& x, const Tokens& y, TokenId label, int max_len);
// [CONTEXT] x [SUMMARY A] ya [SUMMARY B] yb  ->  A | B
FormattedRow format_pairwise(const Tokens& x, const Tokens& ya, const Tokens& yb, TokenId label, int max_len);

struct PointwiseFields {
  Tokens x, y;
  TokenId label = 0;
};
struct PairwiseFields {
  Tokens x, ya, yb;
  TokenId label = 0;
};
PointwiseFields parse_pointwise(const FormattedRow& row);
PairwiseFields parse_pairwise(const FormattedRow& row);

// Two rows per record: winner/loser for pointwise, both presentation orders for pairwise.
std::vector<FormattedRow> judge_rows(const PreferenceRecord& r, JudgeKind kind, int max_len);

// P(GOOD | formatted input), renormalized over {GOOD, BAD}.
double score_pointwise(const ModelParams& judge, const Tokens& x, const Tokens& y);

struct Preference {
  int winner = 0;
  double confidence = 0.5;  // probability that y0 is the better candidate
};
// Averages both presentation orders; exact ties go to the lexicographically smaller candidate.
Preference prefer_pairwise(const ModelParams& judge, const Tokens& x, const Tokens& y0, const Tokens& y1);

struct JudgeTrainConfig {
  ModelConfig model;
  int steps = 600;
  int batch_size = 128;  // rows per step
  double lr = 1e-3;
  double clip_norm = 1.0;
  int warmup_steps = 0;  // linear learning-rate warmup
  int eval_every = 100;
  std::size_t eval_limit = 0;           // validation records per eval, 0 = all
  double min_accuracy_over_chance = 0.05;
  std::string pointwise_objective = "classify";  // classify | bradley_terry
  std::uint64_t seed = 17;
};

struct JudgeLogRow {
  int step = 0;
  double loss = 0.0;
  double val_accuracy = -1.0;  // -1 when not evaluated at this step
};

struct JudgeTrainResult {
  ModelParams params;
  double best_accuracy = 0.0;
  int best_step = 0;
  std::vector<JudgeLogRow> log;
};

// Trains from scratch and returns the checkpoint with the highest validation accuracy.
JudgeTrainResult train_judge(const std::vector<PreferenceRecord>& train, const std::vector<PreferenceRecord>& validation,
                             JudgeKind kind, const JudgeTrainConfig& config);
// Same, starting from existing weights (e.g. a trained policy backbone).
JudgeTrainResult train_judge(const std::vector<PreferenceRecord>& train, const std::vector<PreferenceRecord>& validation,
                             JudgeKind kind, const JudgeTrainConfig& config, const ModelParams& init);

// Fraction of records where the judge agrees with the recorded preference (ties count 1/2).
double judge_accuracy(const ModelParams& judge, JudgeKind kind, const std::vector<PreferenceRecord>& records);

struct RankedPair {
  Tokens winner;
  Tokens loser;
  double confidence = 0.5;
};

struct RankedPairs {
  std::vector<RankedPair> pairs;
  std::string source;  // tournament | reward_sampled
  std::size_t comparisons = 0;
};

struct Bracket {
  std::size_t winner = 0;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (winner, loser) per comparison
  std::size_t comparisons = 0;
};

// Single elimination over indices 0..m-1, seeded left to right; an odd entrant
// at the end of a round gets a bye. `beats(a, b)` returns the winning index.
Bracket tournament(std::size_t m, const std::function<std::size_t(std::size_t, std::size_t)>& beats);

struct TournamentResult {
  std::size_t winner_index = 0;  // into the input candidate list
  RankedPairs pairs;
};

// Textual duplicates are removed first, so m distinct candidates yield m-1 pairs.
TournamentResult tournament_rank(const ModelParams& judge, const Tokens& x, const std::vector<Tokens>& candidates);

// Uniform sample without replacement over distinct unordered pairs, each
// oriented by score; equal-score pairs are skipped.
RankedPairs sample_pairs_by_reward(const std::vector<Tokens>& candidates, const std::vector<double>& scores,
                                   std::size_t n_pairs, std::uint64_t seed);

struct RankedPairRecord {
  std::int64_t example_id = 0;
  Tokens context;
  Tokens winner;
  Tokens loser;
  std::string source;
  double confidence = 0.5;
};

void write_ranked_pairs(const std::filesystem::path& path, const std::vector<RankedPairRecord>& records);
std::vector<RankedPairRecord> read_ranked_pairs(const std::filesystem::path& path);

}  // namespace slic
