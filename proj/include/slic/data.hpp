#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "slic/common.hpp"

namespace slic {

struct QualityWeights {
  double coverage = 1.0;
  double length = 0.5;         // alpha_len, per unit of excess length relative to |salient|
  double hallucination = 1.0;  // alpha_hall, per non-salient fraction of y
};

// Synthetic compression task: a context holds a few distinct "salient"
// tokens drawn from a fixed class; the ideal summary lists them in order.
// References are degraded by dropping each salient token with p_drop.
struct TaskConfig {
  int vocab_size = 64;
  int context_min = 24;
  int context_max = 48;
  int salient_classes = 16;  // content ids [12, 12 + salient_classes) are salient
  double salient_density = 0.15;
  int min_salient = 2;
  double p_drop = 0.5;
  QualityWeights weights;
  double eta = 0.1;  // oracle label noise
  std::size_t n_train = 4000;
  std::size_t n_validation = 500;
  std::size_t n_test = 500;
  std::size_t feedback_pairs_per_example = 1;
  std::vector<std::string> feedback_policies = {"reference", "ref_drop1",   "ref_insert", "extract_hi",
                                                "extract_mid", "extract_lo", "scramble"};
  std::uint64_t seed = 1234;

  void validate() const;
  bool is_salient_class(TokenId t) const { return t >= Vocab::kFirstContent && t < Vocab::kFirstContent + salient_classes; }
  // Upper bound on reference/ideal summary length.
  int max_salient() const;
};

struct SftExample {
  std::int64_t id = 0;
  Tokens context;
  Tokens reference;               // summary body, no EOS
  std::optional<Tokens> salient;  // oracle-only; absent when read without the sidecar
};

struct SftDatasets {
  std::vector<SftExample> train;
  std::vector<SftExample> validation;
  std::vector<SftExample> test;
};

SftDatasets gen_sft_dataset(const TaskConfig& config);

// Ordered salient subsequence of a context.
Tokens salient_subsequence(const TaskConfig& config, const Tokens& context);

double quality(const Tokens& y, const Tokens& salient, const QualityWeights& weights);

// Index of the higher-quality candidate, flipped with probability eta; ties
// are broken uniformly at random.
int oracle_prefer(const Tokens& y0, const Tokens& y1, const Tokens& salient, const QualityWeights& weights,
                  double eta, Rng& rng);
int oracle_prefer(const Tokens& y0, const Tokens& y1, const Tokens& salient, const QualityWeights& weights,
                  double eta, std::uint64_t seed);

struct PreferenceRecord {
  std::int64_t id = 0;
  std::int64_t example_id = 0;
  Tokens context;
  Tokens y0;
  Tokens y1;
  int preferred = 0;
  std::string provenance = "oracle";
  std::string policy0;
  std::string policy1;

  const Tokens& winner() const { return preferred == 0 ? y0 : y1; }
  const Tokens& loser() const { return preferred == 0 ? y1 : y0; }
  void validate() const;
};

struct FeedbackStats {
  std::size_t generated = 0;
  std::size_t skipped_identical = 0;
  std::size_t quality_ties = 0;
};

// Programmatic off-policy candidate generator, by policy name.
Tokens apply_policy(const std::string& policy, const TaskConfig& config, const SftExample& example, Rng& rng);

// Pairs from randomly chosen distinct policies, labeled by the oracle.
std::vector<PreferenceRecord> gen_feedback_dataset(const std::vector<SftExample>& examples, const TaskConfig& config,
                                                   std::uint64_t seed, FeedbackStats* stats = nullptr);

// Oracle sidecar: hidden salient sets keyed by example id.
using OracleIndex = std::map<std::int64_t, Tokens>;

void write_sft_split(const std::filesystem::path& path, const std::vector<SftExample>& examples);
std::vector<SftExample> read_sft_split(const std::filesystem::path& path);
void write_oracle(const std::filesystem::path& path, const SftDatasets& data);
OracleIndex read_oracle(const std::filesystem::path& path);
void attach_oracle(std::vector<SftExample>& examples, const OracleIndex& oracle);
void write_feedback(const std::filesystem::path& path, const std::vector<PreferenceRecord>& records);
std::vector<PreferenceRecord> read_feedback(const std::filesystem::path& path);

}  // namespace slic
