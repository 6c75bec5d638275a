#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "slic/model.hpp"

namespace slic {

struct DecodeConfig {
  double temperature = 0.7;
  int top_k = 40;
  int max_len = 32;  // generated tokens including the terminating EOS
  int beam_size = 4;
  std::uint64_t seed = 0;

  void validate(int vocab_size) const;
};

// One generated sequence. `body` never contains EOS; a completed decode is
// body + EOS, a truncated one stopped at the length cap.
struct Decoded {
  Tokens body;
  bool truncated = false;
  double score = 0.0;  // untempered log-prob of the emitted tokens (incl. EOS if completed)

  Tokens target() const;
};

struct CandidateSet {
  Tokens context;
  std::vector<Decoded> candidates;
  std::vector<std::uint64_t> seeds;
  std::vector<double> scores;       // judge scores, empty until scored
  std::vector<std::size_t> ranking; // candidate indices best-first, empty until ranked
  int context_encodes = 0;
};

// Probability of every vocabulary entry after temperature scaling, top-k
// truncation and renormalization (zeros outside the retained support).
std::vector<double> truncated_distribution(const RowVec& logits, double temperature, int top_k);
TokenId sample_token(const RowVec& logits, double temperature, int top_k, Rng& rng);

std::uint64_t candidate_seed(std::uint64_t base_seed, std::size_t index);

Decoded sample(const ModelParams& params, const Tokens& context, const DecodeConfig& config, std::uint64_t seed);
Decoded greedy(const ModelParams& params, const Tokens& context, int max_len);

// m samples sharing a single encoding of the context.
CandidateSet sample_candidates(const ModelParams& params, const Tokens& context, int m, const DecodeConfig& config,
                               std::uint64_t base_seed);

// Unnormalized-score beam search; returns the best completed hypothesis, or
// the best truncated one if none completed.
Decoded beam_search(const ModelParams& params, const Tokens& context, int beam_size, int max_len);

// Line-delimited decode dump: one record per candidate.
struct DecodeRecord {
  std::int64_t example_id = 0;
  int candidate_index = 0;
  std::uint64_t seed = 0;
  Tokens tokens;
  bool truncated = false;
};

void write_decode_dump(const std::filesystem::path& path, const std::vector<DecodeRecord>& records);
std::vector<DecodeRecord> read_decode_dump(const std::filesystem::path& path);

}  // namespace slic
