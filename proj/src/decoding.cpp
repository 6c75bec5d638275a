#include "slic/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "slic/io.hpp"

namespace slic {

namespace {

constexpr const char* kDecodeSchema = "slic.decode/1";

RowVec log_softmax(const RowVec& logits) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return logits.array() - lse;
}

int body_cap(const ModelParams& params, const Tokens& context, int max_len) {
  // Prefix (BOS context SEP) plus body tokens must fit the model window.
  const int room = params.config.max_len - static_cast<int>(context.size()) - 2;
  return std::max(0, std::min(max_len, room));
}

Decoded continue_sampling(const ModelParams& params, DecoderState state, int cap, const DecodeConfig& config,
                          Rng& rng) {
  model_counters().sequences_decoded.fetch_add(1, std::memory_order_relaxed);
  Decoded out;
  while (true) {
    const RowVec& logits = state.next_logits();
    const TokenId t = sample_token(logits, config.temperature, config.top_k, rng);
    out.score += log_softmax(logits)(t);
    if (t == Vocab::kEos) return out;
    out.body.push_back(t);
    if (static_cast<int>(out.body.size()) >= cap) {
      out.truncated = true;
      return out;
    }
    advance(params, state, t);
  }
}

}  // namespace

void DecodeConfig::validate(int vocab_size) const {
  if (!(temperature > 0.0)) throw ConfigError("decode.temperature must be positive");
  if (top_k < 1 || top_k > vocab_size) throw ConfigError("decode.top_k must be in [1, vocab size]");
  if (max_len < 1) throw ConfigError("decode.max_len must be >= 1");
  if (beam_size < 1) throw ConfigError("decode.beam_size must be >= 1");
}

Tokens Decoded::target() const {
  Tokens t = body;
  t.push_back(Vocab::kEos);
  return t;
}

std::vector<double> truncated_distribution(const RowVec& logits, double temperature, int top_k) {
  const int V = static_cast<int>(logits.size());
  const int k = std::clamp(top_k, 1, V);
  std::vector<int> idx(V);
  std::iota(idx.begin(), idx.end(), 0);
  // Highest logits first; ties resolved by lower token id.
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    if (logits(a) != logits(b)) return logits(a) > logits(b);
    return a < b;
  });
  std::vector<double> probs(V, 0.0);
  const double top = logits(idx[0]) / temperature;
  double z = 0.0;
  for (int i = 0; i < k; ++i) {
    const double p = std::exp(logits(idx[i]) / temperature - top);
    probs[idx[i]] = p;
    z += p;
  }
  for (int i = 0; i < k; ++i) probs[idx[i]] /= z;
  return probs;
}

TokenId sample_token(const RowVec& logits, double temperature, int top_k, Rng& rng) {
  const std::vector<double> probs = truncated_distribution(logits, temperature, top_k);
  const double u = rng.uniform();
  double acc = 0.0;
  TokenId last = 0;
  for (std::size_t t = 0; t < probs.size(); ++t) {
    if (probs[t] <= 0.0) continue;
    acc += probs[t];
    last = static_cast<TokenId>(t);
    if (u < acc) return last;
  }
  return last;  // rounding left u past the final cumulative sum
}

std::uint64_t candidate_seed(std::uint64_t base_seed, std::size_t index) {
  return derive_seed(base_seed, 0xca9d, index);
}

Decoded sample(const ModelParams& params, const Tokens& context, const DecodeConfig& config, std::uint64_t seed) {
  config.validate(params.config.vocab_size);
  const int cap = body_cap(params, context, config.max_len);
  if (cap < 1) throw Error("context leaves no room to decode");
  Rng rng(seed);
  return continue_sampling(params, encode_prefix(params, generation_prefix(context)), cap, config, rng);
}

Decoded greedy(const ModelParams& params, const Tokens& context, int max_len) {
  const int cap = body_cap(params, context, max_len);
  if (cap < 1) throw Error("context leaves no room to decode");
  DecoderState state = encode_prefix(params, generation_prefix(context));
  model_counters().sequences_decoded.fetch_add(1, std::memory_order_relaxed);
  Decoded out;
  while (true) {
    const RowVec lp = log_softmax(state.next_logits());
    Eigen::Index best = 0;
    lp.maxCoeff(&best);
    const TokenId t = static_cast<TokenId>(best);
    out.score += lp(best);
    if (t == Vocab::kEos) return out;
    out.body.push_back(t);
    if (static_cast<int>(out.body.size()) >= cap) {
      out.truncated = true;
      return out;
    }
    advance(params, state, t);
  }
}

CandidateSet sample_candidates(const ModelParams& params, const Tokens& context, int m, const DecodeConfig& config,
                               std::uint64_t base_seed) {
  if (m < 1) throw Error("sample_candidates: m must be >= 1");
  config.validate(params.config.vocab_size);
  const int cap = body_cap(params, context, config.max_len);
  if (cap < 1) throw Error("context leaves no room to decode");
  CandidateSet set;
  set.context = context;
  const DecoderState encoded = encode_prefix(params, generation_prefix(context));
  set.context_encodes = 1;
  for (int i = 0; i < m; ++i) {
    const std::uint64_t seed = candidate_seed(base_seed, static_cast<std::size_t>(i));
    Rng rng(seed);
    set.candidates.push_back(continue_sampling(params, encoded, cap, config, rng));
    set.seeds.push_back(seed);
  }
  return set;
}

Decoded beam_search(const ModelParams& params, const Tokens& context, int beam_size, int max_len) {
  if (beam_size < 1) throw Error("beam_search: beam size must be >= 1");
  const int cap = body_cap(params, context, max_len);
  if (cap < 1) throw Error("context leaves no room to decode");
  struct Hyp {
    DecoderState state;
    Tokens body;
    double score;
  };
  struct Expansion {
    double score;
    std::size_t parent;
    TokenId token;
  };
  const std::size_t beam = static_cast<std::size_t>(beam_size);
  model_counters().sequences_decoded.fetch_add(1, std::memory_order_relaxed);
  std::vector<Hyp> live;
  live.push_back({encode_prefix(params, generation_prefix(context)), {}, 0.0});
  std::optional<Decoded> best_done;

  for (int step = 0; step < cap && !live.empty(); ++step) {
    std::vector<Expansion> exp;
    std::vector<RowVec> lps;
    lps.reserve(live.size());
    for (std::size_t h = 0; h < live.size(); ++h) {
      lps.push_back(log_softmax(live[h].state.next_logits()));
      // Only the best `beam` extensions of a hypothesis can survive pruning.
      std::vector<TokenId> ids(lps.back().size());
      std::iota(ids.begin(), ids.end(), 0);
      const std::size_t keep = std::min(ids.size(), beam);
      const RowVec& lp = lps.back();
      std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(keep), ids.end(),
                        [&](TokenId a, TokenId b) { return lp(a) != lp(b) ? lp(a) > lp(b) : a < b; });
      for (std::size_t i = 0; i < keep; ++i) exp.push_back({live[h].score + lp(ids[i]), h, ids[i]});
    }
    const std::size_t keep = std::min(exp.size(), beam);
    std::partial_sort(exp.begin(), exp.begin() + static_cast<std::ptrdiff_t>(keep), exp.end(),
                      [](const Expansion& a, const Expansion& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });
    std::vector<Hyp> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const Expansion& e = exp[i];
      const Hyp& parent = live[e.parent];
      if (e.token == Vocab::kEos) {
        if (!best_done || e.score > best_done->score) best_done = Decoded{parent.body, false, e.score};
        continue;
      }
      Hyp h{parent.state, parent.body, e.score};
      h.body.push_back(e.token);
      if (static_cast<int>(h.body.size()) < cap) advance(params, h.state, e.token);
      next.push_back(std::move(h));
    }
    live = std::move(next);
    if (best_done && !live.empty()) {
      double best_live = -INFINITY;
      for (const Hyp& h : live) best_live = std::max(best_live, h.score);
      // Scores only decrease as hypotheses grow.
      if (best_done->score >= best_live) break;
    }
  }
  if (best_done) return *best_done;
  // Nothing completed within the cap: return the best truncated hypothesis.
  const auto it = std::max_element(live.begin(), live.end(),
                                   [](const Hyp& a, const Hyp& b) { return a.score < b.score; });
  return Decoded{it->body, true, it->score};
}

void write_decode_dump(const std::filesystem::path& path, const std::vector<DecodeRecord>& records) {
  std::vector<Json> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    out.push_back(Json{{"schema", kDecodeSchema},
                       {"example_id", r.example_id},
                       {"candidate_index", r.candidate_index},
                       {"seed", r.seed},
                       {"tokens", r.tokens},
                       {"truncated", r.truncated}});
  }
  write_jsonl(path, out);
}

std::vector<DecodeRecord> read_decode_dump(const std::filesystem::path& path) {
  std::vector<DecodeRecord> out;
  read_jsonl(path, kDecodeSchema, [&](const Json& j, std::size_t) {
    out.push_back(DecodeRecord{j.at("example_id").get<std::int64_t>(), j.at("candidate_index").get<int>(),
                               j.at("seed").get<std::uint64_t>(), tokens_from_json(j, "tokens"),
                               j.at("truncated").get<bool>()});
  });
  return out;
}

}  // namespace slic
