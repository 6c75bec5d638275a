#include "doctest.h"

#include <cmath>
#include <map>

#include "slic/decoding.hpp"
#include "test_util.hpp"

using namespace slic;

namespace {

ModelParams small_model(std::uint64_t seed) {
  ModelConfig c = test::tiny_config();
  c.width = 16;
  c.max_len = 40;
  return init_model(c, seed);
}

}  // namespace

TEST_CASE("truncated distribution is normalized with support <= k") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    RowVec logits(24);
    for (int i = 0; i < 24; ++i) logits(i) = 3.0 * rng.normal();
    const int k = 1 + static_cast<int>(rng.below(24));
    const double temp = 0.1 + 2.0 * rng.uniform();
    const auto p = truncated_distribution(logits, temp, k);
    double sum = 0.0;
    int support = 0;
    for (double v : p) {
      sum += v;
      support += v > 0.0;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(support <= k);
  }
}

TEST_CASE("two-token sampling frequencies match the analytic distribution") {
  RowVec logits(2);
  logits << std::log(0.8), std::log(0.2);
  Rng rng(2024);
  int first = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) first += sample_token(logits, 1.0, 2, rng) == 0;
  CHECK(std::abs(first / double(n) - 0.8) <= 0.02);
}

TEST_CASE("top_k = 1 and vanishing temperature reduce sampling to greedy") {
  for (std::uint64_t seed : {1, 2, 3, 4}) {
    const ModelParams p = small_model(seed);
    const Tokens ctx{12, 15, 18, 13, 20};
    const Decoded g = greedy(p, ctx, 8);
    DecodeConfig k1;
    k1.top_k = 1;
    k1.max_len = 8;
    CHECK(sample(p, ctx, k1, 99 + seed).body == g.body);
    DecodeConfig cold;
    cold.temperature = 1e-6;
    cold.top_k = 20;
    cold.max_len = 8;
    CHECK(sample(p, ctx, cold, 7 * seed).body == g.body);
  }
}

TEST_CASE("candidate sets encode the context once and isolate seeds") {
  const ModelParams p = small_model(8);
  const Tokens ctx{12, 14, 16, 18};
  DecodeConfig cfg;
  cfg.max_len = 10;
  cfg.temperature = 1.0;
  cfg.top_k = 24;
  const CandidateSet one = sample_candidates(p, ctx, 1, cfg, 42);
  REQUIRE(one.candidates.size() == 1);
  CHECK(one.candidates[0].body == sample(p, ctx, cfg, candidate_seed(42, 0)).body);
  CHECK(one.context_encodes == 1);

  const CandidateSet eight = sample_candidates(p, ctx, 8, cfg, 42);
  CHECK(eight.context_encodes == 1);
  CHECK(eight.candidates.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) {
    const Decoded solo = sample(p, ctx, cfg, eight.seeds[i]);
    CHECK(solo.body == eight.candidates[i].body);
    CHECK(solo.score == eight.candidates[i].score);
  }
  const CandidateSet again = sample_candidates(p, ctx, 8, cfg, 42);
  for (std::size_t i = 0; i < 8; ++i) CHECK(again.candidates[i].body == eight.candidates[i].body);
  for (const auto& c : eight.candidates) {
    CHECK(std::find(c.body.begin(), c.body.end(), Vocab::kEos) == c.body.end());
    if (c.truncated) CHECK(c.body.size() == 10);
  }
}

TEST_CASE("beam size 1 is greedy") {
  for (std::uint64_t seed : {3, 5, 7}) {
    const ModelParams p = small_model(seed);
    const Tokens ctx{13, 17, 12};
    const Decoded g = greedy(p, ctx, 6);
    const Decoded b = beam_search(p, ctx, 1, 6);
    CHECK(b.body == g.body);
    CHECK(b.score == doctest::Approx(g.score).epsilon(1e-12));
  }
}

TEST_CASE("full-width beam equals the exhaustive argmax") {
  ModelConfig c = test::tiny_config();
  c.vocab_size = 14;
  const int L = 4;  // generated tokens including EOS
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    ModelParams p = init_model(c, seed);
    // Push EOS down so the optimum is not always the empty body.
    for (const auto& t : parameter_tensors(c))
      if (t.name == "head.b") p.values[t.offset + Vocab::kEos] = -1.5 + 0.5 * static_cast<double>(seed % 3);
    const Tokens ctx{12, 13};
    // Oracle: score every completed sequence of length <= L.
    double best = -INFINITY;
    Tokens best_body;
    std::vector<Tokens> frontier{{}};
    for (int len = 0; len < L; ++len) {
      std::vector<Tokens> next;
      for (const Tokens& body : frontier) {
        Tokens y = body;
        y.push_back(Vocab::kEos);
        const double s = sequence_log_prob(p, ctx, y).total;
        if (s > best) {
          best = s;
          best_body = body;
        }
        for (TokenId t = 0; t < c.vocab_size; ++t) {
          if (t == Vocab::kEos) continue;
          Tokens b = body;
          b.push_back(t);
          next.push_back(b);
        }
      }
      frontier = std::move(next);
    }
    const int full = static_cast<int>(std::pow(c.vocab_size, L));
    const Decoded d = beam_search(p, ctx, full, L);
    CHECK_FALSE(d.truncated);
    CHECK(d.body == best_body);
    CHECK(d.score == doctest::Approx(best).epsilon(1e-9));
    CHECK(d.score >= beam_search(p, ctx, 1, L).score - 1e-12);
  }
}

TEST_CASE("beam score equals the recomputed sequence log-prob") {
  const ModelParams p = small_model(17);
  for (const Tokens& ctx : {Tokens{12, 13, 14}, Tokens{20, 21, 22, 23, 12}}) {
    const Decoded d = beam_search(p, ctx, 4, 8);
    if (d.truncated) continue;
    CHECK(d.score == doctest::Approx(sequence_log_prob(p, ctx, d.target()).total).epsilon(1e-6));
  }
}

TEST_CASE("decode dump round trip") {
  const auto dir = test::temp_dir("decode_dump");
  std::vector<DecodeRecord> recs{{3, 0, 11, {12, 13}, false}, {3, 1, 12, {}, true}};
  write_decode_dump(dir / "d.jsonl", recs);
  const auto back = read_decode_dump(dir / "d.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[0].tokens == recs[0].tokens);
  CHECK(back[1].truncated);
  CHECK(back[1].seed == 12);
}
