#include "doctest.h"

#include <algorithm>
#include <numeric>

#include "slic/losses.hpp"
#include "slic/pipelines.hpp"
#include "slic/preference.hpp"
#include "test_util.hpp"

using namespace slic;

namespace {

TaskConfig easy_task() {
  TaskConfig c;
  c.vocab_size = 24;
  c.salient_classes = 6;
  c.context_min = 8;
  c.context_max = 12;
  c.salient_density = 0.3;
  c.n_train = 600;
  c.n_validation = 200;
  c.n_test = 10;
  c.eta = 0.0;
  c.feedback_pairs_per_example = 2;
  return c;
}

JudgeTrainConfig small_judge() {
  JudgeTrainConfig j;
  j.model.vocab_size = 24;
  j.model.width = 16;
  j.model.layers = 1;
  j.model.heads = 2;
  j.model.mlp_ratio = 2;
  j.model.max_len = 48;
  j.steps = 1500;
  j.batch_size = 32;
  j.lr = 3e-3;
  j.eval_every = 100;
  return j;
}

}  // namespace

TEST_CASE("pointwise rows carry the label of the side") {
  const Tokens x{12, 30, 13};
  const PreferenceRecord r{1, 1, x, {12, 13}, {12}, 0, "oracle", "a", "b"};
  const auto rows = judge_rows(r, JudgeKind::Pointwise, 64);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].target == Tokens{Vocab::kGood, Vocab::kEos});
  CHECK(rows[1].target == Tokens{Vocab::kBad, Vocab::kEos});
  CHECK(rows[0].input == Tokens{Vocab::kContext, 12, 30, 13, Vocab::kSummary, 12, 13});
  const PointwiseFields f = parse_pointwise(rows[1]);
  CHECK(f.x == x);
  CHECK(f.y == Tokens{12});
  CHECK(f.label == Vocab::kBad);

  const FormattedRow empty = format_pointwise(x, {}, Vocab::kGood, 64);
  CHECK(parse_pointwise(empty).y.empty());
  CHECK_THROWS(format_pointwise(x, {12}, Vocab::kA, 64));
}

TEST_CASE("pairwise rows present both orders") {
  const Tokens x{12, 30, 13};
  const PreferenceRecord r{1, 1, x, {12, 13}, {12}, 0, "oracle", "a", "b"};
  const auto rows = judge_rows(r, JudgeKind::Pairwise, 64);
  REQUIRE(rows.size() == 2);
  const PairwiseFields f0 = parse_pairwise(rows[0]);
  const PairwiseFields f1 = parse_pairwise(rows[1]);
  CHECK(f0.ya == r.y0);
  CHECK(f0.yb == r.y1);
  CHECK(f0.label == Vocab::kA);
  CHECK(f1.ya == r.y1);
  CHECK(f1.yb == r.y0);
  CHECK(f1.label == Vocab::kB);
  CHECK(f0.x == x);
  CHECK_THROWS(format_pairwise(x, {12}, {12}, Vocab::kA, 64));
}

TEST_CASE("long contexts are cut to fit the judge") {
  Tokens x(40, 30);
  const FormattedRow row = format_pairwise(x, {12, 13}, {14}, Vocab::kA, 20);
  CHECK(layout_sequence(row.input, row.target).input.size() <= 20);
  const PairwiseFields f = parse_pairwise(row);
  CHECK(f.ya == Tokens{12, 13});
  CHECK(f.yb == Tokens{14});
  CHECK(f.x.size() == 20 - 3 - 6);
  CHECK_THROWS(format_pointwise(x, Tokens(30, 12), Vocab::kGood, 20));
}

TEST_CASE("a uniform judge is indifferent") {
  ModelParams p = init_model(test::tiny_config(), 4);
  force_uniform_head(p);
  CHECK(score_pointwise(p, {12, 13}, {12}) == doctest::Approx(0.5).epsilon(1e-12));
  const Preference a = prefer_pairwise(p, {12, 13}, {13}, {12});
  CHECK(a.confidence == 0.5);
  CHECK(a.winner == 1);  // tie goes to the lexicographically smaller candidate
  const Preference b = prefer_pairwise(p, {12, 13}, {12}, {13});
  CHECK(b.winner == 0);
}

TEST_CASE("pairwise preference is invariant under argument swap") {
  const ModelParams p = init_model(test::tiny_config(), 8);
  Rng rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    Tokens x(6), y0(1 + rng.below(4)), y1(1 + rng.below(4));
    for (auto& t : x) t = 12 + static_cast<TokenId>(rng.below(12));
    for (auto& t : y0) t = 12 + static_cast<TokenId>(rng.below(12));
    for (auto& t : y1) t = 12 + static_cast<TokenId>(rng.below(12));
    if (y0 == y1) continue;
    const Preference a = prefer_pairwise(p, x, y0, y1);
    const Preference b = prefer_pairwise(p, x, y1, y0);
    CHECK(a.winner == 1 - b.winner);
    CHECK(a.confidence == doctest::Approx(1.0 - b.confidence).epsilon(1e-15));
    CHECK(a.confidence >= 0.0);
    CHECK(a.confidence <= 1.0);
    const double s = score_pointwise(p, x, y0);
    const Tokens in = format_pointwise(x, y0, Vocab::kGood, p.config.max_len).input;
    const double bad = 1.0 / (1.0 + std::exp(-label_log_odds(p, in, Vocab::kBad, Vocab::kGood)));
    CHECK(s + bad == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS(prefer_pairwise(p, {12}, {13}, {13}));
}

TEST_CASE("tournament finds the maximum of a transitive comparator for every seeding") {
  for (std::size_t m = 2; m <= 6; ++m) {
    std::vector<int> hidden(m);
    std::iota(hidden.begin(), hidden.end(), 0);
    do {
      std::size_t calls = 0;
      const Bracket b = tournament(m, [&](std::size_t i, std::size_t j) {
        ++calls;
        return hidden[i] > hidden[j] ? i : j;
      });
      const auto best = static_cast<std::size_t>(std::max_element(hidden.begin(), hidden.end()) - hidden.begin());
      CHECK(b.winner == best);
      CHECK(b.comparisons == m - 1);
      CHECK(calls == m - 1);
      CHECK(b.pairs.size() == m - 1);
      for (const auto& [w, l] : b.pairs) CHECK(hidden[w] > hidden[l]);
    } while (std::next_permutation(hidden.begin(), hidden.end()));
  }
}

TEST_CASE("tournament comparison count is m - 1") {
  for (std::size_t m = 1; m <= 64; ++m) {
    const Bracket b = tournament(m, [](std::size_t i, std::size_t j) { return (i * 7 + j) % 3 == 0 ? i : j; });
    CHECK(b.comparisons == m - 1);
    CHECK(b.pairs.size() == m - 1);
  }
  const Bracket single = tournament(1, [](std::size_t, std::size_t) -> std::size_t { throw Error("unused"); });
  CHECK(single.winner == 0);
  CHECK(single.pairs.empty());
}

TEST_CASE("bracket seeding is left to right with byes") {
  std::vector<std::pair<std::size_t, std::size_t>> games;
  const Bracket b = tournament(5, [&](std::size_t i, std::size_t j) {
    games.emplace_back(i, j);
    return std::min(i, j);
  });
  const std::vector<std::pair<std::size_t, std::size_t>> expected{{0, 1}, {2, 3}, {0, 2}, {0, 4}};
  CHECK(games == expected);
  CHECK(b.winner == 0);
}

TEST_CASE("judge tournaments drop duplicate candidates and emit distinct pairs") {
  const ModelParams p = init_model(test::tiny_config(), 12);
  const Tokens x{12, 13, 14, 20};
  const std::vector<Tokens> cands{{12}, {13, 14}, {12}, {14}, {12, 13}, {13, 14}, {15}, {16}};
  const TournamentResult r = tournament_rank(p, x, cands);
  CHECK(r.pairs.source == "tournament");
  CHECK(r.pairs.comparisons == 5);  // six distinct texts
  CHECK(r.pairs.pairs.size() == 5);
  for (const auto& pr : r.pairs.pairs) {
    CHECK(pr.winner != pr.loser);
    CHECK(pr.confidence >= 0.5);
  }
  const std::vector<Tokens> eight{{12}, {13}, {14}, {15}, {16}, {17}, {18}, {19}};
  const TournamentResult full = tournament_rank(p, x, eight);
  CHECK(full.pairs.pairs.size() == 7);
  CHECK(full.pairs.comparisons == 7);
  // The overall winner never lost a comparison.
  for (const auto& pr : full.pairs.pairs) CHECK(pr.loser != eight[full.winner_index]);
  CHECK(tournament_rank(p, x, {{12}, {12}}).pairs.pairs.empty());
}

TEST_CASE("reward-sampled pairs follow score order") {
  const RankedPairs one = sample_pairs_by_reward({{12}, {13}}, {0.9, 0.1}, 4, 1);
  REQUIRE(one.pairs.size() == 1);
  CHECK(one.pairs[0].winner == Tokens{12});
  CHECK(one.pairs[0].loser == Tokens{13});
  CHECK(one.source == "reward_sampled");

  CHECK_THROWS(sample_pairs_by_reward({{12}, {12}, {12}}, {0.2, 0.2, 0.2}, 2, 1));

  std::vector<Tokens> c;
  std::vector<double> s;
  for (int i = 0; i < 8; ++i) {
    c.push_back({12 + i});
    s.push_back(0.1 * i);
  }
  const RankedPairs eight = sample_pairs_by_reward(c, s, 8, 5);
  CHECK(eight.pairs.size() == 8);
  for (const auto& pr : eight.pairs) CHECK(pr.winner[0] > pr.loser[0]);
  // Distinct unordered pairs.
  for (std::size_t i = 0; i < eight.pairs.size(); ++i)
    for (std::size_t j = i + 1; j < eight.pairs.size(); ++j)
      CHECK_FALSE((eight.pairs[i].winner == eight.pairs[j].winner && eight.pairs[i].loser == eight.pairs[j].loser));

  // Ties are skipped; the pool may run dry.
  const RankedPairs tied = sample_pairs_by_reward({{12}, {13}, {14}}, {0.5, 0.5, 0.7}, 8, 2);
  CHECK(tied.pairs.size() == 2);
}

TEST_CASE("trained judges learn a deterministic oracle") {
  const TaskConfig task = easy_task();
  const SftDatasets d = gen_sft_dataset(task);
  const auto train = gen_feedback_dataset(d.train, task, 1);
  const auto val = gen_feedback_dataset(d.validation, task, 2);
  // Judges start from a backbone trained on the summarization data.
  CeTrainConfig pre;
  pre.steps = 300;
  pre.lr = 3e-3;
  const ModelParams backbone = run_sft(d, small_judge().model, 3, pre).params;
  for (JudgeKind kind : {JudgeKind::Pairwise, JudgeKind::Pointwise}) {
    const JudgeTrainResult r = train_judge(train, val, kind, small_judge(), backbone);
    CHECK(r.best_accuracy > 0.7);
    CHECK(judge_accuracy(r.params, kind, val) == doctest::Approx(r.best_accuracy));
    // Flipping every label mirrors the accuracy.
    auto flipped = val;
    for (auto& rec : flipped) rec.preferred = 1 - rec.preferred;
    CHECK(judge_accuracy(r.params, kind, flipped) == doctest::Approx(1.0 - r.best_accuracy).epsilon(1e-12));
    // The returned checkpoint is the best evaluated one.
    for (const auto& row : r.log)
      if (row.val_accuracy >= 0) CHECK(row.val_accuracy <= r.best_accuracy);
  }
}

TEST_CASE("random labels give chance accuracy") {
  TaskConfig task = easy_task();
  task.n_validation = 1000;
  task.feedback_pairs_per_example = 1;
  const SftDatasets d = gen_sft_dataset(task);
  auto train = gen_feedback_dataset(d.train, task, 1);
  auto val = gen_feedback_dataset(d.validation, task, 2);
  Rng rng(77);
  for (auto& r : train) r.preferred = static_cast<int>(rng.below(2));
  for (auto& r : val) r.preferred = static_cast<int>(rng.below(2));
  JudgeTrainConfig cfg = small_judge();
  cfg.steps = 100;
  cfg.eval_every = 50;
  cfg.min_accuracy_over_chance = -1.0;
  const JudgeTrainResult r = train_judge(train, val, JudgeKind::Pairwise, cfg);
  CHECK(std::abs(r.best_accuracy - 0.5) < 0.05);
  cfg.min_accuracy_over_chance = 0.2;
  CHECK_THROWS_AS(train_judge(train, val, JudgeKind::Pairwise, cfg), ConvergenceError);
}

TEST_CASE("ranked pairs file round trip") {
  const auto dir = test::temp_dir("pairs_io");
  const std::vector<RankedPairRecord> recs{{3, {12, 13}, {12}, {13}, "tournament", 0.75},
                                           {4, {14}, {14, 15}, {}, "reward_sampled", 0.6180339887498949}};
  write_ranked_pairs(dir / "p.jsonl", recs);
  const auto back = read_ranked_pairs(dir / "p.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[1].confidence == recs[1].confidence);
  CHECK(back[1].loser.empty());
  CHECK(back[0].source == "tournament");
  CHECK(back[0].winner == recs[0].winner);
}
