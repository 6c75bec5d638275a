#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "slic/data.hpp"
#include "test_util.hpp"

using namespace slic;

namespace {

TaskConfig small_task() {
  TaskConfig c;
  c.n_train = 60;
  c.n_validation = 20;
  c.n_test = 20;
  return c;
}

}  // namespace

TEST_CASE("without degradation the reference is the salient subsequence") {
  TaskConfig c = small_task();
  c.p_drop = 0.0;
  const SftDatasets d = gen_sft_dataset(c);
  for (const auto& e : d.train) {
    CHECK(e.reference == salient_subsequence(c, e.context));
    CHECK(e.reference == *e.salient);
    CHECK(e.reference.size() >= static_cast<std::size_t>(c.min_salient));
    CHECK(static_cast<int>(e.context.size()) >= c.context_min);
    CHECK(static_cast<int>(e.context.size()) <= c.context_max);
    const std::set<TokenId> distinct(e.reference.begin(), e.reference.end());
    CHECK(distinct.size() == e.reference.size());
  }
}

TEST_CASE("dataset generation is deterministic with exact disjoint splits") {
  const TaskConfig c = small_task();
  const SftDatasets a = gen_sft_dataset(c);
  const SftDatasets b = gen_sft_dataset(c);
  CHECK(a.train.size() == 60);
  CHECK(a.validation.size() == 20);
  CHECK(a.test.size() == 20);
  std::set<std::int64_t> ids;
  for (const auto* split : {&a.train, &a.validation, &a.test})
    for (const auto& e : *split) ids.insert(e.id);
  CHECK(ids.size() == 100);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].context == b.train[i].context);
    CHECK(a.train[i].reference == b.train[i].reference);
  }
  TaskConfig other = c;
  other.seed = c.seed + 1;
  CHECK(gen_sft_dataset(other).train[0].context != a.train[0].context);
}

TEST_CASE("task config validation") {
  TaskConfig c;
  c.eta = 0.7;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TaskConfig{};
  c.p_drop = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TaskConfig{};
  c.n_test = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TaskConfig{};
  c.min_salient = 30;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TaskConfig{};
  c.feedback_policies = {"reference", "oracle_magic"};
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("quality values") {
  const QualityWeights w;
  const Tokens s{12, 13, 14, 15};
  CHECK(quality(s, s, w) == 1.0);
  CHECK(quality({}, s, w) == 0.0);
  CHECK(quality({12, 13}, s, w) == doctest::Approx(0.5));
  // coverage 2/4, excess (6 - 4) / 4, hallucinated 4/6
  CHECK(quality({12, 13, 40, 41, 42, 43}, s, w) == doctest::Approx(0.5 - 0.5 * 0.5 - 4.0 / 6.0));
  // a repeated salient token counts once for coverage and is not a hallucination
  CHECK(quality({12, 12, 13, 14, 15}, s, w) == doctest::Approx(1.0 - 0.5 * 0.25));
  CHECK_THROWS_AS(quality({12}, {}, w), DataError);
}

TEST_CASE("oracle preference follows quality up to label noise") {
  const QualityWeights w;
  const Tokens s{12, 13, 14, 15};
  const Tokens good{12, 13, 14};
  const Tokens bad{12, 40};
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    CHECK(oracle_prefer(good, bad, s, w, 0.0, seed) == 0);
    CHECK(oracle_prefer(bad, good, s, w, 0.0, seed) == 1);
  }
  CHECK_THROWS_AS(oracle_prefer(good, good, s, w, 0.0, 1), Error);

  Rng rng(5);
  const double eta = 0.3;
  int agree = 0;
  for (int i = 0; i < 10000; ++i) agree += oracle_prefer(good, bad, s, w, eta, rng) == 0;
  CHECK(std::abs(agree / 10000.0 - (1.0 - eta)) < 0.02);

  // Quality ties are split evenly.
  int first = 0;
  for (int i = 0; i < 10000; ++i) first += oracle_prefer({12, 13}, {14, 15}, s, w, 0.0, rng) == 0;
  CHECK(std::abs(first / 10000.0 - 0.5) < 0.02);
}

TEST_CASE("noise-free feedback prefers the intact reference") {
  TaskConfig c = small_task();
  c.eta = 0.0;
  c.p_drop = 0.2;
  c.feedback_policies = {"reference", "ref_drop1"};
  c.feedback_pairs_per_example = 2;
  const SftDatasets d = gen_sft_dataset(c);
  FeedbackStats st;
  const auto fb = gen_feedback_dataset(d.train, c, 99, &st);
  CHECK(fb.size() == d.train.size() * 2 - st.skipped_identical);
  CHECK(st.generated == fb.size());
  std::map<std::int64_t, const SftExample*> by_id;
  for (const auto& e : d.train) by_id[e.id] = &e;
  for (const auto& r : fb) {
    const SftExample& e = *by_id.at(r.example_id);
    CHECK(r.policy0 != r.policy1);
    if (quality(r.y0, *e.salient, c.weights) != quality(r.y1, *e.salient, c.weights))
      CHECK(r.winner() == e.reference);
  }
}

TEST_CASE("feedback labels favour the policy with higher mean quality") {
  TaskConfig c = small_task();
  c.n_train = 400;
  const SftDatasets d = gen_sft_dataset(c);
  const auto fb = gen_feedback_dataset(d.train, c, 7);
  std::map<std::string, double> qsum;
  std::map<std::string, int> qn;
  std::map<std::int64_t, const SftExample*> by_id;
  for (const auto& e : d.train) by_id[e.id] = &e;
  for (const auto& r : fb) {
    const Tokens& s = *by_id.at(r.example_id)->salient;
    qsum[r.policy0] += quality(r.y0, s, c.weights);
    qn[r.policy0]++;
    qsum[r.policy1] += quality(r.y1, s, c.weights);
    qn[r.policy1]++;
  }
  int agree = 0, total = 0;
  for (const auto& r : fb) {
    const double m0 = qsum[r.policy0] / qn[r.policy0];
    const double m1 = qsum[r.policy1] / qn[r.policy1];
    if (m0 == m1) continue;
    ++total;
    agree += (m0 > m1) == (r.preferred == 0);
  }
  CHECK(total > 0);
  CHECK(agree / static_cast<double>(total) > 0.5);
}

TEST_CASE("degraded references are dominated by the full salient subsequence") {
  TaskConfig c = small_task();
  c.n_train = 500;
  c.p_drop = 0.3;
  const SftDatasets d = gen_sft_dataset(c);
  double mean = 0.0;
  for (const auto& e : d.train) mean += quality(e.reference, *e.salient, c.weights);
  mean /= static_cast<double>(d.train.size());
  CHECK(mean < 1.0);
  CHECK(mean == doctest::Approx(0.7).epsilon(0.05));
}

TEST_CASE("dataset files round trip and keep the oracle separate") {
  const auto dir = test::temp_dir("data_io");
  const TaskConfig c = small_task();
  const SftDatasets d = gen_sft_dataset(c);
  write_sft_split(dir / "train.jsonl", d.train);
  write_oracle(dir / "oracle.jsonl", d);
  auto back = read_sft_split(dir / "train.jsonl");
  REQUIRE(back.size() == d.train.size());
  CHECK_FALSE(back[0].salient.has_value());
  attach_oracle(back, read_oracle(dir / "oracle.jsonl"));
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].id == d.train[i].id);
    CHECK(back[i].context == d.train[i].context);
    CHECK(back[i].reference == d.train[i].reference);
    CHECK(*back[i].salient == *d.train[i].salient);
  }

  const auto fb = gen_feedback_dataset(d.train, c, 3);
  write_feedback(dir / "fb.jsonl", fb);
  const auto fb2 = read_feedback(dir / "fb.jsonl");
  REQUIRE(fb2.size() == fb.size());
  for (std::size_t i = 0; i < fb.size(); ++i) {
    CHECK(fb2[i].y0 == fb[i].y0);
    CHECK(fb2[i].y1 == fb[i].y1);
    CHECK(fb2[i].preferred == fb[i].preferred);
    CHECK(fb2[i].policy1 == fb[i].policy1);
  }

  std::filesystem::remove(dir / "oracle.jsonl");
  CHECK_THROWS_AS(read_oracle(dir / "oracle.jsonl"), DependencyError);
}

TEST_CASE("a truncated dataset file names the first bad line") {
  const auto dir = test::temp_dir("data_trunc");
  const SftDatasets d = gen_sft_dataset(small_task());
  write_sft_split(dir / "train.jsonl", d.train);
  std::string bytes = read_file(dir / "train.jsonl");
  const std::size_t third = bytes.find('\n', bytes.find('\n') + 1);
  write_file(dir / "train.jsonl", bytes.substr(0, third + 20));
  try {
    read_sft_split(dir / "train.jsonl");
    FAIL("expected a DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("train.jsonl:3") != std::string::npos);
  }
  write_file(dir / "v.jsonl", "{\"schema\":\"slic.sft/0\",\"id\":1}\n");
  CHECK_THROWS_AS(read_sft_split(dir / "v.jsonl"), DataError);
}
