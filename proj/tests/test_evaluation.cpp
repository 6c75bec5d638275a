#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "slic/evaluation.hpp"
#include "test_util.hpp"

using namespace slic;

TEST_CASE("overlap metric examples") {
  const OverlapMetrics same = overlap_metrics({12, 13, 14}, {12, 13, 14});
  CHECK(same.r1 == 1.0);
  CHECK(same.r2 == 1.0);
  CHECK(same.rl == 1.0);
  const OverlapMetrics single = overlap_metrics({12}, {12});
  CHECK(single.r1 == 1.0);
  CHECK(single.r2 == 1.0);
  CHECK(single.rl == 1.0);
  const OverlapMetrics disjoint = overlap_metrics({12, 13}, {14, 15});
  CHECK(disjoint.r1 == 0.0);
  CHECK(disjoint.r2 == 0.0);
  CHECK(disjoint.rl == 0.0);
  const OverlapMetrics empty = overlap_metrics({}, {});
  CHECK(empty.r1 == 0.0);
  CHECK(empty.r2 == 0.0);
  CHECK(empty.rl == 0.0);
  // [a b c d] vs [a b e]
  const OverlapMetrics m = overlap_metrics({1, 2, 3, 4}, {1, 2, 5});
  CHECK(m.r1 == doctest::Approx(4.0 / 7.0));
  CHECK(m.rl == doctest::Approx(4.0 / 7.0));
  // bigrams: {ab, bc, cd} vs {ab, be}: P = 1/3, R = 1/2
  CHECK(m.r2 == doctest::Approx(0.4));
  // Unigram F1 ignores order, LCS does not.
  const OverlapMetrics perm = overlap_metrics({12, 13}, {13, 12});
  CHECK(perm.r1 == 1.0);
  CHECK(perm.rl < 1.0);
}

TEST_CASE("overlap metrics stay in the unit interval") {
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    Tokens a(rng.below(6)), b(rng.below(6));
    for (auto& t : a) t = static_cast<TokenId>(rng.below(4));
    for (auto& t : b) t = static_cast<TokenId>(rng.below(4));
    const OverlapMetrics m = overlap_metrics(a, b);
    for (double v : {m.r1, m.r2, m.rl}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK((m.rl == 1.0) == (a == b && !a.empty()));
    if (a == b && !a.empty()) CHECK(m.r1 == 1.0);
  }
}

TEST_CASE("wilson interval") {
  const Interval ci = wilson_interval(50, 100);
  CHECK(ci.low == doctest::Approx(0.40383).epsilon(1e-4));
  CHECK(ci.high == doctest::Approx(0.59617).epsilon(1e-4));
  const Interval all = wilson_interval(10, 10);
  CHECK(all.high == doctest::Approx(1.0));
  CHECK(all.low > 0.6);
}

TEST_CASE("hand-tallied report") {
  const std::vector<Tokens> dec{{12}, {12, 13}, {12, 13, 14}, {12, 13, 14, 15, 16}};
  const std::vector<Tokens> ref{{13}, {12, 13}, {12, 13}, {12, 13}};
  const WinRateReport r = build_report("manual", {1.0, 0.0, 0.5, 1.0}, dec, ref, default_bucket_edges());
  CHECK(r.win_rate == doctest::Approx(0.625));
  CHECK(r.n == 4);
  CHECK(r.mean_len == doctest::Approx(2.75));
  CHECK(r.median_len == doctest::Approx(2.5));
  CHECK(r.median_ref_len == doctest::Approx(2.0));
  // ratios 1, 1, 1.5, 2.5
  REQUIRE(r.buckets.size() == 4);
  CHECK(r.buckets[0].label == "<0.8");
  CHECK(r.buckets[0].empty);
  CHECK(r.buckets[1].label == "0.8-1.2");
  CHECK(r.buckets[1].count == 2);
  CHECK(r.buckets[1].win_rate == doctest::Approx(0.5));
  CHECK(r.buckets[2].count == 1);
  CHECK(r.buckets[2].win_rate == doctest::Approx(0.5));
  CHECK(r.buckets[3].label == ">=1.6");
  CHECK(r.buckets[3].count == 1);
  CHECK(r.buckets[3].win_rate == 1.0);
}

TEST_CASE("bucketing of skewed lengths") {
  std::vector<Tokens> dec, ref;
  std::vector<double> out;
  for (int len = 0; len <= 20; ++len) {
    dec.push_back(Tokens(static_cast<std::size_t>(len), 12));
    ref.push_back(Tokens(10, 12));
    out.push_back(len % 2);
  }
  dec.push_back({12});
  ref.push_back({});
  out.push_back(1.0);
  const auto rows = bucketed_win_rate(out, dec, ref, default_bucket_edges());
  // ratios len/10: [0, 0.8) -> 0..7, [0.8, 1.2) -> 8..11, [1.2, 1.6) -> 12..15, >= 1.6 -> 16..20 and the inf ratio
  CHECK(rows[0].count == 8);
  CHECK(rows[1].count == 4);
  CHECK(rows[2].count == 4);
  CHECK(rows[3].count == 6);
  CHECK(rows[0].win_rate == doctest::Approx(0.5));
  CHECK(rows[3].win_rate == doctest::Approx(0.5));
  std::size_t total = 0;
  for (const auto& b : rows) total += b.count;
  CHECK(total == dec.size());

  const auto flat = bucketed_win_rate({1.0, 0.0, 1.0}, {{12}, {13}, {14}}, {{15}, {16}, {17}}, default_bucket_edges());
  CHECK(flat[1].count == 3);
  CHECK(flat[1].win_rate == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("judge win rate symmetry and complement") {
  const ModelParams judge = init_model(test::tiny_config(), 14);
  std::vector<Tokens> a, b, x;
  Rng rng(9);
  for (int i = 0; i < 30; ++i) {
    Tokens ctx(5), ya(1 + rng.below(3)), yb(1 + rng.below(3));
    for (auto& t : ctx) t = 12 + static_cast<TokenId>(rng.below(12));
    for (auto& t : ya) t = 12 + static_cast<TokenId>(rng.below(12));
    for (auto& t : yb) t = 12 + static_cast<TokenId>(rng.below(12));
    if (ya == yb) continue;
    x.push_back(ctx);
    a.push_back(ya);
    b.push_back(yb);
  }
  CHECK(win_rate(judge, a, a, x).win_rate == 0.5);
  const double ab = win_rate(judge, a, b, x).win_rate;
  const double ba = win_rate(judge, b, a, x).win_rate;
  CHECK(ab + ba == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS(win_rate(judge, a, b, {}));
}

TEST_CASE("oracle win rate") {
  const OracleIndex oracle{{1, {12, 13, 14}}, {2, {15, 16}}};
  const QualityWeights w;
  const std::vector<Tokens> full{{12, 13, 14}, {15, 16}};
  const std::vector<Tokens> degraded{{12}, {16}};
  CHECK(oracle_win_rate(degraded, degraded, {1, 2}, oracle, w).win_rate == 0.5);
  CHECK(oracle_win_rate(full, degraded, {1, 2}, oracle, w).win_rate == 1.0);
  CHECK(oracle_win_rate(degraded, full, {1, 2}, oracle, w).win_rate == 0.0);
  CHECK_THROWS_AS(oracle_win_rate(full, degraded, {1, 3}, oracle, w), DependencyError);
}

TEST_CASE("reports are byte-deterministic") {
  const std::vector<Tokens> dec{{12}, {12, 13}}, ref{{13}, {12, 13}};
  std::vector<ComparisonRow> rows;
  rows.push_back({"reference", build_report("pairwise-judge", {0.5, 0.5}, ref, ref, default_bucket_edges()),
                  build_report("oracle", {0.5, 0.5}, ref, ref, default_bucket_edges()), 0.0});
  rows.push_back({"sft", std::nullopt, build_report("oracle", {1.0, 0.5}, dec, ref, default_bucket_edges()), 0.5});
  const auto d1 = test::temp_dir("report1");
  const auto d2 = test::temp_dir("report2");
  emit_report(rows, d1);
  emit_report(rows, d2);
  for (const char* f : {"comparison.tsv", "comparison.txt", "buckets.csv", "summary.json"})
    CHECK(read_file(d1 / f) == read_file(d2 / f));
  const std::string tsv = read_file(d1 / "comparison.tsv");
  CHECK(std::count(tsv.begin(), tsv.end(), '\n') == 3);
  CHECK(tsv.find("reference\t2\t") != std::string::npos);
  CHECK(tsv.find("0.5000\t") != std::string::npos);
  CHECK(read_file(d1 / "comparison.txt").find("50.00%") != std::string::npos);
}
