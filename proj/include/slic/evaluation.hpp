#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "slic/data.hpp"
#include "slic/io.hpp"
#include "slic/model.hpp"

namespace slic {

struct OverlapMetrics {
  double r1 = 0.0;  // unigram F1
  double r2 = 0.0;  // bigram F1
  double rl = 0.0;  // longest-common-subsequence F1
};

// Token-level overlap; two empty sequences score 0 on every metric.
OverlapMetrics overlap_metrics(const Tokens& candidate, const Tokens& reference);

struct Interval {
  double low = 0.0;
  double high = 1.0;
};
// 95% Wilson score interval; successes may be fractional (ties count 1/2).
Interval wilson_interval(double successes, std::size_t n);

std::vector<double> default_bucket_edges();  // {0.8, 1.2, 1.6}

struct BucketRow {
  std::string label;
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double win_rate = 0.0;
  bool empty = true;
};

// Buckets over len(decode) / len(reference). A zero-length reference gives
// ratio 1 against an empty decode and +inf otherwise.
std::vector<BucketRow> bucketed_win_rate(const std::vector<double>& outcomes, const std::vector<Tokens>& decodes,
                                         const std::vector<Tokens>& references, const std::vector<double>& edges);

struct WinRateReport {
  std::string judge;
  std::size_t n = 0;
  double win_rate = 0.0;
  Interval ci;
  double mean_len = 0.0;
  double median_len = 0.0;
  double mean_ref_len = 0.0;
  double median_ref_len = 0.0;
  std::vector<BucketRow> buckets;
  OverlapMetrics overlap;  // mean over examples
  std::vector<double> outcomes;  // per example: 1 decode preferred, 0 reference preferred, 1/2 tie
};

// Aggregates per-example outcomes into a report.
WinRateReport build_report(const std::string& judge, std::vector<double> outcomes, const std::vector<Tokens>& decodes,
                           const std::vector<Tokens>& references, const std::vector<double>& edges);

Json to_json(const WinRateReport& r);
WinRateReport report_from_json(const Json& j);

// Judge-based win rate of decodes over references using the order-debiased pairwise preference.
WinRateReport win_rate(const ModelParams& judge, const std::vector<Tokens>& decodes,
                       const std::vector<Tokens>& references, const std::vector<Tokens>& contexts,
                       const std::vector<double>& edges = default_bucket_edges());

// Same aggregation with the noise-free quality oracle.
WinRateReport oracle_win_rate(const std::vector<Tokens>& decodes, const std::vector<Tokens>& references,
                              const std::vector<std::int64_t>& example_ids, const OracleIndex& oracle,
                              const QualityWeights& weights,
                              const std::vector<double>& edges = default_bucket_edges());

struct ComparisonRow {
  std::string system;
  std::optional<WinRateReport> judge;
  std::optional<WinRateReport> oracle;
  double truncation_rate = 0.0;
};

// Writes comparison.tsv, comparison.txt, buckets.csv and summary.json under dir.
void emit_report(const std::vector<ComparisonRow>& rows, const std::filesystem::path& dir);

}  // namespace slic
