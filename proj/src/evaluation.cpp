#include "slic/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "slic/io.hpp"
#include "slic/preference.hpp"

namespace slic {

namespace {

double f1(double overlap, double n_cand, double n_ref) {
  if (overlap <= 0.0 || n_cand <= 0.0 || n_ref <= 0.0) return 0.0;
  const double p = overlap / n_cand;
  const double r = overlap / n_ref;
  return 2.0 * p * r / (p + r);
}

template <class Key>
double clipped_overlap(const std::vector<Key>& a, const std::vector<Key>& b) {
  std::map<Key, int> ca, cb;
  for (const auto& k : a) ca[k]++;
  for (const auto& k : b) cb[k]++;
  double n = 0.0;
  for (const auto& [k, c] : ca) {
    const auto it = cb.find(k);
    if (it != cb.end()) n += std::min(c, it->second);
  }
  return n;
}

std::vector<std::pair<TokenId, TokenId>> bigrams(const Tokens& t) {
  std::vector<std::pair<TokenId, TokenId>> out;
  for (std::size_t i = 0; i + 1 < t.size(); ++i) out.emplace_back(t[i], t[i + 1]);
  return out;
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string edge_label(double lo, double hi) {
  if (std::isinf(lo) && lo < 0) return "<" + fmt("%g", hi);
  if (std::isinf(hi)) return ">=" + fmt("%g", lo);
  return fmt("%g", lo) + "-" + fmt("%g", hi);
}

}  // namespace

OverlapMetrics overlap_metrics(const Tokens& c, const Tokens& r) {
  OverlapMetrics m;
  if (c.empty() && r.empty()) return m;
  const double nc = static_cast<double>(c.size()), nr = static_cast<double>(r.size());
  m.r1 = f1(clipped_overlap(c, r), nc, nr);
  const auto bc = bigrams(c), br = bigrams(r);
  if (bc.empty() && br.empty())
    m.r2 = c == r ? 1.0 : 0.0;
  else
    m.r2 = f1(clipped_overlap(bc, br), static_cast<double>(bc.size()), static_cast<double>(br.size()));
  m.rl = f1(static_cast<double>(lcs_length(c, r)), nc, nr);
  return m;
}

Interval wilson_interval(double successes, std::size_t n) {
  if (n == 0) return {0.0, 1.0};
  const double z = 1.959963984540054;
  const double nn = static_cast<double>(n);
  const double p = successes / nn;
  const double denom = 1.0 + z * z / nn;
  const double centre = (p + z * z / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / nn + z * z / (4.0 * nn * nn)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

std::vector<double> default_bucket_edges() { return {0.8, 1.2, 1.6}; }

std::vector<BucketRow> bucketed_win_rate(const std::vector<double>& outcomes, const std::vector<Tokens>& decodes,
                                         const std::vector<Tokens>& references, const std::vector<double>& edges) {
  if (outcomes.size() != decodes.size() || decodes.size() != references.size())
    throw Error("bucketed_win_rate: inputs differ in length");
  if (!std::is_sorted(edges.begin(), edges.end())) throw ConfigError("bucket edges must be increasing");
  std::vector<BucketRow> rows;
  double lo = -INFINITY;
  for (std::size_t i = 0; i <= edges.size(); ++i) {
    const double hi = i < edges.size() ? edges[i] : INFINITY;
    rows.push_back({edge_label(lo, hi), lo, hi, 0, 0.0, true});
    lo = hi;
  }
  std::vector<double> wins(rows.size(), 0.0);
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const double ld = static_cast<double>(decodes[i].size());
    const double lr = static_cast<double>(references[i].size());
    const double ratio = lr > 0 ? ld / lr : (ld == 0 ? 1.0 : INFINITY);
    const std::size_t b = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), ratio) - edges.begin());
    rows[b].count++;
    wins[b] += outcomes[i];
  }
  for (std::size_t b = 0; b < rows.size(); ++b) {
    rows[b].empty = rows[b].count == 0;
    rows[b].win_rate = rows[b].empty ? 0.0 : wins[b] / static_cast<double>(rows[b].count);
  }
  return rows;
}

WinRateReport build_report(const std::string& judge, std::vector<double> outcomes, const std::vector<Tokens>& decodes,
                           const std::vector<Tokens>& references, const std::vector<double>& edges) {
  if (outcomes.size() != decodes.size() || decodes.size() != references.size())
    throw Error("win-rate inputs differ in length");
  if (outcomes.empty()) throw Error("win-rate report over zero examples");
  WinRateReport r;
  r.judge = judge;
  r.n = outcomes.size();
  double wins = 0.0;
  for (double o : outcomes) wins += o;
  r.win_rate = wins / static_cast<double>(r.n);
  r.ci = wilson_interval(wins, r.n);
  std::vector<double> ld, lr;
  OverlapMetrics sum;
  for (std::size_t i = 0; i < r.n; ++i) {
    ld.push_back(static_cast<double>(decodes[i].size()));
    lr.push_back(static_cast<double>(references[i].size()));
    const OverlapMetrics m = overlap_metrics(decodes[i], references[i]);
    sum.r1 += m.r1;
    sum.r2 += m.r2;
    sum.rl += m.rl;
  }
  const double n = static_cast<double>(r.n);
  r.overlap = {sum.r1 / n, sum.r2 / n, sum.rl / n};
  r.mean_len = mean(ld);
  r.median_len = median(ld);
  r.mean_ref_len = mean(lr);
  r.median_ref_len = median(lr);
  r.buckets = bucketed_win_rate(outcomes, decodes, references, edges);
  r.outcomes = std::move(outcomes);
  return r;
}

WinRateReport win_rate(const ModelParams& judge, const std::vector<Tokens>& decodes,
                       const std::vector<Tokens>& references, const std::vector<Tokens>& contexts,
                       const std::vector<double>& edges) {
  if (decodes.size() != references.size() || decodes.size() != contexts.size())
    throw Error("win_rate: decodes, references and contexts differ in length");
  std::vector<double> outcomes;
  outcomes.reserve(decodes.size());
  for (std::size_t i = 0; i < decodes.size(); ++i) {
    if (decodes[i] == references[i]) {
      outcomes.push_back(0.5);
      continue;
    }
    const Preference p = prefer_pairwise(judge, contexts[i], decodes[i], references[i]);
    outcomes.push_back(p.confidence > 0.5 ? 1.0 : p.confidence < 0.5 ? 0.0 : 0.5);
  }
  return build_report("pairwise-judge", std::move(outcomes), decodes, references, edges);
}

WinRateReport oracle_win_rate(const std::vector<Tokens>& decodes, const std::vector<Tokens>& references,
                              const std::vector<std::int64_t>& example_ids, const OracleIndex& oracle,
                              const QualityWeights& weights, const std::vector<double>& edges) {
  if (decodes.size() != references.size() || decodes.size() != example_ids.size())
    throw Error("oracle_win_rate: inputs differ in length");
  std::vector<double> outcomes;
  outcomes.reserve(decodes.size());
  for (std::size_t i = 0; i < decodes.size(); ++i) {
    const auto it = oracle.find(example_ids[i]);
    if (it == oracle.end())
      throw DependencyError("oracle sidecar has no entry for example " + std::to_string(example_ids[i]));
    const double qd = quality(decodes[i], it->second, weights);
    const double qr = quality(references[i], it->second, weights);
    outcomes.push_back(qd > qr ? 1.0 : qd < qr ? 0.0 : 0.5);
  }
  return build_report("oracle", std::move(outcomes), decodes, references, edges);
}

Json to_json(const WinRateReport& r) {
  Json buckets = Json::array();
  for (const auto& b : r.buckets)
    buckets.push_back(Json{{"label", b.label}, {"count", b.count}, {"win_rate", b.win_rate}, {"empty", b.empty}});
  return Json{{"judge", r.judge},
              {"n", r.n},
              {"win_rate", r.win_rate},
              {"ci_low", r.ci.low},
              {"ci_high", r.ci.high},
              {"mean_len", r.mean_len},
              {"median_len", r.median_len},
              {"mean_ref_len", r.mean_ref_len},
              {"median_ref_len", r.median_ref_len},
              {"r1", r.overlap.r1},
              {"r2", r.overlap.r2},
              {"rl", r.overlap.rl},
              {"buckets", buckets},
              {"outcomes", r.outcomes}};
}

WinRateReport report_from_json(const Json& j) {
  WinRateReport r;
  try {
    r.judge = j.at("judge").get<std::string>();
    r.n = j.at("n").get<std::size_t>();
    r.win_rate = j.at("win_rate").get<double>();
    r.ci = {j.at("ci_low").get<double>(), j.at("ci_high").get<double>()};
    r.mean_len = j.at("mean_len").get<double>();
    r.median_len = j.at("median_len").get<double>();
    r.mean_ref_len = j.at("mean_ref_len").get<double>();
    r.median_ref_len = j.at("median_ref_len").get<double>();
    r.overlap = {j.at("r1").get<double>(), j.at("r2").get<double>(), j.at("rl").get<double>()};
    for (const auto& b : j.at("buckets")) {
      BucketRow row;
      row.label = b.at("label").get<std::string>();
      row.count = b.at("count").get<std::size_t>();
      row.win_rate = b.at("win_rate").get<double>();
      row.empty = b.at("empty").get<bool>();
      r.buckets.push_back(row);
    }
    r.outcomes = j.at("outcomes").get<std::vector<double>>();
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed win-rate report: ") + e.what());
  }
  return r;
}

void emit_report(const std::vector<ComparisonRow>& rows, const std::filesystem::path& dir) {
  if (rows.empty()) throw Error("emit_report: no rows");
  std::filesystem::create_directories(dir);
  auto rate = [](const std::optional<WinRateReport>& r) { return r ? fmt("%.4f", r->win_rate) : std::string("-"); };
  auto ci = [](const std::optional<WinRateReport>& r) {
    return r ? fmt("%.4f", r->ci.low) + "," + fmt("%.4f", r->ci.high) : std::string("-");
  };
  auto any = [](const ComparisonRow& row) -> const WinRateReport& { return row.oracle ? *row.oracle : *row.judge; };
  for (const auto& row : rows)
    if (!row.judge && !row.oracle) throw Error("emit_report: row '" + row.system + "' has no report");

  std::string tsv = "system\tn\twords\tref_words\tr1\tr2\trl\tjudge_win_rate\tjudge_ci95\toracle_win_rate\toracle_ci95\ttruncated\n";
  std::vector<std::vector<std::string>> cells;
  cells.push_back({"system", "n", "# words", "r1", "r2", "rl", "judge win", "oracle win", "oracle 95% CI"});
  for (const auto& row : rows) {
    const WinRateReport& r = any(row);
    tsv += row.system + "\t" + std::to_string(r.n) + "\t" + fmt("%.3f", r.mean_len) + "\t" + fmt("%.3f", r.mean_ref_len) +
           "\t" + fmt("%.4f", r.overlap.r1) + "\t" + fmt("%.4f", r.overlap.r2) + "\t" + fmt("%.4f", r.overlap.rl) + "\t" +
           rate(row.judge) + "\t" + ci(row.judge) + "\t" + rate(row.oracle) + "\t" + ci(row.oracle) + "\t" +
           fmt("%.4f", row.truncation_rate) + "\n";
    cells.push_back({row.system, std::to_string(r.n), fmt("%.2f", r.mean_len), fmt("%.3f", r.overlap.r1),
                     fmt("%.3f", r.overlap.r2), fmt("%.3f", r.overlap.rl),
                     row.judge ? fmt("%.2f%%", 100.0 * row.judge->win_rate) : "-",
                     row.oracle ? fmt("%.2f%%", 100.0 * row.oracle->win_rate) : "-",
                     row.oracle ? fmt("%.1f", 100.0 * row.oracle->ci.low) + "-" + fmt("%.1f", 100.0 * row.oracle->ci.high)
                                : "-"});
  }
  write_file(dir / "comparison.tsv", tsv);

  std::vector<std::size_t> width(cells[0].size(), 0);
  for (const auto& line : cells)
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  std::string txt;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (std::size_t c = 0; c < cells[i].size(); ++c) {
      const std::string& s = cells[i][c];
      const std::string pad(width[c] - s.size(), ' ');
      txt += c == 0 ? s + pad : "  " + pad + s;
    }
    txt += "\n";
    if (i == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w + 2;
      txt += std::string(total - 2, '-') + "\n";
    }
  }
  write_file(dir / "comparison.txt", txt);

  std::string csv = "system,judge,bucket,count,win_rate,empty\n";
  for (const auto& row : rows)
    for (const auto* rep : {row.judge ? &*row.judge : nullptr, row.oracle ? &*row.oracle : nullptr}) {
      if (!rep) continue;
      for (const auto& b : rep->buckets)
        csv += row.system + "," + rep->judge + "," + b.label + "," + std::to_string(b.count) + "," +
               fmt("%.4f", b.win_rate) + "," + (b.empty ? "true" : "false") + "\n";
    }
  write_file(dir / "buckets.csv", csv);

  Json summary = Json::array();
  for (const auto& row : rows) {
    Json j{{"system", row.system}, {"truncation_rate", row.truncation_rate}};
    if (row.judge) {
      j["judge"] = to_json(*row.judge);
      j["judge"].erase("outcomes");
    }
    if (row.oracle) {
      j["oracle"] = to_json(*row.oracle);
      j["oracle"].erase("outcomes");
    }
    summary.push_back(j);
  }
  write_file(dir / "summary.json", dump_canonical(summary, 2) + "\n");
}

}  // namespace slic
