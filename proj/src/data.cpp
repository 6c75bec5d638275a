#include "slic/data.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "slic/io.hpp"

namespace slic {

namespace {

constexpr const char* kSftSchema = "slic.sft/1";
constexpr const char* kOracleSchema = "slic.oracle/1";
constexpr const char* kFeedbackSchema = "slic.feedback/1";

struct Extractor {
  double keep;
  double hallucinate;
};

Extractor extractor_params(const std::string& policy) {
  if (policy == "extract_hi") return {0.9, 0.05};
  if (policy == "extract_mid") return {0.6, 0.1};
  return {0.3, 0.2};
}

TokenId random_filler(const TaskConfig& c, const Tokens& context, Rng& rng) {
  std::vector<TokenId> pool;
  for (TokenId t : context)
    if (!c.is_salient_class(t)) pool.push_back(t);
  if (pool.empty()) return context[rng.below(context.size())];
  return pool[rng.below(pool.size())];
}

SftExample make_example(const TaskConfig& c, std::int64_t id) {
  Rng rng(derive_seed(c.seed, 0xda7a, static_cast<std::uint64_t>(id)));
  const int n = c.context_min + static_cast<int>(rng.below(static_cast<std::size_t>(c.context_max - c.context_min + 1)));
  int k = 0;
  for (int i = 0; i < n; ++i) k += rng.bernoulli(c.salient_density) ? 1 : 0;
  k = std::clamp(k, c.min_salient, std::min(c.salient_classes, n));

  std::vector<TokenId> classes(static_cast<std::size_t>(c.salient_classes));
  std::iota(classes.begin(), classes.end(), Vocab::kFirstContent);
  rng.shuffle(classes);
  std::vector<int> positions(static_cast<std::size_t>(n));
  std::iota(positions.begin(), positions.end(), 0);
  rng.shuffle(positions);

  const int filler_first = Vocab::kFirstContent + c.salient_classes;
  const std::size_t filler_count = static_cast<std::size_t>(c.vocab_size - filler_first);
  SftExample ex;
  ex.id = id;
  ex.context.resize(static_cast<std::size_t>(n));
  for (auto& t : ex.context) t = static_cast<TokenId>(filler_first + static_cast<int>(rng.below(filler_count)));
  for (int i = 0; i < k; ++i) ex.context[static_cast<std::size_t>(positions[i])] = classes[i];

  ex.salient = salient_subsequence(c, ex.context);
  for (TokenId t : *ex.salient)
    if (!rng.bernoulli(c.p_drop)) ex.reference.push_back(t);
  return ex;
}

Json tokens_json(const Tokens& t) { return Json(t); }

}  // namespace

void TaskConfig::validate() const {
  if (vocab_size <= Vocab::kFirstContent) throw ConfigError("task.vocab_size leaves no content tokens");
  if (salient_classes < 1) throw ConfigError("task.salient_classes must be >= 1");
  if (Vocab::kFirstContent + salient_classes >= vocab_size)
    throw ConfigError("task.salient_classes leaves no filler tokens in the vocabulary");
  if (context_min < 1 || context_max < context_min) throw ConfigError("task.context_min/context_max form an empty range");
  if (min_salient < 1) throw ConfigError("task.min_salient must be >= 1");
  if (min_salient > context_min || min_salient > salient_classes)
    throw ConfigError("task.min_salient is infeasible for the context length or salient class size");
  if (!(salient_density > 0.0 && salient_density <= 1.0)) throw ConfigError("task.salient_density must be in (0, 1]");
  if (!(p_drop >= 0.0 && p_drop < 1.0)) throw ConfigError("task.p_drop must be in [0, 1)");
  if (!(eta >= 0.0 && eta < 0.5)) throw ConfigError("task.eta must be in [0, 0.5)");
  if (n_train < 1 || n_validation < 1 || n_test < 1) throw ConfigError("task split sizes must be >= 1");
  if (weights.coverage < 0 || weights.length < 0 || weights.hallucination < 0)
    throw ConfigError("task quality weights must be >= 0");
  if (feedback_policies.size() < 2) throw ConfigError("task.feedback_policies needs at least two policies");
  static const std::set<std::string> known{"reference",  "ref_drop1",  "ref_insert", "extract_hi",
                                           "extract_mid", "extract_lo", "scramble"};
  for (const auto& p : feedback_policies)
    if (!known.count(p)) throw ConfigError("task.feedback_policies: unknown policy '" + p + "'");
}

int TaskConfig::max_salient() const { return std::min(salient_classes, context_max); }

SftDatasets gen_sft_dataset(const TaskConfig& config) {
  config.validate();
  SftDatasets out;
  std::int64_t id = 0;
  for (std::size_t i = 0; i < config.n_train; ++i) out.train.push_back(make_example(config, id++));
  for (std::size_t i = 0; i < config.n_validation; ++i) out.validation.push_back(make_example(config, id++));
  for (std::size_t i = 0; i < config.n_test; ++i) out.test.push_back(make_example(config, id++));
  return out;
}

Tokens salient_subsequence(const TaskConfig& config, const Tokens& context) {
  Tokens s;
  for (TokenId t : context)
    if (config.is_salient_class(t)) s.push_back(t);
  return s;
}

double quality(const Tokens& y, const Tokens& salient, const QualityWeights& w) {
  if (salient.empty()) throw DataError("quality: empty salient set");
  if (y.empty()) return 0.0;
  const std::set<TokenId> s(salient.begin(), salient.end());
  std::set<TokenId> covered;
  std::size_t foreign = 0;
  for (TokenId t : y) {
    if (s.count(t))
      covered.insert(t);
    else
      ++foreign;
  }
  const double ns = static_cast<double>(s.size());
  const double coverage = static_cast<double>(covered.size()) / ns;
  const double excess = std::max(0.0, static_cast<double>(y.size()) - ns) / ns;
  const double hall = static_cast<double>(foreign) / static_cast<double>(y.size());
  return w.coverage * coverage - w.length * excess - w.hallucination * hall;
}

int oracle_prefer(const Tokens& y0, const Tokens& y1, const Tokens& salient, const QualityWeights& weights,
                  double eta, Rng& rng) {
  if (y0 == y1) throw Error("oracle_prefer: identical candidates");
  const double q0 = quality(y0, salient, weights);
  const double q1 = quality(y1, salient, weights);
  int best;
  if (q0 > q1)
    best = 0;
  else if (q1 > q0)
    best = 1;
  else
    best = static_cast<int>(rng.below(2));
  return rng.bernoulli(eta) ? 1 - best : best;
}

int oracle_prefer(const Tokens& y0, const Tokens& y1, const Tokens& salient, const QualityWeights& weights,
                  double eta, std::uint64_t seed) {
  Rng rng(seed);
  return oracle_prefer(y0, y1, salient, weights, eta, rng);
}

void PreferenceRecord::validate() const {
  if (y0 == y1) throw DataError("preference record " + std::to_string(id) + ": identical candidates");
  if (preferred != 0 && preferred != 1) throw DataError("preference record " + std::to_string(id) + ": bad label");
}

Tokens apply_policy(const std::string& policy, const TaskConfig& c, const SftExample& ex, Rng& rng) {
  if (policy == "reference") return ex.reference;
  if (policy == "ref_drop1") {
    Tokens y = ex.reference;
    if (!y.empty()) y.erase(y.begin() + static_cast<std::ptrdiff_t>(rng.below(y.size())));
    return y;
  }
  if (policy == "ref_insert") {
    Tokens y = ex.reference;
    const TokenId t = random_filler(c, ex.context, rng);
    y.insert(y.begin() + static_cast<std::ptrdiff_t>(rng.below(y.size() + 1)), t);
    return y;
  }
  const Tokens s = salient_subsequence(c, ex.context);
  if (policy == "scramble") {
    Tokens y(s.size());
    for (auto& t : y) t = ex.context[rng.below(ex.context.size())];
    return y;
  }
  if (policy.rfind("extract_", 0) == 0) {
    const Extractor e = extractor_params(policy);
    Tokens y;
    for (TokenId t : s) {
      if (rng.bernoulli(e.hallucinate)) y.push_back(random_filler(c, ex.context, rng));
      if (rng.bernoulli(e.keep)) y.push_back(t);
    }
    return y;
  }
  throw ConfigError("unknown feedback policy '" + policy + "'");
}

std::vector<PreferenceRecord> gen_feedback_dataset(const std::vector<SftExample>& examples, const TaskConfig& c,
                                                   std::uint64_t seed, FeedbackStats* stats) {
  c.validate();
  FeedbackStats st;
  std::vector<PreferenceRecord> out;
  const std::size_t np = c.feedback_policies.size();
  for (const SftExample& ex : examples) {
    if (!ex.salient) throw DependencyError("gen_feedback_dataset: example " + std::to_string(ex.id) + " lacks oracle data");
    for (std::size_t j = 0; j < c.feedback_pairs_per_example; ++j) {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(ex.id), j));
      const std::size_t a = rng.below(np);
      std::size_t b = rng.below(np - 1);
      if (b >= a) ++b;
      PreferenceRecord r;
      r.id = ex.id * static_cast<std::int64_t>(c.feedback_pairs_per_example) + static_cast<std::int64_t>(j);
      r.example_id = ex.id;
      r.context = ex.context;
      r.policy0 = c.feedback_policies[a];
      r.policy1 = c.feedback_policies[b];
      r.y0 = apply_policy(r.policy0, c, ex, rng);
      r.y1 = apply_policy(r.policy1, c, ex, rng);
      if (r.y0 == r.y1) {
        ++st.skipped_identical;
        continue;
      }
      if (quality(r.y0, *ex.salient, c.weights) == quality(r.y1, *ex.salient, c.weights)) ++st.quality_ties;
      r.preferred = oracle_prefer(r.y0, r.y1, *ex.salient, c.weights, c.eta, rng);
      out.push_back(std::move(r));
      ++st.generated;
    }
  }
  if (stats) *stats = st;
  return out;
}

void write_sft_split(const std::filesystem::path& path, const std::vector<SftExample>& examples) {
  std::vector<Json> rows;
  rows.reserve(examples.size());
  for (const auto& e : examples)
    rows.push_back(Json{{"schema", kSftSchema}, {"id", e.id}, {"context", tokens_json(e.context)},
                        {"reference", tokens_json(e.reference)}});
  write_jsonl(path, rows);
}

std::vector<SftExample> read_sft_split(const std::filesystem::path& path) {
  std::vector<SftExample> out;
  read_jsonl(path, kSftSchema, [&](const Json& j, std::size_t) {
    SftExample e;
    e.id = j.at("id").get<std::int64_t>();
    e.context = tokens_from_json(j, "context");
    e.reference = tokens_from_json(j, "reference");
    out.push_back(std::move(e));
  });
  return out;
}

void write_oracle(const std::filesystem::path& path, const SftDatasets& data) {
  std::vector<Json> rows;
  for (const auto* split : {&data.train, &data.validation, &data.test})
    for (const auto& e : *split) {
      if (!e.salient) throw DataError("write_oracle: example " + std::to_string(e.id) + " has no salient set");
      rows.push_back(Json{{"schema", kOracleSchema}, {"id", e.id}, {"salient", tokens_json(*e.salient)}});
    }
  write_jsonl(path, rows);
}

OracleIndex read_oracle(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw DependencyError("oracle sidecar not found: " + path.string() + " (needed for quality-based evaluation)");
  OracleIndex out;
  read_jsonl(path, kOracleSchema, [&](const Json& j, std::size_t) {
    out[j.at("id").get<std::int64_t>()] = tokens_from_json(j, "salient");
  });
  return out;
}

void attach_oracle(std::vector<SftExample>& examples, const OracleIndex& oracle) {
  for (auto& e : examples) {
    const auto it = oracle.find(e.id);
    if (it == oracle.end()) throw DataError("oracle sidecar has no entry for example " + std::to_string(e.id));
    e.salient = it->second;
  }
}

void write_feedback(const std::filesystem::path& path, const std::vector<PreferenceRecord>& records) {
  std::vector<Json> rows;
  rows.reserve(records.size());
  for (const auto& r : records)
    rows.push_back(Json{{"schema", kFeedbackSchema},
                        {"id", r.id},
                        {"example_id", r.example_id},
                        {"context", tokens_json(r.context)},
                        {"y0", tokens_json(r.y0)},
                        {"y1", tokens_json(r.y1)},
                        {"preferred", r.preferred},
                        {"provenance", r.provenance},
                        {"policy0", r.policy0},
                        {"policy1", r.policy1}});
  write_jsonl(path, rows);
}

std::vector<PreferenceRecord> read_feedback(const std::filesystem::path& path) {
  std::vector<PreferenceRecord> out;
  read_jsonl(path, kFeedbackSchema, [&](const Json& j, std::size_t) {
    PreferenceRecord r;
    r.id = j.at("id").get<std::int64_t>();
    r.example_id = j.at("example_id").get<std::int64_t>();
    r.context = tokens_from_json(j, "context");
    r.y0 = tokens_from_json(j, "y0");
    r.y1 = tokens_from_json(j, "y1");
    r.preferred = j.at("preferred").get<int>();
    r.provenance = j.at("provenance").get<std::string>();
    r.policy0 = j.value("policy0", "");
    r.policy1 = j.value("policy1", "");
    r.validate();
    out.push_back(std::move(r));
  });
  return out;
}

}  // namespace slic
