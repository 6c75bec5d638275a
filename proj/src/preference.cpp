#include "slic/preference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "slic/io.hpp"
#include "slic/losses.hpp"

namespace slic {

namespace {

constexpr const char* kPairsSchema = "slic.pairs/1";

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

// Cuts the context so that the whole row (BOS input SEP label) fits max_len.
Tokens fit_context(const Tokens& x, std::size_t fixed, int max_len) {
  const std::size_t budget = static_cast<std::size_t>(std::max(0, max_len));
  if (fixed + 3 > budget) throw Error("judge row does not fit the model length even without context");
  const std::size_t room = budget - fixed - 3;
  return x.size() <= room ? x : Tokens(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(room));
}

std::ptrdiff_t find_marker(const Tokens& t, TokenId marker, std::size_t from) {
  for (std::size_t i = from; i < t.size(); ++i)
    if (t[i] == marker) return static_cast<std::ptrdiff_t>(i);
  return -1;
}

}  // namespace

std::string to_string(JudgeKind k) { return k == JudgeKind::Pointwise ? "pointwise" : "pairwise"; }

JudgeKind judge_kind_from_string(const std::string& s) {
  if (s == "pointwise" || s == "reward") return JudgeKind::Pointwise;
  if (s == "pairwise" || s == "ranking") return JudgeKind::Pairwise;
  throw ConfigError("unknown judge kind '" + s + "' (expected pointwise | pairwise)");
}

FormattedRow format_pointwise(const Tokens& x, const Tokens& y, TokenId label, int max_len) {
  if (label != Vocab::kGood && label != Vocab::kBad) throw Error("format_pointwise: label must be GOOD or BAD");
  const Tokens cx = fit_context(x, y.size() + 2, max_len);
  FormattedRow row;
  row.input.push_back(Vocab::kContext);
  row.input.insert(row.input.end(), cx.begin(), cx.end());
  row.input.push_back(Vocab::kSummary);
  row.input.insert(row.input.end(), y.begin(), y.end());
  row.target = {label, Vocab::kEos};
  return row;
}

FormattedRow format_pairwise(const Tokens& x, const Tokens& ya, const Tokens& yb, TokenId label, int max_len) {
  if (label != Vocab::kA && label != Vocab::kB) throw Error("format_pairwise: label must be A or B");
  if (ya == yb) throw Error("format_pairwise: the two summaries are identical");
  const Tokens cx = fit_context(x, ya.size() + yb.size() + 3, max_len);
  FormattedRow row;
  row.input.push_back(Vocab::kContext);
  row.input.insert(row.input.end(), cx.begin(), cx.end());
  row.input.push_back(Vocab::kSummaryA);
  row.input.insert(row.input.end(), ya.begin(), ya.end());
  row.input.push_back(Vocab::kSummaryB);
  row.input.insert(row.input.end(), yb.begin(), yb.end());
  row.target = {label, Vocab::kEos};
  return row;
}

PointwiseFields parse_pointwise(const FormattedRow& row) {
  const Tokens& in = row.input;
  const auto s = find_marker(in, Vocab::kSummary, 1);
  if (in.empty() || in[0] != Vocab::kContext || s < 0 || row.target.size() != 2)
    throw DataError("not a pointwise judge row");
  PointwiseFields f;
  f.x.assign(in.begin() + 1, in.begin() + s);
  f.y.assign(in.begin() + s + 1, in.end());
  f.label = row.target[0];
  return f;
}

PairwiseFields parse_pairwise(const FormattedRow& row) {
  const Tokens& in = row.input;
  const auto a = find_marker(in, Vocab::kSummaryA, 1);
  const auto b = a < 0 ? -1 : find_marker(in, Vocab::kSummaryB, static_cast<std::size_t>(a) + 1);
  if (in.empty() || in[0] != Vocab::kContext || b < 0 || row.target.size() != 2)
    throw DataError("not a pairwise judge row");
  PairwiseFields f;
  f.x.assign(in.begin() + 1, in.begin() + a);
  f.ya.assign(in.begin() + a + 1, in.begin() + b);
  f.yb.assign(in.begin() + b + 1, in.end());
  f.label = row.target[0];
  return f;
}

std::vector<FormattedRow> judge_rows(const PreferenceRecord& r, JudgeKind kind, int max_len) {
  r.validate();
  if (kind == JudgeKind::Pointwise)
    return {format_pointwise(r.context, r.winner(), Vocab::kGood, max_len),
            format_pointwise(r.context, r.loser(), Vocab::kBad, max_len)};
  return {format_pairwise(r.context, r.winner(), r.loser(), Vocab::kA, max_len),
          format_pairwise(r.context, r.loser(), r.winner(), Vocab::kB, max_len)};
}

double score_pointwise(const ModelParams& judge, const Tokens& x, const Tokens& y) {
  const FormattedRow row = format_pointwise(x, y, Vocab::kGood, judge.config.max_len);
  return sigmoid(label_log_odds(judge, row.input, Vocab::kGood, Vocab::kBad));
}

Preference prefer_pairwise(const ModelParams& judge, const Tokens& x, const Tokens& y0, const Tokens& y1) {
  if (y0 == y1) throw Error("prefer_pairwise: identical candidates");
  // Evaluate in a canonical order so that swapping the arguments gives exactly
  // complementary confidences.
  const bool y0_first = lex_less(y0, y1);
  const Tokens& a = y0_first ? y0 : y1;
  const Tokens& b = y0_first ? y1 : y0;
  const int L = judge.config.max_len;
  const double a_when_first =
      sigmoid(label_log_odds(judge, format_pairwise(x, a, b, Vocab::kA, L).input, Vocab::kA, Vocab::kB));
  const double a_when_second =
      sigmoid(label_log_odds(judge, format_pairwise(x, b, a, Vocab::kA, L).input, Vocab::kB, Vocab::kA));
  const double ca = 0.5 * (a_when_first + a_when_second);
  Preference p;
  p.confidence = y0_first ? ca : 1.0 - ca;
  if (p.confidence > 0.5)
    p.winner = 0;
  else if (p.confidence < 0.5)
    p.winner = 1;
  else
    p.winner = y0_first ? 0 : 1;
  return p;
}

double judge_accuracy(const ModelParams& judge, JudgeKind kind, const std::vector<PreferenceRecord>& records) {
  if (records.empty()) throw Error("judge_accuracy: empty record set");
  double hits = 0.0;
  for (const auto& r : records) {
    if (kind == JudgeKind::Pointwise) {
      const double s0 = score_pointwise(judge, r.context, r.y0);
      const double s1 = score_pointwise(judge, r.context, r.y1);
      if (s0 == s1)
        hits += 0.5;
      else
        hits += ((s0 > s1) == (r.preferred == 0)) ? 1.0 : 0.0;
    } else {
      const Preference p = prefer_pairwise(judge, r.context, r.y0, r.y1);
      if (p.confidence == 0.5)
        hits += 0.5;
      else
        hits += p.winner == r.preferred ? 1.0 : 0.0;
    }
  }
  return hits / static_cast<double>(records.size());
}

JudgeTrainResult train_judge(const std::vector<PreferenceRecord>& train, const std::vector<PreferenceRecord>& validation,
                             JudgeKind kind, const JudgeTrainConfig& cfg) {
  return train_judge(train, validation, kind, cfg, init_model(cfg.model, derive_seed(cfg.seed, 0x1d9e)));
}

JudgeTrainResult train_judge(const std::vector<PreferenceRecord>& train, const std::vector<PreferenceRecord>& validation,
                             JudgeKind kind, const JudgeTrainConfig& cfg, const ModelParams& init) {
  if (init.fingerprint() != cfg.model.fingerprint()) throw ConfigError("judge init weights do not match the judge architecture");
  if (train.empty() || validation.empty()) throw DataError("train_judge: empty train or validation split");
  if (cfg.steps < 0 || cfg.batch_size < 1 || cfg.eval_every < 1) throw ConfigError("judge: invalid step settings");
  const bool bt = kind == JudgeKind::Pointwise && cfg.pointwise_objective == "bradley_terry";
  if (kind == JudgeKind::Pointwise && !bt && cfg.pointwise_objective != "classify")
    throw ConfigError("judge.pointwise_objective must be classify | bradley_terry");
  const int L = cfg.model.max_len;

  std::vector<FormattedRow> rows;
  std::vector<std::pair<Tokens, Tokens>> bt_inputs;  // (winner input, loser input)
  for (const auto& r : train) {
    if (bt) {
      bt_inputs.emplace_back(format_pointwise(r.context, r.winner(), Vocab::kGood, L).input,
                             format_pointwise(r.context, r.loser(), Vocab::kGood, L).input);
    } else {
      for (auto& row : judge_rows(r, kind, L)) rows.push_back(std::move(row));
    }
  }
  std::vector<PreferenceRecord> val(validation.begin(),
                                    validation.begin() + static_cast<std::ptrdiff_t>(
                                        cfg.eval_limit == 0 ? validation.size()
                                                            : std::min(cfg.eval_limit, validation.size())));

  JudgeTrainResult out;
  ModelParams params = init;
  OptimizerState opt = OptimizerState::for_params(params, cfg.lr);
  AdamConfig adam;
  adam.lr = cfg.lr;
  adam.clip_norm = cfg.clip_norm;
  Rng rng(derive_seed(cfg.seed, 0xba7c));
  out.best_accuracy = -1.0;

  for (int step = 0;; ++step) {
    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      const double acc = judge_accuracy(params, kind, val);
      out.log.push_back({step, out.log.empty() ? 0.0 : out.log.back().loss, acc});
      if (acc > out.best_accuracy) {
        out.best_accuracy = acc;
        out.best_step = step;
        out.params = params;
      }
    }
    if (step == cfg.steps) break;
    opt.lr = cfg.warmup_steps > 0 ? cfg.lr * std::min(1.0, (step + 1.0) / cfg.warmup_steps) : cfg.lr;
    Gradients g = Gradients::zeros_like(params);
    double loss = 0.0;
    if (bt) {
      const int n = std::max(1, cfg.batch_size / 2);
      const double w = 1.0 / n;
      for (int i = 0; i < n; ++i) {
        const auto& [win, lose] = bt_inputs[rng.below(bt_inputs.size())];
        loss += w * reward_pair_model_loss(params, win, lose, Vocab::kGood, Vocab::kBad, &g, w);
      }
    } else {
      // Both rows of a record share a batch, so order and label biases cancel within a step.
      const int n = std::max(1, cfg.batch_size / 2);
      const double w = 1.0 / (2 * n);
      for (int i = 0; i < n; ++i) {
        const std::size_t r = 2 * rng.below(rows.size() / 2);
        for (std::size_t j = r; j < r + 2; ++j) loss += w * sft_loss(params, rows[j].input, rows[j].target, &g, w);
      }
    }
    if (!std::isfinite(loss)) throw DivergenceError("judge training diverged at step " + std::to_string(step));
    UpdateResult u = apply_update(params, g, opt, adam);
    params = std::move(u.params);
    opt = std::move(u.state);
    out.log.push_back({step + 1, loss, -1.0});
  }
  if (out.best_accuracy < 0.5 + cfg.min_accuracy_over_chance)
    throw ConvergenceError("judge (" + to_string(kind) + ") best validation accuracy " +
                           std::to_string(out.best_accuracy) + " does not exceed chance by the required margin");
  return out;
}

Bracket tournament(std::size_t m, const std::function<std::size_t(std::size_t, std::size_t)>& beats) {
  if (m == 0) throw Error("tournament: no candidates");
  Bracket b;
  std::vector<std::size_t> round(m);
  std::iota(round.begin(), round.end(), 0);
  while (round.size() > 1) {
    std::vector<std::size_t> next;
    for (std::size_t i = 0; i + 1 < round.size(); i += 2) {
      const std::size_t w = beats(round[i], round[i + 1]);
      if (w != round[i] && w != round[i + 1]) throw Error("tournament: comparator returned a non-participant");
      const std::size_t l = w == round[i] ? round[i + 1] : round[i];
      ++b.comparisons;
      b.pairs.emplace_back(w, l);
      next.push_back(w);
    }
    if (round.size() % 2 == 1) next.push_back(round.back());
    round = std::move(next);
  }
  b.winner = round[0];
  return b;
}

TournamentResult tournament_rank(const ModelParams& judge, const Tokens& x, const std::vector<Tokens>& candidates) {
  if (candidates.empty()) throw Error("tournament_rank: no candidates");
  std::vector<std::size_t> distinct;  // first occurrence of each text
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    bool seen = false;
    for (std::size_t j : distinct) seen = seen || candidates[j] == candidates[i];
    if (!seen) distinct.push_back(i);
  }
  std::vector<double> conf;
  const Bracket br = tournament(distinct.size(), [&](std::size_t a, std::size_t b) {
    const Preference p = prefer_pairwise(judge, x, candidates[distinct[a]], candidates[distinct[b]]);
    conf.push_back(p.winner == 0 ? p.confidence : 1.0 - p.confidence);
    return p.winner == 0 ? a : b;
  });
  TournamentResult out;
  out.winner_index = distinct[br.winner];
  out.pairs.source = "tournament";
  out.pairs.comparisons = br.comparisons;
  for (std::size_t i = 0; i < br.pairs.size(); ++i)
    out.pairs.pairs.push_back(
        {candidates[distinct[br.pairs[i].first]], candidates[distinct[br.pairs[i].second]], conf[i]});
  return out;
}

RankedPairs sample_pairs_by_reward(const std::vector<Tokens>& candidates, const std::vector<double>& scores,
                                   std::size_t n_pairs, std::uint64_t seed) {
  if (candidates.size() != scores.size()) throw Error("sample_pairs_by_reward: candidates and scores differ in length");
  std::vector<std::size_t> distinct;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    bool seen = false;
    for (std::size_t j : distinct) seen = seen || candidates[j] == candidates[i];
    if (!seen) distinct.push_back(i);
  }
  if (distinct.size() < 2) throw Error("sample_pairs_by_reward: fewer than two distinct candidates");
  std::vector<std::pair<std::size_t, std::size_t>> pool;
  for (std::size_t a = 0; a < distinct.size(); ++a)
    for (std::size_t b = a + 1; b < distinct.size(); ++b) pool.emplace_back(distinct[a], distinct[b]);
  Rng rng(seed);
  rng.shuffle(pool);
  RankedPairs out;
  out.source = "reward_sampled";
  for (const auto& [i, j] : pool) {
    if (out.pairs.size() >= n_pairs) break;
    if (scores[i] == scores[j]) continue;
    const std::size_t w = scores[i] > scores[j] ? i : j;
    const std::size_t l = w == i ? j : i;
    // Bradley-Terry probability implied by the two GOOD probabilities.
    const double sw = scores[w], sl = scores[l];
    const double denom = sw * (1.0 - sl) + sl * (1.0 - sw);
    out.pairs.push_back({candidates[w], candidates[l], denom > 0 ? sw * (1.0 - sl) / denom : 0.5});
  }
  return out;
}

void write_ranked_pairs(const std::filesystem::path& path, const std::vector<RankedPairRecord>& records) {
  std::vector<Json> rows;
  rows.reserve(records.size());
  for (const auto& r : records)
    rows.push_back(Json{{"schema", kPairsSchema},
                        {"example_id", r.example_id},
                        {"context", r.context},
                        {"winner", r.winner},
                        {"loser", r.loser},
                        {"source", r.source},
                        {"confidence", r.confidence}});
  write_jsonl(path, rows);
}

std::vector<RankedPairRecord> read_ranked_pairs(const std::filesystem::path& path) {
  std::vector<RankedPairRecord> out;
  read_jsonl(path, kPairsSchema, [&](const Json& j, std::size_t) {
    RankedPairRecord r;
    r.example_id = j.at("example_id").get<std::int64_t>();
    r.context = tokens_from_json(j, "context");
    r.winner = tokens_from_json(j, "winner");
    r.loser = tokens_from_json(j, "loser");
    r.source = j.at("source").get<std::string>();
    r.confidence = j.at("confidence").get<double>();
    if (r.winner == r.loser) throw DataError("ranked pair with identical winner and loser");
    out.push_back(std::move(r));
  });
  return out;
}

}  // namespace slic
