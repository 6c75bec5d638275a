#include "slic/pipelines.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

namespace slic {

namespace {

constexpr const char* kJudgedSchema = "slic.judged/1";
constexpr const char* kCalibSchema = "slic.calib/1";

Tokens with_eos(const Tokens& body) {
  Tokens t = body;
  t.push_back(Vocab::kEos);
  return t;
}

Tokens strip_eos(const Tokens& target) {
  if (target.empty() || target.back() != Vocab::kEos) throw DataError("target is not EOS terminated");
  return Tokens(target.begin(), target.end() - 1);
}

// Sequential passes over a shuffled index order, reshuffled every epoch.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    if (n == 0) throw DataError("cannot sample from an empty training set");
    std::iota(order_.begin(), order_.end(), 0);
    rng_.shuffle(order_);
  }
  std::size_t next() {
    if (pos_ == order_.size()) {
      rng_.shuffle(order_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::vector<std::size_t> order_;
  Rng rng_;
  std::size_t pos_ = 0;
};

bool is_eval_step(int step, int every, int last) { return step % every == 0 || step == last; }

}  // namespace

std::string to_string(Recipe r) {
  switch (r) {
    case Recipe::Sft:
      return "sft";
    case Recipe::ContinueSft:
      return "continue_sft";
    case Recipe::SlicDirect:
      return "slic_direct";
    case Recipe::SlicSampleRank:
      return "slic_sample_rank";
  }
  return "?";
}

std::string to_string(FilterMode f) {
  switch (f) {
    case FilterMode::PositivesHf:
      return "positives_hf";
    case FilterMode::BestOfMReward:
      return "best_of_m_reward";
    case FilterMode::BestOfMRanking:
      return "best_of_m_ranking";
  }
  return "?";
}

Recipe recipe_from_string(const std::string& s) {
  for (Recipe r : {Recipe::Sft, Recipe::ContinueSft, Recipe::SlicDirect, Recipe::SlicSampleRank})
    if (to_string(r) == s) return r;
  throw ConfigError("unknown recipe '" + s + "' (expected sft | continue_sft | slic_direct | slic_sample_rank)");
}

FilterMode filter_mode_from_string(const std::string& s) {
  for (FilterMode f : {FilterMode::PositivesHf, FilterMode::BestOfMReward, FilterMode::BestOfMRanking})
    if (to_string(f) == s) return f;
  throw ConfigError("unknown filter mode '" + s + "' (expected positives_hf | best_of_m_reward | best_of_m_ranking)");
}

void PipelineSpec::validate() const {
  if (filter.has_value() != (recipe == Recipe::ContinueSft))
    throw ConfigError("filter mode is required for continue_sft and invalid otherwise");
  if (judge_mode.has_value() != (recipe == Recipe::SlicSampleRank))
    throw ConfigError("judge mode is required for slic_sample_rank and invalid otherwise");
  if (recipe == Recipe::SlicDirect && reg_target != RegTarget::SftTarget)
    throw ConfigError("slic_direct regularizes toward the SFT targets only");
  const bool pairs = recipe == Recipe::SlicSampleRank ||
                     (recipe == Recipe::ContinueSft && filter != FilterMode::PositivesHf);
  if (pairs && m < 2) throw ConfigError("m must be >= 2 for recipes that rank sampled candidates");
}

std::string PipelineSpec::name() const {
  switch (recipe) {
    case Recipe::Sft:
      return "sft";
    case Recipe::ContinueSft:
      return "continue_sft." + to_string(*filter);
    case Recipe::SlicDirect:
      return "slic_direct";
    case Recipe::SlicSampleRank:
      return std::string("slic_sample_rank.") + (*judge_mode == JudgeKind::Pairwise ? "ranking" : "reward") + "." +
             to_string(reg_target);
  }
  return "?";
}

std::vector<PipelineSpec> ablation_specs(int m) {
  std::vector<PipelineSpec> out;
  out.push_back({Recipe::Sft, std::nullopt, std::nullopt, RegTarget::SftTarget, m});
  for (FilterMode f : {FilterMode::PositivesHf, FilterMode::BestOfMReward, FilterMode::BestOfMRanking})
    out.push_back({Recipe::ContinueSft, f, std::nullopt, RegTarget::SftTarget, m});
  out.push_back({Recipe::SlicDirect, std::nullopt, std::nullopt, RegTarget::SftTarget, m});
  for (JudgeKind k : {JudgeKind::Pointwise, JudgeKind::Pairwise})
    for (RegTarget r : {RegTarget::SftTarget, RegTarget::BestDecode})
      out.push_back({Recipe::SlicSampleRank, std::nullopt, k, r, m});
  return out;
}

void CeTrainConfig::validate() const {
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (clip_norm < 0.0) throw ConfigError("clip_norm must be >= 0");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
}

CeTrainResult train_cross_entropy(const ModelParams& init, const std::vector<ContextTarget>& train,
                                  const std::vector<ContextTarget>& validation, const CeTrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw DataError("cross-entropy training: empty training set");
  if (validation.empty()) throw DataError("cross-entropy training: empty validation set");
  CeTrainResult out;
  ModelParams params = init;
  OptimizerState opt = OptimizerState::for_params(params, cfg.lr);
  AdamConfig adam;
  adam.lr = cfg.lr;
  adam.clip_norm = cfg.clip_norm;
  EpochSampler sampler(train.size(), derive_seed(cfg.seed, 0x5f7));
  std::vector<ContextTarget> batch(static_cast<std::size_t>(cfg.batch_size));
  double last_loss = 0.0;
  for (int step = 0;; ++step) {
    if (is_eval_step(step, cfg.eval_every, cfg.steps)) {
      const double ppl = perplexity(params, validation);
      if (!std::isfinite(ppl)) throw DivergenceError("validation perplexity is not finite at step " + std::to_string(step));
      if (step == 0) out.initial_perplexity = ppl;
      out.log.push_back({step, last_loss, ppl});
      if (step == 0 || ppl < out.best_perplexity) {
        out.best_perplexity = ppl;
        out.best_step = step;
        out.params = params;
      }
    }
    if (step == cfg.steps) break;
    for (auto& b : batch) b = train[sampler.next()];
    Gradients g = Gradients::zeros_like(params);
    last_loss = sft_batch_loss(params, batch, &g);
    if (!std::isfinite(last_loss)) throw DivergenceError("training loss is not finite at step " + std::to_string(step));
    UpdateResult u = apply_update(params, g, opt, adam);
    params = std::move(u.params);
    opt = std::move(u.state);
    out.log.push_back({step + 1, last_loss, -1.0});
  }
  return out;
}

std::vector<ContextTarget> reference_targets(const std::vector<SftExample>& examples) {
  std::vector<ContextTarget> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back({e.context, with_eos(e.reference)});
  return out;
}

CeTrainResult run_sft(const SftDatasets& data, const ModelConfig& model, std::uint64_t init_seed,
                      const CeTrainConfig& config) {
  return train_cross_entropy(init_model(model, init_seed), reference_targets(data.train),
                             reference_targets(data.validation), config);
}

std::vector<ContextItem> context_items(const std::vector<SftExample>& examples, std::size_t limit) {
  const std::size_t n = limit == 0 ? examples.size() : std::min(limit, examples.size());
  std::vector<ContextItem> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back({examples[i].id, examples[i].context});
  return out;
}

std::vector<CandidateSet> decode_stage(const ModelParams& policy, const std::vector<ContextItem>& items, int m,
                                       const DecodeConfig& config, int workers, DecodeStats* stats) {
  config.validate(policy.config.vocab_size);
  if (m < 1) throw ConfigError("m must be >= 1");
  std::vector<CandidateSet> sets(items.size());
  parallel_for(items.size(), workers, [&](std::size_t i) {
    sets[i] = sample_candidates(policy, items[i].context, m, config,
                                derive_seed(config.seed, 0xdec0, static_cast<std::uint64_t>(items[i].example_id)));
  });
  if (stats) {
    DecodeStats s;
    s.contexts = sets.size();
    double len = 0.0, distinct = 0.0;
    for (const auto& set : sets) {
      s.context_encodes += static_cast<std::size_t>(set.context_encodes);
      std::set<Tokens> texts;
      for (const auto& c : set.candidates) {
        ++s.sequences;
        s.truncated += c.truncated ? 1 : 0;
        len += static_cast<double>(c.body.size());
        texts.insert(c.body);
      }
      distinct += static_cast<double>(texts.size());
      s.single_text_sets += texts.size() == 1 ? 1 : 0;
    }
    s.mean_length = s.sequences ? len / static_cast<double>(s.sequences) : 0.0;
    s.mean_distinct = s.contexts ? distinct / static_cast<double>(s.contexts) : 0.0;
    *stats = s;
  }
  return sets;
}

std::vector<DecodeRecord> to_decode_records(const std::vector<ContextItem>& items,
                                            const std::vector<CandidateSet>& sets) {
  if (items.size() != sets.size()) throw Error("decode records: items and sets differ in length");
  std::vector<DecodeRecord> out;
  for (std::size_t i = 0; i < sets.size(); ++i)
    for (std::size_t c = 0; c < sets[i].candidates.size(); ++c)
      out.push_back({items[i].example_id, static_cast<int>(c), sets[i].seeds[c], sets[i].candidates[c].body,
                     sets[i].candidates[c].truncated});
  return out;
}

std::vector<JudgedSet> judge_stage(const ModelParams& judge, JudgeKind kind, const std::vector<DecodeRecord>& decodes,
                                   const std::map<std::int64_t, Tokens>& contexts, std::size_t reward_pairs,
                                   std::uint64_t seed, int workers, JudgeStageStats* stats) {
  // Group candidates by context, keeping first-appearance order of contexts.
  std::vector<std::int64_t> order;
  std::map<std::int64_t, std::vector<const DecodeRecord*>> groups;
  for (const auto& r : decodes) {
    auto [it, inserted] = groups.try_emplace(r.example_id);
    if (inserted) order.push_back(r.example_id);
    it->second.push_back(&r);
  }
  JudgeStageStats st;
  st.contexts = order.size();
  std::vector<JudgedSet> sets;
  for (std::int64_t id : order) {
    auto ctx = contexts.find(id);
    if (ctx == contexts.end()) throw DependencyError("no context for decoded example " + std::to_string(id));
    auto& g = groups[id];
    std::stable_sort(g.begin(), g.end(),
                     [](const DecodeRecord* a, const DecodeRecord* b) { return a->candidate_index < b->candidate_index; });
    JudgedSet s;
    s.example_id = id;
    s.context = ctx->second;
    for (const DecodeRecord* r : g) {
      if (r->truncated)
        ++st.dropped_truncated;
      else
        s.candidates.push_back(r->tokens);
    }
    if (s.candidates.empty()) {
      ++st.skipped_all_truncated;
      continue;
    }
    sets.push_back(std::move(s));
  }

  parallel_for(sets.size(), workers, [&](std::size_t i) {
    JudgedSet& s = sets[i];
    std::size_t distinct = 0;
    for (std::size_t a = 0; a < s.candidates.size(); ++a) {
      bool seen = false;
      for (std::size_t b = 0; b < a && !seen; ++b) seen = s.candidates[a] == s.candidates[b];
      distinct += seen ? 0 : 1;
    }
    if (kind == JudgeKind::Pairwise) {
      const TournamentResult t = tournament_rank(judge, s.context, s.candidates);
      s.best = t.winner_index;
      s.pairs = t.pairs;
    } else {
      for (const auto& c : s.candidates) s.scores.push_back(score_pointwise(judge, s.context, c));
      s.best = static_cast<std::size_t>(std::max_element(s.scores.begin(), s.scores.end()) - s.scores.begin());
      if (distinct >= 2) {
        s.pairs = sample_pairs_by_reward(s.candidates, s.scores, reward_pairs,
                                         derive_seed(seed, 0x9a17, static_cast<std::uint64_t>(s.example_id)));
      } else {
        s.pairs.source = "reward_sampled";
      }
    }
  });
  for (const auto& s : sets) {
    st.pairs += s.pairs.pairs.size();
    st.comparisons += s.pairs.comparisons;
    st.degenerate_sets += s.pairs.pairs.empty() ? 1 : 0;
  }
  if (stats) *stats = st;
  return sets;
}

void write_judged(const std::filesystem::path& path, const std::vector<JudgedSet>& sets) {
  std::vector<Json> rows;
  rows.reserve(sets.size());
  for (const auto& s : sets) {
    Json pairs = Json::array();
    for (const auto& p : s.pairs.pairs)
      pairs.push_back(Json{{"winner", p.winner}, {"loser", p.loser}, {"confidence", p.confidence}});
    rows.push_back(Json{{"schema", kJudgedSchema},
                        {"example_id", s.example_id},
                        {"context", s.context},
                        {"candidates", s.candidates},
                        {"best", s.best},
                        {"scores", s.scores},
                        {"source", s.pairs.source},
                        {"comparisons", s.pairs.comparisons},
                        {"pairs", pairs}});
  }
  write_jsonl(path, rows);
}

std::vector<JudgedSet> read_judged(const std::filesystem::path& path) {
  std::vector<JudgedSet> out;
  read_jsonl(path, kJudgedSchema, [&](const Json& j, std::size_t) {
    JudgedSet s;
    s.example_id = j.at("example_id").get<std::int64_t>();
    s.context = tokens_from_json(j, "context");
    s.candidates = j.at("candidates").get<std::vector<Tokens>>();
    s.best = j.at("best").get<std::size_t>();
    s.scores = j.at("scores").get<std::vector<double>>();
    s.pairs.source = j.at("source").get<std::string>();
    s.pairs.comparisons = j.at("comparisons").get<std::size_t>();
    for (const auto& p : j.at("pairs"))
      s.pairs.pairs.push_back({tokens_from_json(p, "winner"), tokens_from_json(p, "loser"),
                               p.at("confidence").get<double>()});
    if (s.candidates.empty() || s.best >= s.candidates.size()) throw DataError("best index outside candidate list");
    out.push_back(std::move(s));
  });
  return out;
}

std::vector<RankedPairRecord> pair_records(const std::vector<JudgedSet>& sets) {
  std::vector<RankedPairRecord> out;
  for (const auto& s : sets)
    for (const auto& p : s.pairs.pairs)
      out.push_back({s.example_id, s.context, p.winner, p.loser, s.pairs.source, p.confidence});
  return out;
}

std::vector<ContextTarget> filter_positives(const std::vector<PreferenceRecord>& feedback) {
  std::vector<ContextTarget> out;
  out.reserve(feedback.size());
  for (const auto& r : feedback) out.push_back({r.context, with_eos(r.winner())});
  return out;
}

std::vector<ContextTarget> filter_best_of_m(const std::vector<JudgedSet>& sets) {
  std::vector<ContextTarget> out;
  out.reserve(sets.size());
  for (const auto& s : sets) out.push_back({s.context, with_eos(s.candidates.at(s.best))});
  return out;
}

CeTrainResult run_continue_sft(const ModelParams& sft, const std::vector<ContextTarget>& filtered_train,
                               const std::vector<ContextTarget>& filtered_validation, const CeTrainConfig& config) {
  if (filtered_train.empty()) throw DataError("continue-SFT: the filtered training set is empty");
  if (filtered_validation.empty()) throw DataError("continue-SFT: the filtered validation set is empty");
  return train_cross_entropy(sft, filtered_train, filtered_validation, config);
}

std::vector<CalibrationRecord> direct_examples(const std::vector<PreferenceRecord>& feedback,
                                               const std::map<std::int64_t, Tokens>& references) {
  std::vector<CalibrationRecord> out;
  out.reserve(feedback.size());
  for (const auto& r : feedback) {
    const auto ref = references.find(r.example_id);
    if (ref == references.end())
      throw DependencyError("no SFT reference for feedback example " + std::to_string(r.example_id));
    out.push_back({r.example_id, "feedback", {r.context, with_eos(r.winner()), with_eos(r.loser()), with_eos(ref->second)}});
  }
  return out;
}

std::vector<CalibrationRecord> sample_rank_examples(const std::vector<JudgedSet>& sets, RegTarget reg,
                                                    const std::map<std::int64_t, Tokens>& references) {
  std::vector<CalibrationRecord> out;
  for (const auto& s : sets) {
    if (s.pairs.pairs.empty()) continue;
    Tokens reg_body;
    if (reg == RegTarget::BestDecode) {
      reg_body = s.candidates.at(s.best);
    } else {
      const auto ref = references.find(s.example_id);
      if (ref == references.end())
        throw DependencyError("no SFT reference for example " + std::to_string(s.example_id));
      reg_body = ref->second;
    }
    for (const auto& p : s.pairs.pairs)
      out.push_back({s.example_id, s.pairs.source, {s.context, with_eos(p.winner), with_eos(p.loser), with_eos(reg_body)}});
  }
  return out;
}

void write_calibration_examples(const std::filesystem::path& path, const std::vector<CalibrationRecord>& records) {
  std::vector<Json> rows;
  rows.reserve(records.size());
  for (const auto& r : records)
    rows.push_back(Json{{"schema", kCalibSchema},
                        {"example_id", r.example_id},
                        {"source", r.source},
                        {"context", r.example.context},
                        {"positive", strip_eos(r.example.positive)},
                        {"negative", strip_eos(r.example.negative)},
                        {"reg_target", strip_eos(r.example.reg_target)}});
  write_jsonl(path, rows);
}

std::vector<CalibrationRecord> read_calibration_examples(const std::filesystem::path& path) {
  std::vector<CalibrationRecord> out;
  read_jsonl(path, kCalibSchema, [&](const Json& j, std::size_t) {
    CalibrationRecord r;
    r.example_id = j.at("example_id").get<std::int64_t>();
    r.source = j.at("source").get<std::string>();
    r.example.context = tokens_from_json(j, "context");
    r.example.positive = with_eos(tokens_from_json(j, "positive"));
    r.example.negative = with_eos(tokens_from_json(j, "negative"));
    r.example.reg_target = with_eos(tokens_from_json(j, "reg_target"));
    if (r.example.positive == r.example.negative) throw DataError("calibration pair with identical sequences");
    out.push_back(std::move(r));
  });
  return out;
}

void CalibrateConfig::validate() const {
  loss.validate();
  if (steps < 0) throw ConfigError("calib.steps must be >= 0");
  if (pairs_per_step < 1) throw ConfigError("calib.pairs_per_step must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("calib.lr must be positive");
  if (clip_norm < 0.0) throw ConfigError("calib.clip_norm must be >= 0");
  if (eval_every < 1) throw ConfigError("calib.eval_every must be >= 1");
}

CalibrateResult calibrate(const ModelParams& init, const std::vector<CalibrationExample>& examples,
                          const CalibrateConfig& cfg,
                          const std::function<void(int step, const ModelParams&)>& on_snapshot) {
  cfg.validate();
  if (examples.empty()) throw DataError("calibration: no training pairs");
  ModelCounters& counters = model_counters();
  const std::uint64_t loads0 = counters.checkpoint_loads.load();
  const std::uint64_t encodes0 = counters.prefix_encodes.load();
  const std::uint64_t decoded0 = counters.sequences_decoded.load();

  CalibrateResult out;
  ModelParams params = init;
  OptimizerState opt = OptimizerState::for_params(params, cfg.lr);
  AdamConfig adam;
  adam.lr = cfg.lr;
  adam.clip_norm = cfg.clip_norm;
  EpochSampler sampler(examples.size(), derive_seed(cfg.seed, 0xca1b));
  std::vector<CalibrationExample> batch(static_cast<std::size_t>(cfg.pairs_per_step));
  TrainingInstrumentation& ins = out.instrumentation;
  ins.min_updates_per_step = UINT64_MAX;

  for (int step = 0;; ++step) {
    if (is_eval_step(step, cfg.eval_every, cfg.steps) && on_snapshot) on_snapshot(step, params);
    if (step == cfg.steps) break;
    for (auto& b : batch) b = examples[sampler.next()];
    Gradients g = Gradients::zeros_like(params);
    const LossBreakdown lb = slic_hf_batch_loss(params, batch, cfg.loss, &g);
    if (!std::isfinite(lb.total)) throw DivergenceError("calibration loss is not finite at step " + std::to_string(step));
    const std::uint64_t updates0 = counters.parameter_updates.load();
    UpdateResult u = apply_update(params, g, opt, adam);
    const std::uint64_t updates = counters.parameter_updates.load() - updates0;
    params = std::move(u.params);
    opt = std::move(u.state);
    ++ins.steps;
    ins.min_updates_per_step = std::min(ins.min_updates_per_step, updates);
    ins.max_updates_per_step = std::max(ins.max_updates_per_step, updates);
    out.log.push_back({step + 1, lb.calibration, lb.regularization, lb.total,
                       static_cast<double>(lb.zero_hinge_pairs) / static_cast<double>(lb.pairs)});
  }
  if (ins.steps == 0) ins.min_updates_per_step = 0;
  ins.checkpoint_loads = counters.checkpoint_loads.load() - loads0;
  ins.prefix_encodes = counters.prefix_encodes.load() - encodes0;
  ins.sequences_decoded = counters.sequences_decoded.load() - decoded0;
  out.final_params = std::move(params);
  return out;
}

BeamDecodes beam_decode_all(const ModelParams& params, const std::vector<Tokens>& contexts, int beam_size,
                            int max_len, int workers) {
  std::vector<Decoded> d(contexts.size());
  parallel_for(contexts.size(), workers,
               [&](std::size_t i) { d[i] = beam_search(params, contexts[i], beam_size, max_len); });
  BeamDecodes out;
  for (auto& x : d) {
    out.truncated += x.truncated ? 1 : 0;
    out.bodies.push_back(std::move(x.body));
  }
  return out;
}

SelectionResult select_by_win_rate(const std::vector<int>& steps,
                                   const std::function<ModelParams(std::size_t)>& load_snapshot,
                                   const ModelParams& ranking_judge, const std::vector<Tokens>& contexts,
                                   const std::vector<Tokens>& references, int beam_size, int max_len, int workers) {
  if (steps.empty()) throw Error("checkpoint selection: no snapshots");
  if (contexts.empty() || contexts.size() != references.size())
    throw Error("checkpoint selection: contexts and references must be non-empty and aligned");
  SelectionResult out;
  double best = -1.0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const ModelParams p = load_snapshot(i);
    const BeamDecodes dec = beam_decode_all(p, contexts, beam_size, max_len, workers);
    const WinRateReport r = win_rate(ranking_judge, dec.bodies, references, contexts);
    out.rows.push_back({steps[i], r.win_rate, r.mean_len,
                        static_cast<double>(dec.truncated) / static_cast<double>(contexts.size())});
    if (r.win_rate > best) {
      best = r.win_rate;
      out.best_index = i;
      out.best_step = steps[i];
    }
  }
  return out;
}

Json EfficiencyLedger::to_json() const {
  return Json{{"system", system},
              {"trainable_sets_per_step", trainable_sets_per_step},
              {"auxiliary_models_in_training", auxiliary_models_in_training},
              {"decoder_calls_in_training", decoder_calls_in_training},
              {"decoded_sequences", decoded_sequences},
              {"decode_contexts", decode_contexts},
              {"m", m},
              {"decode_offline", decode_offline},
              {"judging_offline", judging_offline},
              {"context_encodes_per_set", context_encodes_per_set}};
}

EfficiencyLedger EfficiencyLedger::from_json(const Json& j) {
  EfficiencyLedger l;
  try {
    l.system = j.at("system").get<std::string>();
    l.trainable_sets_per_step = j.at("trainable_sets_per_step").get<std::uint64_t>();
    l.auxiliary_models_in_training = j.at("auxiliary_models_in_training").get<std::uint64_t>();
    l.decoder_calls_in_training = j.at("decoder_calls_in_training").get<std::uint64_t>();
    l.decoded_sequences = j.at("decoded_sequences").get<std::uint64_t>();
    l.decode_contexts = j.at("decode_contexts").get<std::uint64_t>();
    l.m = j.at("m").get<int>();
    l.decode_offline = j.at("decode_offline").get<bool>();
    l.judging_offline = j.at("judging_offline").get<bool>();
    l.context_encodes_per_set = j.at("context_encodes_per_set").get<double>();
  } catch (const Json::exception& e) {
    throw DataError(std::string("efficiency ledger is missing counters: ") + e.what());
  }
  return l;
}

std::vector<std::string> EfficiencyLedger::violations() const {
  std::vector<std::string> v;
  if (trainable_sets_per_step != 1)
    v.push_back(system + ": " + std::to_string(trainable_sets_per_step) + " trainable parameter sets per step");
  if (auxiliary_models_in_training != 0)
    v.push_back(system + ": " + std::to_string(auxiliary_models_in_training) + " auxiliary models loaded in training");
  if (decoder_calls_in_training != 0) v.push_back(system + ": the training loop invoked the decoder");
  if (!decode_offline || !judging_offline) v.push_back(system + ": decoding or judging ran inside training");
  if (decode_contexts > 0) {
    if (decoded_sequences != static_cast<std::uint64_t>(m) * decode_contexts)
      v.push_back(system + ": decoded sequences " + std::to_string(decoded_sequences) + " != m x contexts");
    if (context_encodes_per_set != 1.0) v.push_back(system + ": context encoded more than once per candidate set");
  }
  return v;
}

EfficiencyLedger collect_efficiency_ledger(const PipelineSpec& spec, const TrainingInstrumentation& training,
                                           const std::optional<DecodeStats>& decode) {
  if (spec.recipe == Recipe::SlicSampleRank && !decode)
    throw DependencyError("efficiency ledger: sample-rank run without decode-stage counters");
  EfficiencyLedger l;
  l.system = spec.name();
  l.trainable_sets_per_step = training.max_updates_per_step;
  if (training.min_updates_per_step != training.max_updates_per_step) l.trainable_sets_per_step = 0;
  l.auxiliary_models_in_training = training.checkpoint_loads;
  l.decoder_calls_in_training = training.prefix_encodes + training.sequences_decoded;
  l.decode_offline = l.decoder_calls_in_training == 0;
  l.judging_offline = training.checkpoint_loads == 0;
  l.m = spec.m;
  if (decode) {
    l.decoded_sequences = decode->sequences;
    l.decode_contexts = decode->contexts;
    l.context_encodes_per_set =
        decode->contexts ? static_cast<double>(decode->context_encodes) / static_cast<double>(decode->contexts) : 0.0;
  }
  return l;
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const std::size_t w = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (w <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < w; ++t) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace slic
