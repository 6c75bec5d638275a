#include "slic/run.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>

namespace slic {

namespace fs = std::filesystem;

namespace {

constexpr const char* kManifestSchema = "slic.manifest/1";
constexpr const char* kConfigFile = "config.json";
constexpr const char* kManifestFile = "manifest.jsonl";

std::string fmt_num(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

// Command that produces each stage directory, for dependency diagnostics.
std::string producer_of(const std::string& rel) {
  static const std::vector<std::pair<std::string, std::string>> table = {
      {"data/", "gen-data"},         {"sft/", "train-sft"},       {"judge_pairwise/", "train-judge --kind pairwise"},
      {"judge_pointwise/", "train-judge --kind pointwise"},       {"decode/", "decode"},
      {"judged_ranking/", "judge --kind pairwise"},               {"judged_reward/", "judge --kind pointwise"},
      {"pairs/", "make-pairs"},      {"calib/", "calibrate"},     {"select/", "calibrate"},
      {"continue_sft/", "continue-sft"},                          {"eval/", "evaluate"},
      {"ledger/", "ledger"},         {"report/", "report"}};
  for (const auto& [prefix, cmd] : table)
    if (rel.rfind(prefix, 0) == 0) return cmd;
  return "an earlier stage";
}

std::map<std::string, std::string> hash_files(const RunDir& run, const std::vector<std::string>& rels) {
  std::map<std::string, std::string> out;
  for (const auto& r : rels) out[r] = sha256_file(run.path(r));
  return out;
}

template <typename Row>
void write_csv(const fs::path& path, const std::string& header, const std::vector<Row>& rows,
               const std::function<std::string(const Row&)>& line) {
  std::string out = header + "\n";
  for (const auto& r : rows) out += line(r) + "\n";
  write_file(path, out);
}

std::string judge_dir(JudgeKind k) { return k == JudgeKind::Pairwise ? "judge_pairwise" : "judge_pointwise"; }
std::string judged_dir(JudgeKind k) { return k == JudgeKind::Pairwise ? "judged_ranking" : "judged_reward"; }

std::map<std::int64_t, Tokens> references_by_id(const std::vector<SftExample>& xs) {
  std::map<std::int64_t, Tokens> m;
  for (const auto& e : xs) m[e.id] = e.reference;
  return m;
}

std::map<std::int64_t, Tokens> contexts_by_id(const std::vector<SftExample>& xs) {
  std::map<std::int64_t, Tokens> m;
  for (const auto& e : xs) m[e.id] = e.context;
  return m;
}

std::vector<SftExample> head(std::vector<SftExample> xs, std::size_t n) {
  if (n < xs.size()) xs.resize(n);
  return xs;
}

ModelParams load_params(const RunDir& run, const std::string& rel, const ModelConfig& expected) {
  return load_checkpoint(run.path(rel), expected).params;
}

std::string step_name(int step) { return fmt_num("step_%06.0f.ckpt", static_cast<double>(step)); }

}  // namespace

RunDir RunDir::open(const fs::path& root, const std::optional<Config>& config) {
  RunDir r;
  r.root_ = root;
  const fs::path cfg = root / kConfigFile;
  if (fs::exists(cfg)) {
    r.config_ = Config::from_file(cfg);
    r.config_.validate();
    if (config && config->hash() != r.config_.hash())
      throw ConfigError("run directory " + root.string() +
                        " was created with a different configuration; use a new run directory");
  } else {
    if (fs::exists(root) && !fs::is_empty(root))
      throw Error("directory " + root.string() + " exists but is not a run directory");
    r.config_ = config ? *config : Config::defaults();
    r.config_.validate();
    fs::create_directories(root);
    write_file(cfg, r.config_.canonical());
    write_file(root / kManifestFile, "");
    Json seeds = Json::object();
    for (const auto& f : config_schema())
      if (f.key.size() > 5 && f.key.compare(f.key.size() - 5, 5, ".seed") == 0) seeds[f.key] = r.config_.get_int(f.key);
    r.append(Json{{"event", "create"},
                  {"config_hash", r.config_.hash()},
                  {"seeds", seeds},
                  {"tool_version", kToolVersion}});
  }
  return r;
}

std::vector<Json> RunDir::manifest() const {
  std::vector<Json> out;
  read_jsonl(root_ / kManifestFile, kManifestSchema, [&](const Json& j, std::size_t) { out.push_back(j); });
  return out;
}

void RunDir::append(Json record) const {
  record["schema"] = kManifestSchema;
  std::ofstream out(root_ / kManifestFile, std::ios::app | std::ios::binary);
  if (!out) throw Error("cannot append to manifest in " + root_.string());
  out << record.dump() << "\n";
}

bool RunDir::stage_started(const std::string& stage) const {
  for (const auto& r : manifest())
    if (r.value("stage", "") == stage) return true;
  return false;
}

std::vector<std::string> RunDir::stage_outputs(const std::string& stage) const {
  std::vector<std::string> out;
  for (const auto& r : manifest())
    if (r.value("stage", "") == stage && r.value("event", "") == "finish") {
      out.clear();
      for (const auto& [k, v] : r.at("outputs").items()) out.push_back(k);
    }
  return out;
}

bool RunDir::stage_complete(const std::string& stage) const {
  std::optional<Json> finish;
  for (const auto& r : manifest())
    if (r.value("stage", "") == stage && r.value("event", "") == "finish") finish = r;
  if (!finish) return false;
  for (const auto& [rel, hash] : finish->at("outputs").items()) {
    const fs::path p = root_ / rel;
    if (!fs::exists(p) || sha256_file(p) != hash.get<std::string>()) return false;
  }
  return true;
}

bool run_stage(const RunDir& run, const std::string& stage, const std::vector<std::string>& inputs,
               const std::function<std::vector<std::string>()>& body, bool resume) {
  if (run.stage_complete(stage)) {
    if (resume) return false;
    throw Error("stage '" + stage + "' already completed in " + run.root().string() +
                "; use a new run directory or --resume");
  }
  if (run.stage_started(stage) && !resume)
    throw Error("stage '" + stage + "' has partial outputs in " + run.root().string() + "; rerun with --resume");
  for (const auto& in : inputs)
    if (!fs::exists(run.path(in)))
      throw DependencyError("missing artifact " + run.path(in).string() + " (produced by `" + producer_of(in) + "`)");
  const fs::path dir = run.path(stage);
  if (fs::exists(dir)) fs::remove_all(dir);
  fs::create_directories(dir);
  const auto t0 = std::chrono::steady_clock::now();
  Json in_hashes = hash_files(run, inputs);
  run.append(Json{{"stage", stage},
                  {"event", "start"},
                  {"inputs", in_hashes},
                  {"config_hash", run.config().hash()},
                  {"tool_version", kToolVersion}});
  const std::vector<std::string> outputs = body();
  for (const auto& o : outputs)
    if (!fs::exists(run.path(o))) throw Error("stage '" + stage + "' did not produce " + o);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  run.append(Json{{"stage", stage},
                  {"event", "finish"},
                  {"outputs", hash_files(run, outputs)},
                  {"wall_seconds", secs}});
  std::fprintf(stderr, "[%s] %.1fs\n", stage.c_str(), secs);
  return true;
}

// ---- stages ----

void stage_gen_data(const RunDir& run, bool resume) {
  const Config& c = run.config();
  run_stage(run, "data", {}, [&] {
    const TaskConfig task = c.task();
    const SftDatasets d = gen_sft_dataset(task);
    FeedbackStats train_stats, val_stats;
    const auto fb_train = gen_feedback_dataset(d.train, task, derive_seed(task.seed, 0xfeed, 1), &train_stats);
    const auto fb_val = gen_feedback_dataset(d.validation, task, derive_seed(task.seed, 0xfeed, 2), &val_stats);
    write_sft_split(run.path("data/sft_train.jsonl"), d.train);
    write_sft_split(run.path("data/sft_validation.jsonl"), d.validation);
    write_sft_split(run.path("data/sft_test.jsonl"), d.test);
    write_feedback(run.path("data/feedback_train.jsonl"), fb_train);
    write_feedback(run.path("data/feedback_validation.jsonl"), fb_val);
    write_oracle(run.path("data/oracle.jsonl"), d);
    auto stats = [](const FeedbackStats& s) {
      return Json{{"generated", s.generated}, {"skipped_identical", s.skipped_identical}, {"quality_ties", s.quality_ties}};
    };
    write_file(run.path("data/stats.json"),
               dump_canonical(Json{{"feedback_train", stats(train_stats)}, {"feedback_validation", stats(val_stats)},
                                   {"sft_train", d.train.size()}, {"sft_validation", d.validation.size()},
                                   {"sft_test", d.test.size()}},
                              2) +
                   "\n");
    return std::vector<std::string>{"data/sft_train.jsonl",      "data/sft_validation.jsonl",
                                    "data/sft_test.jsonl",       "data/feedback_train.jsonl",
                                    "data/feedback_validation.jsonl", "data/oracle.jsonl", "data/stats.json"};
  }, resume);
}

namespace {
void write_ce_outputs(const RunDir& run, const std::string& dir, const CeTrainResult& r) {
  save_checkpoint(r.params, nullptr, run.path(dir + "/model.ckpt"));
  write_csv<CeLogRow>(run.path(dir + "/log.csv"), "step,train_loss,val_perplexity", r.log, [](const CeLogRow& row) {
    return std::to_string(row.step) + "," + fmt_num("%.6f", row.train_loss) + "," +
           (row.val_perplexity < 0 ? std::string("") : fmt_num("%.6f", row.val_perplexity));
  });
  write_file(run.path(dir + "/summary.json"),
             dump_canonical(Json{{"best_step", r.best_step},
                                 {"best_val_perplexity", r.best_perplexity},
                                 {"initial_val_perplexity", r.initial_perplexity}},
                            2) +
                 "\n");
}
}  // namespace

void stage_train_sft(const RunDir& run, bool resume) {
  const Config& c = run.config();
  run_stage(run, "sft", {"data/sft_train.jsonl", "data/sft_validation.jsonl"}, [&] {
    SftDatasets d;
    d.train = read_sft_split(run.path("data/sft_train.jsonl"));
    d.validation = read_sft_split(run.path("data/sft_validation.jsonl"));
    const CeTrainResult r = run_sft(d, c.policy_model(), c.policy_init_seed(), c.sft_training());
    write_ce_outputs(run, "sft", r);
    return std::vector<std::string>{"sft/model.ckpt", "sft/log.csv", "sft/summary.json"};
  }, resume);
}

void stage_train_judge(const RunDir& run, JudgeKind kind, bool resume) {
  const Config& c = run.config();
  const std::string dir = judge_dir(kind);
  const bool from_sft = c.get_string("judge.init") == "sft";
  std::vector<std::string> inputs{"data/feedback_train.jsonl", "data/feedback_validation.jsonl"};
  if (from_sft) inputs.push_back("sft/model.ckpt");
  run_stage(run, dir, inputs, [&] {
    const auto train = read_feedback(run.path("data/feedback_train.jsonl"));
    const auto val = read_feedback(run.path("data/feedback_validation.jsonl"));
    const JudgeTrainConfig jc = c.judge_training();
    const JudgeTrainResult r = from_sft ? train_judge(train, val, kind, jc, load_params(run, "sft/model.ckpt", jc.model))
                                        : train_judge(train, val, kind, jc);
    save_checkpoint(r.params, nullptr, run.path(dir + "/model.ckpt"));
    write_csv<JudgeLogRow>(run.path(dir + "/log.csv"), "step,train_loss,val_accuracy", r.log,
                           [](const JudgeLogRow& row) {
                             return std::to_string(row.step) + "," + fmt_num("%.6f", row.loss) + "," +
                                    (row.val_accuracy < 0 ? std::string("") : fmt_num("%.6f", row.val_accuracy));
                           });
    write_file(run.path(dir + "/summary.json"),
               dump_canonical(Json{{"kind", to_string(kind)},
                                   {"best_step", r.best_step},
                                   {"best_val_accuracy", r.best_accuracy},
                                   {"init", from_sft ? "sft" : "random"}},
                              2) +
                   "\n");
    return std::vector<std::string>{dir + "/model.ckpt", dir + "/log.csv", dir + "/summary.json"};
  }, resume);
}

void stage_decode(const RunDir& run, bool resume) {
  const Config& c = run.config();
  run_stage(run, "decode", {"sft/model.ckpt", "data/sft_train.jsonl", "data/sft_validation.jsonl"}, [&] {
    const ModelParams sft = load_params(run, "sft/model.ckpt", c.policy_model());
    const auto train = context_items(read_sft_split(run.path("data/sft_train.jsonl")),
                                     static_cast<std::size_t>(c.get_int("decode.n_contexts")));
    const auto val = context_items(read_sft_split(run.path("data/sft_validation.jsonl")),
                                   static_cast<std::size_t>(c.get_int("decode.n_validation")));
    DecodeStats ts, vs;
    const auto train_sets = decode_stage(sft, train, c.m(), c.sampling(), c.workers(), &ts);
    const auto val_sets = decode_stage(sft, val, c.m(), c.sampling(), c.workers(), &vs);
    write_decode_dump(run.path("decode/train.jsonl"), to_decode_records(train, train_sets));
    write_decode_dump(run.path("decode/validation.jsonl"), to_decode_records(val, val_sets));
    auto stats = [&](const DecodeStats& s) {
      return Json{{"contexts", s.contexts},           {"sequences", s.sequences},
                  {"truncated", s.truncated},         {"context_encodes", s.context_encodes},
                  {"single_text_sets", s.single_text_sets}, {"mean_length", s.mean_length},
                  {"mean_distinct", s.mean_distinct}, {"m", c.m()}};
    };
    write_file(run.path("decode/stats.json"),
               dump_canonical(Json{{"train", stats(ts)}, {"validation", stats(vs)}}, 2) + "\n");
    return std::vector<std::string>{"decode/train.jsonl", "decode/validation.jsonl", "decode/stats.json"};
  }, resume);
}

void stage_judge(const RunDir& run, JudgeKind kind, bool resume) {
  const Config& c = run.config();
  const std::string dir = judged_dir(kind);
  const std::string jdir = judge_dir(kind);
  run_stage(run, dir,
            {jdir + "/model.ckpt", "decode/train.jsonl", "decode/validation.jsonl", "data/sft_train.jsonl",
             "data/sft_validation.jsonl"},
            [&] {
              const ModelParams judge = load_params(run, jdir + "/model.ckpt", c.judge_model());
              const auto ctx_train = contexts_by_id(read_sft_split(run.path("data/sft_train.jsonl")));
              const auto ctx_val = contexts_by_id(read_sft_split(run.path("data/sft_validation.jsonl")));
              const std::uint64_t seed = derive_seed(static_cast<std::uint64_t>(c.get_int("decode.seed")), 0x5c0e);
              JudgeStageStats ts, vs;
              const auto train = judge_stage(judge, kind, read_decode_dump(run.path("decode/train.jsonl")), ctx_train,
                                             static_cast<std::size_t>(c.m()), seed, c.workers(), &ts);
              const auto val = judge_stage(judge, kind, read_decode_dump(run.path("decode/validation.jsonl")), ctx_val,
                                           static_cast<std::size_t>(c.m()), seed, c.workers(), &vs);
              write_judged(run.path(dir + "/train.jsonl"), train);
              write_judged(run.path(dir + "/validation.jsonl"), val);
              write_ranked_pairs(run.path(dir + "/pairs.jsonl"), pair_records(train));
              auto stats = [](const JudgeStageStats& s) {
                return Json{{"contexts", s.contexts},
                            {"skipped_all_truncated", s.skipped_all_truncated},
                            {"degenerate_sets", s.degenerate_sets},
                            {"pairs", s.pairs},
                            {"comparisons", s.comparisons},
                            {"dropped_truncated", s.dropped_truncated}};
              };
              write_file(run.path(dir + "/stats.json"),
                         dump_canonical(Json{{"train", stats(ts)}, {"validation", stats(vs)}}, 2) + "\n");
              return std::vector<std::string>{dir + "/train.jsonl", dir + "/validation.jsonl", dir + "/pairs.jsonl",
                                              dir + "/stats.json"};
            },
            resume);
}

void stage_make_pairs(const RunDir& run, const PipelineSpec& spec, bool resume) {
  spec.validate();
  if (spec.recipe != Recipe::SlicDirect && spec.recipe != Recipe::SlicSampleRank)
    throw ConfigError("make-pairs applies to calibration recipes only, not " + spec.name());
  const std::string dir = "pairs/" + spec.name();
  std::vector<std::string> inputs;
  const bool needs_refs = spec.reg_target == RegTarget::SftTarget;
  if (spec.recipe == Recipe::SlicDirect) {
    inputs = {"data/feedback_train.jsonl"};
  } else {
    inputs = {judged_dir(*spec.judge_mode) + "/train.jsonl"};
  }
  if (needs_refs) inputs.push_back("data/sft_train.jsonl");
  run_stage(run, dir, inputs, [&] {
    std::map<std::int64_t, Tokens> refs;
    if (needs_refs) refs = references_by_id(read_sft_split(run.path("data/sft_train.jsonl")));
    std::vector<CalibrationRecord> ex;
    if (spec.recipe == Recipe::SlicDirect)
      ex = direct_examples(read_feedback(run.path("data/feedback_train.jsonl")), refs);
    else
      ex = sample_rank_examples(read_judged(run.path(inputs[0])), spec.reg_target, refs);
    if (ex.empty()) throw DataError("make-pairs produced no calibration pairs for " + spec.name());
    write_calibration_examples(run.path(dir + "/examples.jsonl"), ex);
    return std::vector<std::string>{dir + "/examples.jsonl"};
  }, resume);
}

namespace {

void require_calibration_recipe(const PipelineSpec& spec, const char* cmd) {
  spec.validate();
  if (spec.recipe != Recipe::SlicDirect && spec.recipe != Recipe::SlicSampleRank)
    throw ConfigError(std::string(cmd) + " applies to calibration recipes only, not " + spec.name());
}

CalibrateConfig calibrate_config(const Config& c, const PipelineSpec& spec) {
  CalibrateConfig x = c.calibration();
  x.loss.reg_target = spec.reg_target;
  return x;
}

std::vector<int> snapshot_steps(const CalibrateConfig& cc) {
  std::vector<int> steps;
  for (int s = 0; s <= cc.steps; ++s)
    if (s % cc.eval_every == 0 || s == cc.steps) steps.push_back(s);
  return steps;
}

}  // namespace

void stage_calibrate_train(const RunDir& run, const PipelineSpec& spec, bool resume) {
  require_calibration_recipe(spec, "calibrate");
  const Config& c = run.config();
  const std::string name = spec.name();
  const std::string cdir = "calib/" + name;
  const CalibrateConfig cc = calibrate_config(c, spec);
  // Reads only the initial checkpoint and the pairs file.
  run_stage(run, cdir, {"sft/model.ckpt", "pairs/" + name + "/examples.jsonl"}, [&] {
    const ModelParams init = load_params(run, "sft/model.ckpt", c.policy_model());
    std::vector<CalibrationExample> ex;
    for (auto& r : read_calibration_examples(run.path("pairs/" + name + "/examples.jsonl")))
      ex.push_back(std::move(r.example));
    std::vector<std::string> outputs;
    fs::create_directories(run.path(cdir + "/snapshots"));
    const CalibrateResult res = calibrate(init, ex, cc, [&](int step, const ModelParams& p) {
      const std::string rel = cdir + "/snapshots/" + step_name(step);
      save_checkpoint(p, nullptr, run.path(rel));
      outputs.push_back(rel);
    });
    write_csv<CalibLogRow>(run.path(cdir + "/log.csv"), "step,calibration,regularization,total,zero_hinge_fraction",
                           res.log, [](const CalibLogRow& r) {
                             return std::to_string(r.step) + "," + fmt_num("%.6f", r.calibration) + "," +
                                    fmt_num("%.6f", r.regularization) + "," + fmt_num("%.6f", r.total) + "," +
                                    fmt_num("%.4f", r.zero_hinge_fraction);
                           });
    const TrainingInstrumentation& ins = res.instrumentation;
    write_file(run.path(cdir + "/instrumentation.json"),
               dump_canonical(Json{{"system", name},
                                   {"pairs", ex.size()},
                                   {"steps", ins.steps},
                                   {"min_updates_per_step", ins.min_updates_per_step},
                                   {"max_updates_per_step", ins.max_updates_per_step},
                                   {"checkpoint_loads", ins.checkpoint_loads},
                                   {"prefix_encodes", ins.prefix_encodes},
                                   {"sequences_decoded", ins.sequences_decoded}},
                              2) +
                   "\n");
    outputs.push_back(cdir + "/log.csv");
    outputs.push_back(cdir + "/instrumentation.json");
    return outputs;
  }, resume);
}

void stage_select(const RunDir& run, const PipelineSpec& spec, bool resume) {
  require_calibration_recipe(spec, "calibrate");
  const Config& c = run.config();
  const std::string name = spec.name();
  const std::string cdir = "calib/" + name;
  const std::vector<int> steps = snapshot_steps(calibrate_config(c, spec));
  const std::string sdir = "select/" + name;
  std::vector<std::string> inputs{"judge_pairwise/model.ckpt", "data/sft_validation.jsonl"};
  for (int s : steps) inputs.push_back(cdir + "/snapshots/" + step_name(s));
  run_stage(run, sdir, inputs, [&] {
    const ModelParams judge = load_params(run, "judge_pairwise/model.ckpt", c.judge_model());
    const auto val = head(read_sft_split(run.path("data/sft_validation.jsonl")),
                          static_cast<std::size_t>(c.get_int("decode.n_validation")));
    std::vector<Tokens> ctx, ref;
    for (const auto& e : val) {
      ctx.push_back(e.context);
      ref.push_back(e.reference);
    }
    const SelectionResult sel = select_by_win_rate(
        steps, [&](std::size_t i) { return load_params(run, cdir + "/snapshots/" + step_name(steps[i]), c.policy_model()); },
        judge, ctx, ref, c.eval_beam_size(), c.decode_max_len(), c.workers());
    write_csv<SelectionRow>(run.path(sdir + "/selection.csv"), "step,judge_win_rate,mean_decode_length,truncation_rate",
                            sel.rows, [](const SelectionRow& r) {
                              return std::to_string(r.step) + "," + fmt_num("%.6f", r.judge_win_rate) + "," +
                                     fmt_num("%.4f", r.mean_decode_length) + "," + fmt_num("%.4f", r.truncation_rate);
                            });
    fs::copy_file(run.path(cdir + "/snapshots/" + step_name(sel.best_step)), run.path(sdir + "/model.ckpt"));
    write_file(run.path(sdir + "/summary.json"),
               dump_canonical(Json{{"system", name},
                                   {"selected_step", sel.best_step},
                                   {"selected_judge_win_rate", sel.rows[sel.best_index].judge_win_rate},
                                   {"criterion", "pairwise judge win rate vs references on validation beam decodes"}},
                              2) +
                   "\n");
    return std::vector<std::string>{sdir + "/selection.csv", sdir + "/model.ckpt", sdir + "/summary.json"};
  }, resume);
}

void stage_calibrate(const RunDir& run, const PipelineSpec& spec, bool resume) {
  stage_calibrate_train(run, spec, resume);
  stage_select(run, spec, resume);
}

void stage_continue_sft(const RunDir& run, FilterMode filter, bool resume) {
  const Config& c = run.config();
  const std::string dir = "continue_sft/" + to_string(filter);
  std::vector<std::string> inputs{"sft/model.ckpt"};
  if (filter == FilterMode::PositivesHf) {
    inputs.push_back("data/feedback_train.jsonl");
    inputs.push_back("data/feedback_validation.jsonl");
  } else {
    const std::string jd = judged_dir(filter == FilterMode::BestOfMRanking ? JudgeKind::Pairwise : JudgeKind::Pointwise);
    inputs.push_back(jd + "/train.jsonl");
    inputs.push_back(jd + "/validation.jsonl");
  }
  run_stage(run, dir, inputs, [&] {
    std::vector<ContextTarget> train, val;
    if (filter == FilterMode::PositivesHf) {
      train = filter_positives(read_feedback(run.path(inputs[1])));
      val = filter_positives(read_feedback(run.path(inputs[2])));
    } else {
      train = filter_best_of_m(read_judged(run.path(inputs[1])));
      val = filter_best_of_m(read_judged(run.path(inputs[2])));
    }
    const ModelParams sft = load_params(run, "sft/model.ckpt", c.policy_model());
    const CeTrainResult r = run_continue_sft(sft, train, val, c.continue_sft_training());
    write_ce_outputs(run, dir, r);
    write_file(run.path(dir + "/filtered.json"),
               dump_canonical(Json{{"filter", to_string(filter)}, {"train", train.size()}, {"validation", val.size()}}, 2) +
                   "\n");
    return std::vector<std::string>{dir + "/model.ckpt", dir + "/log.csv", dir + "/summary.json", dir + "/filtered.json"};
  }, resume);
}

std::vector<std::string> ablation_systems(int m) {
  std::vector<std::string> out{"reference"};
  for (const auto& s : ablation_specs(m)) out.push_back(s.name());
  return out;
}

PipelineSpec spec_from_name(const std::string& name, int m) {
  for (const auto& s : ablation_specs(m))
    if (s.name() == name) return s;
  std::string known;
  for (const auto& s : ablation_specs(m)) known += " " + s.name();
  throw ConfigError("unknown system '" + name + "' (expected one of:" + known + ")");
}

std::string system_checkpoint(const PipelineSpec& spec) {
  switch (spec.recipe) {
    case Recipe::Sft:
      return "sft/model.ckpt";
    case Recipe::ContinueSft:
      return "continue_sft/" + to_string(*spec.filter) + "/model.ckpt";
    default:
      return "select/" + spec.name() + "/model.ckpt";
  }
}

void stage_evaluate(const RunDir& run, const std::string& system, bool resume) {
  const Config& c = run.config();
  const bool is_ref = system == "reference";
  std::optional<PipelineSpec> spec;
  if (!is_ref) spec = spec_from_name(system, c.m());
  const std::string dir = "eval/" + system;
  std::vector<std::string> inputs{"judge_pairwise/model.ckpt", "data/sft_test.jsonl", "data/oracle.jsonl"};
  if (spec) inputs.push_back(system_checkpoint(*spec));
  run_stage(run, dir, inputs, [&] {
    const auto test = read_sft_split(run.path("data/sft_test.jsonl"));
    const OracleIndex oracle = read_oracle(run.path("data/oracle.jsonl"));
    const ModelParams judge = load_params(run, "judge_pairwise/model.ckpt", c.judge_model());
    std::vector<Tokens> ctx, ref;
    std::vector<std::int64_t> ids;
    for (const auto& e : test) {
      ctx.push_back(e.context);
      ref.push_back(e.reference);
      ids.push_back(e.id);
    }
    BeamDecodes dec;
    if (is_ref) {
      dec.bodies = ref;
    } else {
      const ModelParams p = load_params(run, system_checkpoint(*spec), c.policy_model());
      dec = beam_decode_all(p, ctx, c.eval_beam_size(), c.decode_max_len(), c.workers());
    }
    std::vector<Json> rows;
    for (std::size_t i = 0; i < ids.size(); ++i)
      rows.push_back(Json{{"schema", "slic.eval_decode/1"}, {"example_id", ids[i]}, {"tokens", dec.bodies[i]}});
    write_jsonl(run.path(dir + "/decodes.jsonl"), rows);
    const auto edges = c.bucket_edges();
    const WinRateReport jr = win_rate(judge, dec.bodies, ref, ctx, edges);
    const WinRateReport orr = oracle_win_rate(dec.bodies, ref, ids, oracle, c.task().weights, edges);
    write_file(run.path(dir + "/report.json"),
               dump_canonical(Json{{"system", system},
                                   {"truncation_rate", static_cast<double>(dec.truncated) / static_cast<double>(ids.size())},
                                   {"judge", to_json(jr)},
                                   {"oracle", to_json(orr)}},
                              2) +
                   "\n");
    return std::vector<std::string>{dir + "/decodes.jsonl", dir + "/report.json"};
  }, resume);
}

std::vector<EfficiencyLedger> stage_ledger(const RunDir& run, bool resume) {
  const Config& c = run.config();
  std::vector<std::string> inputs{"decode/stats.json"};
  std::vector<PipelineSpec> specs;
  for (const auto& s : ablation_specs(c.m()))
    if (s.recipe == Recipe::SlicDirect || s.recipe == Recipe::SlicSampleRank) {
      specs.push_back(s);
      inputs.push_back("calib/" + s.name() + "/instrumentation.json");
    }
  std::vector<EfficiencyLedger> ledgers;
  auto collect = [&] {
    ledgers.clear();
    const Json dstats = Json::parse(read_file(run.path("decode/stats.json"))).at("train");
    DecodeStats ds;
    ds.contexts = dstats.at("contexts").get<std::size_t>();
    ds.sequences = dstats.at("sequences").get<std::size_t>();
    ds.context_encodes = dstats.at("context_encodes").get<std::size_t>();
    for (const auto& s : specs) {
      const Json j = Json::parse(read_file(run.path("calib/" + s.name() + "/instrumentation.json")));
      TrainingInstrumentation ins;
      ins.steps = j.at("steps").get<std::uint64_t>();
      ins.min_updates_per_step = j.at("min_updates_per_step").get<std::uint64_t>();
      ins.max_updates_per_step = j.at("max_updates_per_step").get<std::uint64_t>();
      ins.checkpoint_loads = j.at("checkpoint_loads").get<std::uint64_t>();
      ins.prefix_encodes = j.at("prefix_encodes").get<std::uint64_t>();
      ins.sequences_decoded = j.at("sequences_decoded").get<std::uint64_t>();
      ledgers.push_back(collect_efficiency_ledger(
          s, ins, s.recipe == Recipe::SlicSampleRank ? std::optional<DecodeStats>(ds) : std::nullopt));
    }
  };
  const bool ran = run_stage(run, "ledger", inputs, [&] {
    collect();
    Json all = Json::array();
    std::string txt = "system\ttrainable_sets_per_step\tauxiliary_models_in_training\tdecoded_sequences\tcontexts\tm\t"
                      "context_encodes_per_set\tdecode_offline\tjudging_offline\n";
    for (const auto& l : ledgers) {
      all.push_back(l.to_json());
      txt += l.system + "\t" + std::to_string(l.trainable_sets_per_step) + "\t" +
             std::to_string(l.auxiliary_models_in_training) + "\t" + std::to_string(l.decoded_sequences) + "\t" +
             std::to_string(l.decode_contexts) + "\t" + std::to_string(l.m) + "\t" +
             fmt_num("%.3f", l.context_encodes_per_set) + "\t" + (l.decode_offline ? "yes" : "no") + "\t" +
             (l.judging_offline ? "yes" : "no") + "\n";
    }
    write_file(run.path("ledger/efficiency.json"), dump_canonical(all, 2) + "\n");
    write_file(run.path("ledger/efficiency.tsv"), txt);
    return std::vector<std::string>{"ledger/efficiency.json", "ledger/efficiency.tsv"};
  }, resume);
  if (!ran) {
    ledgers.clear();
    for (const auto& j : Json::parse(read_file(run.path("ledger/efficiency.json"))))
      ledgers.push_back(EfficiencyLedger::from_json(j));
  }
  std::vector<std::string> violations;
  for (const auto& l : ledgers)
    for (auto& v : l.violations()) violations.push_back(std::move(v));
  if (!violations.empty()) {
    std::string msg = "efficiency ledger invariants violated:";
    for (const auto& v : violations) msg += "\n  " + v;
    throw Error(msg);
  }
  return ledgers;
}

void stage_report(const RunDir& run, bool resume) {
  const Config& c = run.config();
  std::vector<std::string> systems;
  for (const auto& s : ablation_systems(c.m()))
    if (fs::exists(run.path("eval/" + s + "/report.json"))) systems.push_back(s);
  if (systems.empty()) throw DependencyError("missing artifact " + run.path("eval").string() + " (produced by `evaluate`)");
  std::vector<std::string> inputs;
  for (const auto& s : systems) inputs.push_back("eval/" + s + "/report.json");
  run_stage(run, "report", inputs, [&] {
    std::vector<ComparisonRow> rows;
    for (const auto& in : inputs) {
      const Json j = Json::parse(read_file(run.path(in)));
      ComparisonRow row;
      row.system = j.at("system").get<std::string>();
      row.truncation_rate = j.at("truncation_rate").get<double>();
      row.judge = report_from_json(j.at("judge"));
      row.oracle = report_from_json(j.at("oracle"));
      rows.push_back(std::move(row));
    }
    emit_report(rows, run.path("report"));
    return std::vector<std::string>{"report/comparison.tsv", "report/comparison.txt", "report/buckets.csv",
                                    "report/summary.json"};
  }, resume);
}

void run_ablation(const RunDir& run, bool resume) {
  const Config& c = run.config();
  stage_gen_data(run, resume);
  stage_train_sft(run, resume);
  stage_train_judge(run, JudgeKind::Pairwise, resume);
  stage_train_judge(run, JudgeKind::Pointwise, resume);
  stage_decode(run, resume);
  stage_judge(run, JudgeKind::Pairwise, resume);
  stage_judge(run, JudgeKind::Pointwise, resume);
  for (const auto& s : ablation_specs(c.m())) {
    if (s.recipe == Recipe::ContinueSft) stage_continue_sft(run, *s.filter, resume);
    if (s.recipe == Recipe::SlicDirect || s.recipe == Recipe::SlicSampleRank) {
      stage_make_pairs(run, s, resume);
      stage_calibrate(run, s, resume);
    }
  }
  for (const auto& sys : ablation_systems(c.m())) stage_evaluate(run, sys, resume);
  stage_ledger(run, resume);
  stage_report(run, resume);
}

}  // namespace slic
