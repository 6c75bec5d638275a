#include <CLI11.hpp>

#include <iostream>
#include <set>

#include "slic/run.hpp"

using namespace slic;

namespace {

JudgeKind parse_kind(const std::string& s) {
  if (s == "pairwise") return JudgeKind::Pairwise;
  if (s == "pointwise") return JudgeKind::Pointwise;
  throw ConfigError("--kind: expected pairwise | pointwise, got '" + s + "'");
}

// Every stage recorded in the manifest must still hash-verify.
void verify_outputs(const RunDir& run) {
  std::set<std::string> stages;
  for (const auto& r : run.manifest())
    if (r.contains("stage")) stages.insert(r.at("stage").get<std::string>());
  for (const auto& s : stages)
    if (!run.stage_complete(s)) throw Error("stage '" + s + "' outputs are missing or fail hash verification");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"slichf: sequence likelihood calibration with human feedback on a synthetic summarization task"};
  app.require_subcommand(0, 1);

  std::string run_dir, config_file, kind = "pairwise", system, filter;
  bool resume = false, explain = false;
  std::vector<std::string> overrides;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "generate SFT, feedback and oracle data"},
      {"train-sft", "train the supervised policy"},
      {"decode", "sample m candidates per training context from the SFT policy"},
      {"train-judge", "train a pairwise or pointwise judge (--kind)"},
      {"judge", "rank or score decoded candidates with a judge (--kind)"},
      {"make-pairs", "build calibration pairs for a system (--system)"},
      {"calibrate", "calibrate and select a checkpoint for a system (--system)"},
      {"continue-sft", "continue cross-entropy training on filtered data (--filter)"},
      {"evaluate", "win rates against references for a system (--system)"},
      {"ablation", "run every stage of the ablation table"},
      {"ledger", "compute and check the efficiency ledger"},
      {"report", "write the comparison table from evaluated systems"},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    CLI::App* s = app.add_subcommand(name, help);
    s->add_option("--run-dir", run_dir, "run directory");
    s->add_option("--config", config_file, "flat JSON config file");
    s->add_flag("--resume", resume, "skip stages that already completed");
    s->add_option("overrides", overrides, "key=value config overrides");
    if (name == "train-judge" || name == "judge") s->add_option("--kind", kind, "pairwise | pointwise");
    if (name == "make-pairs" || name == "calibrate" || name == "evaluate")
      s->add_option("--system", system, "system name")->required();
    if (name == "continue-sft")
      s->add_option("--filter", filter, "positives_hf | best_of_m_reward | best_of_m_ranking")->required();
    subs[name] = s;
  }
  app.add_flag("--explain", explain, "print every config key with its default and provenance, then exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    Config cfg = config_file.empty() ? Config::defaults() : Config::from_file(config_file);
    cfg.apply_overrides(overrides);
    cfg.validate();
    if (explain) {
      std::cout << cfg.explain();
      return 0;
    }
    if (app.get_subcommands().empty()) throw ConfigError("a subcommand is required (see --help)");
    if (run_dir.empty()) throw ConfigError("--run-dir is required");
    const bool explicit_config = !config_file.empty() || !overrides.empty();
    const RunDir run = RunDir::open(run_dir, explicit_config || !std::filesystem::exists(run_dir)
                                                 ? std::optional<Config>(cfg)
                                                 : std::nullopt);
    const int m = run.config().m();
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "gen-data") stage_gen_data(run, resume);
    else if (cmd == "train-sft") stage_train_sft(run, resume);
    else if (cmd == "decode") stage_decode(run, resume);
    else if (cmd == "train-judge") stage_train_judge(run, parse_kind(kind), resume);
    else if (cmd == "judge") stage_judge(run, parse_kind(kind), resume);
    else if (cmd == "make-pairs") stage_make_pairs(run, spec_from_name(system, m), resume);
    else if (cmd == "calibrate") stage_calibrate(run, spec_from_name(system, m), resume);
    else if (cmd == "continue-sft") stage_continue_sft(run, filter_mode_from_string(filter), resume);
    else if (cmd == "evaluate") stage_evaluate(run, system, resume);
    else if (cmd == "ablation") run_ablation(run, resume);
    else if (cmd == "ledger") {
      for (const auto& l : stage_ledger(run, resume)) std::cout << l.to_json().dump() << "\n";
    } else if (cmd == "report") stage_report(run, resume);
    verify_outputs(run);
    if (cmd == "report" || cmd == "ablation") std::cout << read_file(run.path("report/comparison.txt"));
  } catch (const std::exception& e) {
    std::cerr << "slichf: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
