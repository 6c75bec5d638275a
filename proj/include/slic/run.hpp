#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "slic/config.hpp"
#include "slic/io.hpp"
#include "slic/pipelines.hpp"

namespace slic {

inline constexpr const char* kToolVersion = "slichf 1.0.0";

// A run directory: config snapshot, append-only manifest and one
// subdirectory per stage. Completed stages are never rewritten.
class RunDir {
 public:
  // Creates the directory when absent. An existing run must have been created
  // with the same configuration (by hash) unless `config` is empty.
  static RunDir open(const std::filesystem::path& root, const std::optional<Config>& config);

  const std::filesystem::path& root() const { return root_; }
  const Config& config() const { return config_; }
  std::filesystem::path path(const std::string& rel) const { return root_ / rel; }

  std::vector<Json> manifest() const;
  void append(Json record) const;
  // True when a finish record exists and every output still hash-verifies.
  bool stage_complete(const std::string& stage) const;
  bool stage_started(const std::string& stage) const;
  // Output paths (relative) recorded by the finish record of a stage.
  std::vector<std::string> stage_outputs(const std::string& stage) const;

 private:
  std::filesystem::path root_;
  Config config_;
};

// Runs one stage. Inputs are checked (a missing one raises DependencyError
// naming it) and hashed into a start record before `body` runs; the outputs
// it returns are verified and hashed into a finish record. A completed stage
// is skipped when resume is set and rejected otherwise.
// Returns false when the stage was skipped.
bool run_stage(const RunDir& run, const std::string& stage, const std::vector<std::string>& inputs,
               const std::function<std::vector<std::string>()>& body, bool resume);

// Stage entry points, one per CLI subcommand.
void stage_gen_data(const RunDir& run, bool resume);
void stage_train_sft(const RunDir& run, bool resume);
void stage_train_judge(const RunDir& run, JudgeKind kind, bool resume);
void stage_decode(const RunDir& run, bool resume);
void stage_judge(const RunDir& run, JudgeKind kind, bool resume);
void stage_make_pairs(const RunDir& run, const PipelineSpec& spec, bool resume);
// Training on the pairs file, then judge-based snapshot selection.
void stage_calibrate(const RunDir& run, const PipelineSpec& spec, bool resume);
void stage_calibrate_train(const RunDir& run, const PipelineSpec& spec, bool resume);
void stage_select(const RunDir& run, const PipelineSpec& spec, bool resume);
void stage_continue_sft(const RunDir& run, FilterMode filter, bool resume);
// `system` is "reference" or a PipelineSpec name.
void stage_evaluate(const RunDir& run, const std::string& system, bool resume);
// Throws when any calibration recipe violates the ledger invariants.
std::vector<EfficiencyLedger> stage_ledger(const RunDir& run, bool resume);
void stage_report(const RunDir& run, bool resume);

// Every stage of the ablation table in dependency order.
void run_ablation(const RunDir& run, bool resume);

// Names of all systems in the ablation table, reference first.
std::vector<std::string> ablation_systems(int m);
PipelineSpec spec_from_name(const std::string& name, int m);
// Checkpoint evaluated for a system.
std::string system_checkpoint(const PipelineSpec& spec);

}  // namespace slic
