#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "slic/data.hpp"
#include "slic/decoding.hpp"
#include "slic/evaluation.hpp"
#include "slic/io.hpp"
#include "slic/losses.hpp"
#include "slic/model.hpp"
#include "slic/pipelines.hpp"
#include "slic/preference.hpp"

namespace slic {

enum class FieldType { Int, Real, Bool, String };

// Where a default value comes from, shown by --explain.
enum class Provenance {
  Recipe,      // published hyperparameter of the method
  DeskScale,   // sized for the synthetic desk-scale setup
  Assumption,  // left open by the method; this value is a choice
  Tuned,       // deviates from the published value after desk-scale tuning
};
std::string to_string(Provenance p);

struct FieldSpec {
  std::string key;
  FieldType type = FieldType::Int;
  Json default_value;
  Provenance provenance = Provenance::DeskScale;
  std::string note;
  double min = -1e300;  // numeric bounds, inclusive unless the *_exclusive flag is set
  double max = 1e300;
  bool min_exclusive = false;
  bool max_exclusive = false;
};

const std::vector<FieldSpec>& config_schema();

// Flat typed configuration: one value per schema key.
class Config {
 public:
  static Config defaults();
  // Reads a flat JSON object; unknown keys and type errors are collected.
  static Config from_file(const std::filesystem::path& path);
  static Config from_json(const Json& j);

  // key=value; the value is parsed according to the schema type.
  void set(const std::string& key, const std::string& value);
  void apply_overrides(const std::vector<std::string>& assignments);

  // Every violation, each naming its key; empty when valid.
  std::vector<std::string> errors() const;
  // Throws ConfigError listing all violations.
  void validate() const;

  Json to_json() const;
  std::string canonical() const;  // byte-stable serialization
  std::string hash() const;       // sha256 of canonical()
  // One line per key: value, provenance and note.
  std::string explain() const;

  std::int64_t get_int(const std::string& key) const;
  double get_real(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::string get_string(const std::string& key) const;

  TaskConfig task() const;
  ModelConfig policy_model() const;
  ModelConfig judge_model() const;
  std::uint64_t policy_init_seed() const;
  CeTrainConfig sft_training() const;
  CeTrainConfig continue_sft_training() const;
  JudgeTrainConfig judge_training() const;
  DecodeConfig sampling() const;
  CalibrateConfig calibration() const;
  int m() const;
  int eval_beam_size() const;
  int decode_max_len() const;
  std::vector<double> bucket_edges() const;
  int workers() const;

 private:
  std::map<std::string, Json> values_;
  std::vector<std::string> load_errors_;
};

}  // namespace slic
