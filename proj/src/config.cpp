#include "slic/config.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace slic {

namespace {

FieldSpec num(std::string key, FieldType type, Json def, Provenance prov, std::string note, double lo = -1e300,
              double hi = 1e300, bool lo_excl = false, bool hi_excl = false) {
  return FieldSpec{std::move(key), type, std::move(def), prov, std::move(note), lo, hi, lo_excl, hi_excl};
}

FieldSpec text(std::string key, std::string def, Provenance prov, std::string note) {
  return FieldSpec{std::move(key), FieldType::String, Json(std::move(def)), prov, std::move(note)};
}

using P = Provenance;
constexpr FieldType I = FieldType::Int;
constexpr FieldType R = FieldType::Real;

std::vector<FieldSpec> build_schema() {
  return {
      num("task.vocab_size", I, 64, P::DeskScale, "token vocabulary including 12 reserved ids", 13, 4096),
      num("task.context_min", I, 24, P::DeskScale, "shortest context", 1, 1000),
      num("task.context_max", I, 48, P::DeskScale, "longest context", 1, 1000),
      num("task.salient_classes", I, 16, P::DeskScale, "content ids that count as salient", 1, 4096),
      num("task.salient_density", R, 0.15, P::DeskScale, "per-position salient probability", 0, 1, true),
      num("task.min_salient", I, 2, P::DeskScale, "lower bound on salient tokens per context", 1, 1000),
      num("task.p_drop", R, 0.5, P::DeskScale, "reference degradation: per-token drop probability", 0, 1, false, true),
      num("task.eta", R, 0.1, P::DeskScale, "oracle label noise", 0, 0.5, false, true),
      num("task.n_train", I, 4000, P::DeskScale, "SFT train examples (one feedback pair each)", 1, 1e7),
      num("task.n_validation", I, 500, P::DeskScale, "SFT validation examples", 1, 1e7),
      num("task.n_test", I, 500, P::DeskScale, "SFT test examples", 1, 1e7),
      num("task.feedback_pairs_per_example", I, 1, P::DeskScale, "feedback pairs drawn per example", 1, 100),
      text("task.feedback_policies", "reference,ref_drop1,ref_insert,extract_hi,extract_mid,extract_lo,scramble",
           P::Assumption, "policies whose outputs make up the off-policy feedback pairs"),
      num("task.w_coverage", R, 1.0, P::DeskScale, "quality weight on salient coverage", 0),
      num("task.w_length", R, 0.5, P::DeskScale, "quality penalty per unit of excess relative length", 0),
      num("task.w_hallucination", R, 1.0, P::DeskScale, "quality penalty on the non-salient fraction", 0),
      num("task.seed", I, 1234, P::DeskScale, "master data seed", 0),

      num("model.width", I, 32, P::DeskScale, "policy model width", 2, 4096),
      num("model.layers", I, 2, P::DeskScale, "policy model depth", 1, 64),
      num("model.heads", I, 2, P::DeskScale, "policy attention heads", 1, 64),
      num("model.mlp_ratio", I, 4, P::DeskScale, "policy MLP expansion", 1, 16),
      num("model.max_len", I, 128, P::DeskScale, "policy context window", 8, 4096),
      num("model.seed", I, 7, P::DeskScale, "policy initialization seed", 0),

      num("sft.steps", I, 3000, P::DeskScale, "SFT optimizer steps", 0, 1e7),
      num("sft.batch_size", I, 32, P::Recipe, "generation-model batch size", 1, 4096),
      num("sft.lr", R, 1e-3, P::Recipe, "generation-model learning rate", 0, 1, true),
      num("sft.clip_norm", R, 1.0, P::Assumption, "global gradient-norm clip (0 disables)", 0),
      num("sft.eval_every", I, 100, P::DeskScale, "validation perplexity cadence", 1, 1e7),
      num("sft.seed", I, 11, P::DeskScale, "SFT batch order seed", 0),

      num("judge.width", I, 32, P::DeskScale, "judge model width", 2, 4096),
      num("judge.layers", I, 2, P::DeskScale, "judge model depth", 1, 64),
      num("judge.heads", I, 2, P::DeskScale, "judge attention heads", 1, 64),
      num("judge.mlp_ratio", I, 4, P::DeskScale, "judge MLP expansion", 1, 16),
      num("judge.max_len", I, 128, P::DeskScale, "judge context window", 8, 4096),
      num("judge.steps", I, 3000, P::DeskScale, "judge optimizer steps", 0, 1e7),
      num("judge.batch_size", I, 32, P::Tuned, "judge rows per step (published value 128)", 1, 4096),
      num("judge.lr", R, 2e-3, P::Tuned, "judge learning rate (published value 1e-3)", 0, 1, true),
      num("judge.clip_norm", R, 1.0, P::Assumption, "global gradient-norm clip (0 disables)", 0),
      num("judge.warmup_steps", I, 0, P::Assumption, "linear learning-rate warmup", 0, 1e7),
      num("judge.eval_every", I, 100, P::DeskScale, "validation accuracy cadence", 1, 1e7),
      num("judge.eval_limit", I, 0, P::DeskScale, "validation records per evaluation (0 = all)", 0, 1e7),
      num("judge.min_accuracy_over_chance", R, 0.05, P::DeskScale, "training fails below 0.5 + this", -1, 0.5),
      text("judge.init", "sft", P::DeskScale, "sft (start from the SFT checkpoint) | random"),
      text("judge.pointwise_objective", "bradley_terry", P::Assumption, "classify | bradley_terry"),
      num("judge.seed", I, 17, P::DeskScale, "judge initialization and batch seed", 0),

      num("decode.temperature", R, 0.7, P::Recipe, "sampling temperature", 0, 100, true),
      num("decode.top_k", I, 40, P::Recipe, "top-k truncation", 1, 4096),
      num("decode.max_len", I, 32, P::DeskScale, "generated-token cap including EOS", 1, 4096),
      num("decode.m", I, 8, P::Recipe, "candidates sampled per context", 1, 1024),
      num("decode.n_contexts", I, 0, P::DeskScale, "training contexts to decode (0 = all)", 0, 1e7),
      num("decode.n_validation", I, 200, P::DeskScale, "validation contexts for filtering and selection", 1, 1e7),
      num("decode.seed", I, 99, P::DeskScale, "sampling seed", 0),

      num("calib.margin", R, 1.0, P::Recipe, "ranking margin", 0),
      num("calib.reg_weight", R, 0.5, P::Assumption, "cross-entropy regularization weight", 0),
      num("calib.steps", I, 1000, P::DeskScale, "calibration optimizer steps", 0, 1e7),
      num("calib.pairs_per_step", I, 32, P::Assumption, "pairs per calibration step", 1, 4096),
      num("calib.lr", R, 1e-4, P::Tuned, "calibration learning rate (published value 1e-5)", 0, 1, true),
      num("calib.clip_norm", R, 1.0, P::Assumption, "global gradient-norm clip (0 disables)", 0),
      num("calib.eval_every", I, 100, P::DeskScale, "snapshot and selection cadence", 1, 1e7),
      num("calib.seed", I, 23, P::DeskScale, "pair order seed", 0),

      num("continue_sft.steps", I, 1000, P::DeskScale, "continued cross-entropy steps", 0, 1e7),
      num("continue_sft.batch_size", I, 32, P::Recipe, "generation-model batch size", 1, 4096),
      num("continue_sft.lr", R, 1e-4, P::Assumption, "continued cross-entropy learning rate", 0, 1, true),
      num("continue_sft.eval_every", I, 100, P::DeskScale, "validation perplexity cadence", 1, 1e7),
      num("continue_sft.seed", I, 29, P::DeskScale, "batch order seed", 0),

      num("eval.beam_size", I, 4, P::Recipe, "beam size for evaluation and selection decodes", 1, 256),
      text("eval.bucket_edges", "0.8,1.2,1.6", P::Assumption, "length-ratio bucket edges"),

      num("run.workers", I, 1, P::DeskScale, "threads for decode and judging stages", 1, 256),
  };
}

const FieldSpec* find_field(const std::string& key) {
  for (const auto& f : config_schema())
    if (f.key == key) return &f;
  return nullptr;
}

std::string type_name(FieldType t) {
  switch (t) {
    case FieldType::Int:
      return "integer";
    case FieldType::Real:
      return "real";
    case FieldType::Bool:
      return "boolean";
    case FieldType::String:
      return "string";
  }
  return "?";
}

// Returns an error message, or empty when v is acceptable for the field.
std::string type_check(const FieldSpec& f, const Json& v) {
  bool ok = false;
  switch (f.type) {
    case FieldType::Int:
      ok = v.is_number_integer();
      break;
    case FieldType::Real:
      ok = v.is_number();
      break;
    case FieldType::Bool:
      ok = v.is_boolean();
      break;
    case FieldType::String:
      ok = v.is_string();
      break;
  }
  return ok ? "" : f.key + ": expected " + type_name(f.type) + ", got " + v.dump();
}

std::vector<double> parse_edges(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw ConfigError("eval.bucket_edges: '" + item + "' is not a number");
    }
    if (item.find_first_not_of(" \t", used) != std::string::npos)
      throw ConfigError("eval.bucket_edges: '" + item + "' is not a number");
    out.push_back(v);
  }
  return out;
}

}  // namespace

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::Recipe:
      return "published recipe";
    case Provenance::DeskScale:
      return "desk-scale choice";
    case Provenance::Assumption:
      return "unstated upstream, chosen here";
    case Provenance::Tuned:
      return "deviates from published value";
  }
  return "?";
}

const std::vector<FieldSpec>& config_schema() {
  static const std::vector<FieldSpec> schema = build_schema();
  return schema;
}

Config Config::defaults() {
  Config c;
  for (const auto& f : config_schema()) c.values_[f.key] = f.default_value;
  return c;
}

Config Config::from_json(const Json& j) {
  Config c = defaults();
  if (!j.is_object()) {
    c.load_errors_.push_back("config: expected a flat object of key/value pairs");
    return c;
  }
  for (const auto& [key, value] : j.items()) {
    const FieldSpec* f = find_field(key);
    if (!f) {
      c.load_errors_.push_back(key + ": unknown key");
      continue;
    }
    const std::string err = type_check(*f, value);
    if (!err.empty()) {
      c.load_errors_.push_back(err);
      continue;
    }
    c.values_[key] = f->type == FieldType::Real ? Json(value.get<double>()) : value;
  }
  return c;
}

Config Config::from_file(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::exception& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

void Config::set(const std::string& key, const std::string& value) {
  const FieldSpec* f = find_field(key);
  if (!f) throw ConfigError(key + ": unknown key");
  Json v;
  if (f->type == FieldType::String) {
    v = value;
  } else {
    try {
      v = Json::parse(value);
    } catch (const Json::exception&) {
      throw ConfigError(key + ": cannot parse '" + value + "' as " + type_name(f->type));
    }
    if (f->type == FieldType::Real && v.is_number()) v = v.get<double>();
  }
  const std::string err = type_check(*f, v);
  if (!err.empty()) throw ConfigError(err);
  values_[key] = v;
}

void Config::apply_overrides(const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + a + "' is not of the form key=value");
    set(a.substr(0, eq), a.substr(eq + 1));
  }
}

std::vector<std::string> Config::errors() const {
  std::vector<std::string> errs = load_errors_;
  for (const auto& f : config_schema()) {
    if (f.type != FieldType::Int && f.type != FieldType::Real) continue;
    const double v = values_.at(f.key).get<double>();
    const bool low = f.min_exclusive ? !(v > f.min) : !(v >= f.min);
    const bool high = f.max_exclusive ? !(v < f.max) : !(v <= f.max);
    if (low || high) {
      std::ostringstream os;
      os << f.key << ": " << v << " is out of range " << (f.min_exclusive ? "(" : "[")
         << (f.min <= -1e300 ? std::string("-inf") : Json(f.min).dump()) << ", "
         << (f.max >= 1e300 ? std::string("inf") : Json(f.max).dump()) << (f.max_exclusive ? ")" : "]");
      errs.push_back(os.str());
    }
  }
  if (!errs.empty()) return errs;
  // Cross-field checks reuse the module validators.
  auto check = [&](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      errs.push_back(e.what());
    }
  };
  check([&] { task().validate(); });
  check([&] { policy_model().validate(); });
  check([&] { judge_model().validate(); });
  check([&] { sampling().validate(policy_model().vocab_size); });
  check([&] { calibration().validate(); });
  check([&] { sft_training().validate(); });
  check([&] { continue_sft_training().validate(); });
  check([&] { bucket_edges(); });
  check([&] {
    if (get_int("model.max_len") < get_int("task.context_max") + 2 + get_int("decode.max_len"))
      throw ConfigError("model.max_len: too short for task.context_max + decode.max_len + 2");
  });
  check([&] {
    const std::string o = get_string("judge.pointwise_objective");
    if (o != "classify" && o != "bradley_terry")
      throw ConfigError("judge.pointwise_objective: expected classify | bradley_terry");
  });
  check([&] {
    const std::string init = get_string("judge.init");
    if (init != "sft" && init != "random") throw ConfigError("judge.init: expected sft | random");
    if (init == "sft" && judge_model().fingerprint() != policy_model().fingerprint())
      throw ConfigError("judge.init: sft requires the judge architecture to match the policy model");
  });
  return errs;
}

void Config::validate() const {
  const auto errs = errors();
  if (errs.empty()) return;
  std::string msg = "invalid configuration:";
  for (const auto& e : errs) msg += "\n  " + e;
  throw ConfigError(msg);
}

Json Config::to_json() const {
  Json j = Json::object();
  for (const auto& [k, v] : values_) j[k] = v;
  return j;
}

std::string Config::canonical() const { return dump_canonical(to_json(), 2) + "\n"; }

std::string Config::hash() const { return sha256_hex(canonical()); }

std::string Config::explain() const {
  std::size_t width = 0;
  for (const auto& f : config_schema())
    width = std::max(width, std::min<std::size_t>(48, f.key.size() + 3 + values_.at(f.key).dump().size()));
  std::ostringstream os;
  for (const auto& f : config_schema()) {
    const Json& v = values_.at(f.key);
    std::string line = f.key + " = " + v.dump();
    if (line.size() < width) line.resize(width, ' ');
    os << line << "  [" << (v == f.default_value ? to_string(f.provenance) : "override") << "] " << f.note << "\n";
  }
  return os.str();
}

std::int64_t Config::get_int(const std::string& key) const {
  const FieldSpec* f = find_field(key);
  if (!f || f->type != FieldType::Int) throw ConfigError(key + ": not an integer key");
  return values_.at(key).get<std::int64_t>();
}

double Config::get_real(const std::string& key) const {
  const FieldSpec* f = find_field(key);
  if (!f || f->type != FieldType::Real) throw ConfigError(key + ": not a real key");
  return values_.at(key).get<double>();
}

bool Config::get_bool(const std::string& key) const {
  const FieldSpec* f = find_field(key);
  if (!f || f->type != FieldType::Bool) throw ConfigError(key + ": not a boolean key");
  return values_.at(key).get<bool>();
}

std::string Config::get_string(const std::string& key) const {
  const FieldSpec* f = find_field(key);
  if (!f || f->type != FieldType::String) throw ConfigError(key + ": not a string key");
  return values_.at(key).get<std::string>();
}

TaskConfig Config::task() const {
  TaskConfig t;
  t.vocab_size = static_cast<int>(get_int("task.vocab_size"));
  t.context_min = static_cast<int>(get_int("task.context_min"));
  t.context_max = static_cast<int>(get_int("task.context_max"));
  t.salient_classes = static_cast<int>(get_int("task.salient_classes"));
  t.salient_density = get_real("task.salient_density");
  t.min_salient = static_cast<int>(get_int("task.min_salient"));
  t.p_drop = get_real("task.p_drop");
  t.eta = get_real("task.eta");
  t.n_train = static_cast<std::size_t>(get_int("task.n_train"));
  t.n_validation = static_cast<std::size_t>(get_int("task.n_validation"));
  t.n_test = static_cast<std::size_t>(get_int("task.n_test"));
  t.feedback_pairs_per_example = static_cast<std::size_t>(get_int("task.feedback_pairs_per_example"));
  t.feedback_policies.clear();
  std::stringstream ss(get_string("task.feedback_policies"));
  for (std::string item; std::getline(ss, item, ',');) t.feedback_policies.push_back(item);
  t.weights.coverage = get_real("task.w_coverage");
  t.weights.length = get_real("task.w_length");
  t.weights.hallucination = get_real("task.w_hallucination");
  t.seed = static_cast<std::uint64_t>(get_int("task.seed"));
  return t;
}

namespace {
ModelConfig model_from(const Config& c, const std::string& prefix) {
  ModelConfig m;
  m.vocab_size = static_cast<int>(c.get_int("task.vocab_size"));
  m.width = static_cast<int>(c.get_int(prefix + ".width"));
  m.layers = static_cast<int>(c.get_int(prefix + ".layers"));
  m.heads = static_cast<int>(c.get_int(prefix + ".heads"));
  m.mlp_ratio = static_cast<int>(c.get_int(prefix + ".mlp_ratio"));
  m.max_len = static_cast<int>(c.get_int(prefix + ".max_len"));
  return m;
}
}  // namespace

ModelConfig Config::policy_model() const { return model_from(*this, "model"); }
ModelConfig Config::judge_model() const { return model_from(*this, "judge"); }
std::uint64_t Config::policy_init_seed() const { return static_cast<std::uint64_t>(get_int("model.seed")); }

CeTrainConfig Config::sft_training() const {
  CeTrainConfig c;
  c.steps = static_cast<int>(get_int("sft.steps"));
  c.batch_size = static_cast<int>(get_int("sft.batch_size"));
  c.lr = get_real("sft.lr");
  c.clip_norm = get_real("sft.clip_norm");
  c.eval_every = static_cast<int>(get_int("sft.eval_every"));
  c.seed = static_cast<std::uint64_t>(get_int("sft.seed"));
  return c;
}

CeTrainConfig Config::continue_sft_training() const {
  CeTrainConfig c;
  c.steps = static_cast<int>(get_int("continue_sft.steps"));
  c.batch_size = static_cast<int>(get_int("continue_sft.batch_size"));
  c.lr = get_real("continue_sft.lr");
  c.clip_norm = get_real("sft.clip_norm");
  c.eval_every = static_cast<int>(get_int("continue_sft.eval_every"));
  c.seed = static_cast<std::uint64_t>(get_int("continue_sft.seed"));
  return c;
}

JudgeTrainConfig Config::judge_training() const {
  JudgeTrainConfig j;
  j.model = judge_model();
  j.steps = static_cast<int>(get_int("judge.steps"));
  j.batch_size = static_cast<int>(get_int("judge.batch_size"));
  j.lr = get_real("judge.lr");
  j.clip_norm = get_real("judge.clip_norm");
  j.warmup_steps = static_cast<int>(get_int("judge.warmup_steps"));
  j.eval_every = static_cast<int>(get_int("judge.eval_every"));
  j.eval_limit = static_cast<std::size_t>(get_int("judge.eval_limit"));
  j.min_accuracy_over_chance = get_real("judge.min_accuracy_over_chance");
  j.pointwise_objective = get_string("judge.pointwise_objective");
  j.seed = static_cast<std::uint64_t>(get_int("judge.seed"));
  return j;
}

DecodeConfig Config::sampling() const {
  DecodeConfig d;
  d.temperature = get_real("decode.temperature");
  d.top_k = static_cast<int>(get_int("decode.top_k"));
  d.max_len = static_cast<int>(get_int("decode.max_len"));
  d.beam_size = static_cast<int>(get_int("eval.beam_size"));
  d.seed = static_cast<std::uint64_t>(get_int("decode.seed"));
  return d;
}

CalibrateConfig Config::calibration() const {
  CalibrateConfig c;
  c.loss.margin = get_real("calib.margin");
  c.loss.reg_weight = get_real("calib.reg_weight");
  c.steps = static_cast<int>(get_int("calib.steps"));
  c.pairs_per_step = static_cast<int>(get_int("calib.pairs_per_step"));
  c.lr = get_real("calib.lr");
  c.clip_norm = get_real("calib.clip_norm");
  c.eval_every = static_cast<int>(get_int("calib.eval_every"));
  c.seed = static_cast<std::uint64_t>(get_int("calib.seed"));
  return c;
}

int Config::m() const { return static_cast<int>(get_int("decode.m")); }
int Config::eval_beam_size() const { return static_cast<int>(get_int("eval.beam_size")); }
int Config::decode_max_len() const { return static_cast<int>(get_int("decode.max_len")); }
int Config::workers() const { return static_cast<int>(get_int("run.workers")); }

std::vector<double> Config::bucket_edges() const {
  const std::vector<double> e = parse_edges(get_string("eval.bucket_edges"));
  if (e.empty()) throw ConfigError("eval.bucket_edges: at least one edge is required");
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (!(e[i] > 0.0)) throw ConfigError("eval.bucket_edges: edges must be positive");
    if (i > 0 && !(e[i] > e[i - 1])) throw ConfigError("eval.bucket_edges: edges must be increasing");
  }
  return e;
}

}  // namespace slic
