#include "doctest.h"

#include <fstream>

#include "slic/config.hpp"
#include "test_util.hpp"

using namespace slic;

namespace {

bool any_contains(const std::vector<std::string>& xs, const std::string& needle) {
  for (const auto& x : xs)
    if (x.find(needle) != std::string::npos) return true;
  return false;
}

std::string line_for(const std::string& explain, const std::string& key) {
  std::istringstream in(explain);
  std::string line;
  while (std::getline(in, line))
    if (line.rfind(key + " ", 0) == 0) return line;
  return "";
}

}  // namespace

TEST_CASE("empty config yields the published defaults") {
  const Config c = Config::from_json(Json::object());
  CHECK(c.errors().empty());
  CHECK(c.canonical() == Config::defaults().canonical());
  const DecodeConfig d = c.sampling();
  CHECK(d.temperature == 0.7);
  CHECK(d.top_k == 40);
  CHECK(c.m() == 8);
  CHECK(c.eval_beam_size() == 4);
  const CalibrateConfig cal = c.calibration();
  CHECK(cal.loss.margin == 1.0);
  CHECK(cal.lr == 1e-4);
  CHECK(c.sft_training().lr == 1e-3);
  CHECK(c.sft_training().batch_size == 32);
  CHECK(c.judge_training().lr == 2e-3);
  CHECK(c.bucket_edges() == std::vector<double>{0.8, 1.2, 1.6});
  CHECK(c.workers() == 1);
}

TEST_CASE("noise rate at or above one half is a range error naming the key") {
  Config c = Config::defaults();
  c.set("task.eta", "0.7");
  const auto errs = c.errors();
  REQUIRE_FALSE(errs.empty());
  CHECK(any_contains(errs, "task.eta"));
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.set("task.eta", "0.49");
  CHECK(c.errors().empty());
}

TEST_CASE("explain lists the margin as a published recipe value") {
  const std::string text = Config::defaults().explain();
  const std::string line = line_for(text, "calib.margin");
  CHECK(line.find("1.0") != std::string::npos);
  CHECK(line.find("published recipe") != std::string::npos);
  CHECK(line_for(text, "calib.reg_weight").find("unstated upstream") != std::string::npos);
  CHECK(line_for(text, "judge.batch_size").find("deviates") != std::string::npos);
  for (const auto& f : config_schema()) CHECK(!line_for(text, f.key).empty());
}

TEST_CASE("explain marks overridden values") {
  Config c = Config::defaults();
  c.apply_overrides({"calib.margin=2.5"});
  const std::string line = line_for(c.explain(), "calib.margin");
  CHECK(line.find("2.5") != std::string::npos);
  CHECK(line.find("override") != std::string::npos);
}

TEST_CASE("unknown keys and type errors are reported with their paths") {
  const Config c = Config::from_json(Json{{"calib.marginn", 1.0}, {"decode.top_k", "forty"}});
  const auto errs = c.errors();
  CHECK(any_contains(errs, "calib.marginn"));
  CHECK(any_contains(errs, "decode.top_k"));
  Config d = Config::defaults();
  CHECK_THROWS_AS(d.apply_overrides({"nope.key=1"}), ConfigError);
  CHECK_THROWS_AS(d.apply_overrides({"decode.m"}), ConfigError);
}

TEST_CASE("range violations are collected together") {
  Config c = Config::defaults();
  c.apply_overrides({"decode.temperature=0", "calib.lr=-1", "decode.m=0"});
  const auto errs = c.errors();
  CHECK(any_contains(errs, "decode.temperature"));
  CHECK(any_contains(errs, "calib.lr"));
  CHECK(any_contains(errs, "decode.m"));
}

TEST_CASE("cross-field checks") {
  Config c = Config::defaults();
  c.set("model.max_len", "40");
  c.set("judge.max_len", "40");
  CHECK(any_contains(c.errors(), "model.max_len"));
  Config d = Config::defaults();
  d.set("judge.layers", "3");
  CHECK(any_contains(d.errors(), "judge.init"));
  d.set("judge.init", "random");
  CHECK(d.errors().empty());
  d.set("task.feedback_policies", "reference");
  CHECK(any_contains(d.errors(), "task.feedback_policies"));
  d.set("task.feedback_policies", "reference,scramble");
  CHECK(d.errors().empty());
  CHECK(d.task().feedback_policies == std::vector<std::string>{"reference", "scramble"});
  d.set("eval.bucket_edges", "1.2,0.8");
  CHECK(any_contains(d.errors(), "eval.bucket_edges"));
}

TEST_CASE("config files round-trip and hash stably") {
  const auto dir = test::temp_dir("config");
  Config c = Config::defaults();
  c.apply_overrides({"task.eta=0", "calib.steps=50"});
  {
    std::ofstream out(dir / "c.json");
    out << c.to_json().dump(2);
  }
  const Config r = Config::from_file(dir / "c.json");
  CHECK(r.errors().empty());
  CHECK(r.hash() == c.hash());
  CHECK(r.get_real("task.eta") == 0.0);
  CHECK(r.hash() != Config::defaults().hash());
  {
    std::ofstream out(dir / "partial.json");
    out << R"({"calib.steps": 50, "task.eta": 0.0})";
  }
  CHECK(Config::from_file(dir / "partial.json").hash() == c.hash());
}
