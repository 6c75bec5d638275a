#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "slic/model.hpp"

namespace slic::test {

inline ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = 24;
  c.width = 8;
  c.layers = 1;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.max_len = 24;
  return c;
}

// Overrides that shrink every stage of a run to a few seconds.
inline std::vector<std::string> tiny_run_overrides() {
  return {"task.vocab_size=24", "task.context_min=8",  "task.context_max=12",  "task.salient_classes=6",
          "task.min_salient=1", "task.n_train=48",     "task.n_validation=16", "task.n_test=16",
          "model.width=8",      "model.layers=1",      "model.mlp_ratio=2",    "model.max_len=32",
          "judge.width=8",      "judge.layers=1",      "judge.mlp_ratio=2",    "judge.max_len=32",
          "sft.steps=30",       "sft.eval_every=10",   "judge.steps=20",       "judge.eval_every=10",
          "judge.min_accuracy_over_chance=-1",         "decode.max_len=8",     "decode.n_validation=8",
          "decode.m=4",         "decode.top_k=10",     "calib.steps=10",      "calib.eval_every=5",   "calib.lr=1e-3",
          "continue_sft.steps=10", "continue_sft.eval_every=5", "eval.beam_size=2"};
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("slic_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Largest relative error between the analytic gradient of `loss` and central
// differences (step h) over `n` sampled coordinates. Half of the coordinates
// are drawn from the nonzero-gradient set, half uniformly.
inline double max_fd_relative_error(const ModelParams& p, const LossClosure& loss, int n, std::uint64_t seed,
                                    double h = 1e-4) {
  Gradients g = Gradients::zeros_like(p);
  loss(p, &g);
  std::vector<std::size_t> nonzero;
  for (std::size_t i = 0; i < g.values.size(); ++i)
    if (std::abs(g.values[i]) > 1e-7) nonzero.push_back(i);
  Rng rng(seed);
  double worst = 0.0;
  for (int k = 0; k < n; ++k) {
    const std::size_t i = (k % 2 == 0 && !nonzero.empty()) ? nonzero[rng.below(nonzero.size())]
                                                           : rng.below(p.values.size());
    ModelParams plus = p, minus = p;
    plus.values[i] += h;
    minus.values[i] -= h;
    const double fd = (loss(plus, nullptr) - loss(minus, nullptr)) / (2.0 * h);
    const double denom = std::max({std::abs(fd), std::abs(g.values[i]), 1e-6});
    worst = std::max(worst, std::abs(fd - g.values[i]) / denom);
  }
  return worst;
}

}  // namespace slic::test
