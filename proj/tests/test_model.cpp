#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "slic/model.hpp"
#include "test_util.hpp"

using namespace slic;

TEST_CASE("init_model is deterministic in (config, seed)") {
  const ModelConfig c = test::tiny_config();
  const ModelParams a = init_model(c, 7);
  const ModelParams b = init_model(c, 7);
  CHECK(a.values == b.values);
  const ModelParams other = init_model(c, 8);
  CHECK(a.values != other.values);
  CHECK(a.all_finite());
  CHECK(a.fingerprint() == c.fingerprint());
}

TEST_CASE("degenerate configs are rejected") {
  ModelConfig c = test::tiny_config();
  c.max_len = 0;
  CHECK_THROWS_AS(init_model(c, 1), ConfigError);
  c = test::tiny_config();
  c.param_budget = 10;
  CHECK_THROWS_AS(init_model(c, 1), ConfigError);
  c = test::tiny_config();
  c.heads = 3;
  CHECK_THROWS_AS(init_model(c, 1), ConfigError);
}

TEST_CASE("forced-uniform head gives -|y| ln V") {
  ModelParams p = init_model(test::tiny_config(), 3);
  force_uniform_head(p);
  const double V = p.config.vocab_size;
  const SeqLogProb lp = sequence_log_prob(p, {12, 13, 14}, {15, 16, Vocab::kEos});
  CHECK(lp.total == doctest::Approx(-3.0 * std::log(V)).epsilon(1e-12));
  CHECK(lp.per_token.size() == 3);
  std::vector<ContextTarget> ds{{{12, 13}, {14, Vocab::kEos}}, {{15}, {Vocab::kEos}}};
  CHECK(perplexity(p, ds) == doctest::Approx(V).epsilon(1e-9));
}

TEST_CASE("target probabilities over a complete prefix-free set sum to one") {
  ModelConfig c = test::tiny_config();
  c.vocab_size = 14;
  const ModelParams p = init_model(c, 11);
  const Tokens ctx{12, 13, 12};
  const int L = 3;
  // Brute force: every EOS-terminated sequence of length <= L plus every
  // EOS-free sequence of length exactly L.
  double mass = 0.0;
  std::vector<Tokens> frontier{{}};
  for (int len = 1; len <= L; ++len) {
    std::vector<Tokens> next;
    for (const Tokens& pre : frontier) {
      for (TokenId t = 0; t < c.vocab_size; ++t) {
        Tokens y = pre;
        y.push_back(t);
        if (t == Vocab::kEos) {
          mass += std::exp(sequence_log_prob(p, ctx, y).total);
        } else if (len == L) {
          mass += std::exp(score_target(p, ctx, y).total);
        } else {
          next.push_back(y);
        }
      }
    }
    frontier = std::move(next);
  }
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("per-position distributions are normalized") {
  const ModelParams p = init_model(test::tiny_config(), 5);
  const TargetScore s = score_target(p, {12, 20, 13}, {14, 15, Vocab::kEos});
  for (Eigen::Index i = 0; i < s.log_probs.rows(); ++i) {
    CHECK(s.log_probs.row(i).array().exp().sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("appending a token strictly lowers the sequence log-prob") {
  const ModelParams p = init_model(test::tiny_config(), 9);
  const Tokens ctx{12, 13, 14, 15};
  Tokens y{16};
  double prev = score_target(p, ctx, y).total;
  CHECK(prev <= 0.0);
  for (TokenId t : {17, 18, Vocab::kEos}) {
    y.push_back(t);
    const double cur = score_target(p, ctx, y).total;
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("sequence_log_prob rejects over-long and non-EOS targets") {
  const ModelParams p = init_model(test::tiny_config(), 1);
  CHECK_THROWS_AS(sequence_log_prob(p, {12}, {13, 14}), Error);
  Tokens longctx(p.config.max_len, 12);
  CHECK_THROWS_AS(sequence_log_prob(p, longctx, {Vocab::kEos}), Error);
}

TEST_CASE("analytic gradients of a target log-prob functional match central differences") {
  const ModelParams p = init_model(test::tiny_config(), 21);
  const Tokens ctx{12, 14, 16, 13};
  const Tokens y{14, 16, Vocab::kEos};
  const std::vector<double> coeff{-0.7, 0.3, -1.1};
  LossClosure loss = [&](const ModelParams& q, Gradients* g) {
    const TargetScore s = score_target(q, ctx, y);
    if (g) accumulate_target_grad(q, s, coeff, *g);
    double v = 0.0;
    for (std::size_t i = 0; i < coeff.size(); ++i) v += coeff[i] * s.per_token[i];
    return v;
  };
  const double err = test::max_fd_relative_error(p, loss, 60, 99);
  CHECK(err < 1e-3);
}

TEST_CASE("constant closure has all-zero gradient") {
  const ModelParams p = init_model(test::tiny_config(), 2);
  const Gradients g = gradients(p, [](const ModelParams&, Gradients*) { return 4.2; });
  CHECK(g.norm() == 0.0);
  CHECK_THROWS_AS(gradients(p, [](const ModelParams&, Gradients*) { return std::nan(""); }), DivergenceError);
}

TEST_CASE("incremental decoding matches the full forward pass") {
  const ModelParams p = init_model(test::tiny_config(), 4);
  const Tokens ctx{12, 13, 20, 21};
  const Tokens y{14, 15, 16, Vocab::kEos};
  const TargetScore s = score_target(p, ctx, y);
  DecoderState st = encode_prefix(p, generation_prefix(ctx));
  for (std::size_t i = 0; i < y.size(); ++i) {
    const RowVec& lg = st.next_logits();
    const double lse = lg.maxCoeff() + std::log((lg.array() - lg.maxCoeff()).exp().sum());
    CHECK(lg(y[i]) - lse == doctest::Approx(s.per_token[i]).epsilon(1e-10));
    if (i + 1 < y.size()) advance(p, st, y[i]);
  }
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
  const ModelParams p = init_model(test::tiny_config(), 1);
  const OptimizerState s = OptimizerState::for_params(p, 1e-3);
  const UpdateResult r = apply_update(p, Gradients::zeros_like(p), s, AdamConfig{});
  CHECK(r.params.values == p.values);
  CHECK(r.state.step == 1);
}

TEST_CASE("adam: one step on a 1-D quadratic reduces the loss") {
  // f(w) = (w - 3)^2, f'(w) = 2(w - 3)
  ModelParams p;
  p.values = {0.0};
  OptimizerState s;
  s.lr = 0.1;
  s.m = {0.0};
  s.v = {0.0};
  auto f = [](double w) { return (w - 3.0) * (w - 3.0); };
  const Gradients g{{2.0 * (p.values[0] - 3.0)}};
  const UpdateResult r = apply_update(p, g, s, AdamConfig{.lr = 0.1});
  CHECK(f(r.params.values[0]) < f(p.values[0]));
  // The first bias-corrected Adam step moves by lr * sign(g).
  CHECK(r.params.values[0] == doctest::Approx(0.1).epsilon(1e-6));
}

TEST_CASE("adam: rejects non-finite gradients and is deterministic") {
  const ModelParams p = init_model(test::tiny_config(), 1);
  const OptimizerState s = OptimizerState::for_params(p, 1e-3);
  Gradients bad = Gradients::zeros_like(p);
  bad.values[3] = INFINITY;
  CHECK_THROWS_AS(apply_update(p, bad, s, AdamConfig{}), DivergenceError);

  auto run = [&] {
    ModelParams cur = p;
    OptimizerState st = s;
    for (int i = 0; i < 3; ++i) {
      const Gradients g = gradients(cur, [](const ModelParams& q, Gradients* gr) {
        const TargetScore sc = score_target(q, {12, 13}, {14, Vocab::kEos});
        const std::vector<double> c{-1.0, -1.0};
        if (gr) accumulate_target_grad(q, sc, c, *gr);
        return -sc.total;
      });
      auto r = apply_update(cur, g, st, AdamConfig{});
      cur = std::move(r.params);
      st = std::move(r.state);
    }
    return cur.values;
  };
  CHECK(run() == run());
}

TEST_CASE("perplexity matches hand arithmetic on a fixed output distribution") {
  ModelParams p = init_model(test::tiny_config(), 6);
  force_uniform_head(p);
  // With a zero head matrix every position predicts softmax(head.b).
  std::size_t head_b = 0;
  for (const auto& t : parameter_tensors(p.config))
    if (t.name == "head.b") head_b = t.offset;
  p.values[head_b + 14] = 1.0;
  p.values[head_b + Vocab::kEos] = 2.0;
  const double V = p.config.vocab_size;
  const double z = (V - 2.0) + std::exp(1.0) + std::exp(2.0);
  const double lp14 = 1.0 - std::log(z), lpE = 2.0 - std::log(z), lp15 = -std::log(z);
  // Example 1: [14, EOS]; example 2: [15, 14, EOS].
  std::vector<ContextTarget> ds{{{12}, {14, Vocab::kEos}}, {{13, 13}, {15, 14, Vocab::kEos}}};
  const double expected = std::exp(-(lp14 + lpE + lp15 + lp14 + lpE) / 5.0);
  CHECK(perplexity(p, ds) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(perplexity(p, ds) >= 1.0);
  CHECK_THROWS_AS(perplexity(p, std::span<const ContextTarget>{}), DataError);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const auto dir = test::temp_dir("ckpt");
  ModelParams p = init_model(test::tiny_config(), 13);
  OptimizerState s = OptimizerState::for_params(p, 1e-3);
  s.step = 17;
  s.m[0] = 0.25;
  save_checkpoint(p, &s, dir / "a.ckpt");
  const Checkpoint ck = load_checkpoint(dir / "a.ckpt", p.config);
  CHECK(ck.params.values == p.values);
  CHECK(ck.params.seed == 13);
  REQUIRE(ck.optimizer.has_value());
  CHECK(ck.optimizer->step == 17);
  CHECK(ck.optimizer->m == s.m);
  save_checkpoint(ck.params, &*ck.optimizer, dir / "b.ckpt");
  CHECK(read_file(dir / "a.ckpt") == read_file(dir / "b.ckpt"));
  CHECK(sequence_log_prob(p, {12, 13}, {14, Vocab::kEos}).total ==
        sequence_log_prob(ck.params, {12, 13}, {14, Vocab::kEos}).total);

  ModelConfig other = p.config;
  other.width = 16;
  CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt", other), CheckpointError);

  std::string bytes = read_file(dir / "a.ckpt");
  bytes[40] ^= 0x1;
  write_file(dir / "c.ckpt", bytes);
  CHECK_THROWS_AS(load_checkpoint(dir / "c.ckpt"), CheckpointError);
  write_file(dir / "d.ckpt", bytes.substr(0, 30));
  CHECK_THROWS_AS(load_checkpoint(dir / "d.ckpt"), CheckpointError);
}
