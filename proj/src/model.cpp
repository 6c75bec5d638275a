#include "slic/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

namespace slic {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;
using CVecMap = Eigen::Map<const RowVec>;
using MVecMap = Eigen::Map<RowVec>;

struct LayerOffsets {
  std::size_t ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2;
};

struct Offsets {
  std::size_t tok = 0, pos = 0;
  std::vector<LayerOffsets> layer;
  std::size_t lnf_g = 0, lnf_b = 0, head_w = 0, head_b = 0, total = 0;
};

Offsets compute_offsets(const ModelConfig& c) {
  const std::size_t d = c.width, f = static_cast<std::size_t>(c.width) * c.mlp_ratio, V = c.vocab_size,
                    T = c.max_len;
  Offsets o;
  std::size_t at = 0;
  auto take = [&at](std::size_t n) {
    const std::size_t here = at;
    at += n;
    return here;
  };
  o.tok = take(V * d);
  o.pos = take(T * d);
  for (int l = 0; l < c.layers; ++l) {
    LayerOffsets L{};
    L.ln1_g = take(d);
    L.ln1_b = take(d);
    L.wq = take(d * d);
    L.wk = take(d * d);
    L.wv = take(d * d);
    L.wo = take(d * d);
    L.ln2_g = take(d);
    L.ln2_b = take(d);
    L.w1 = take(d * f);
    L.b1 = take(f);
    L.w2 = take(f * d);
    L.b2 = take(d);
    o.layer.push_back(L);
  }
  o.lnf_g = take(d);
  o.lnf_b = take(d);
  o.head_w = take(d * V);
  o.head_b = take(V);
  o.total = at;
  return o;
}

CMap cmat(const Buffer& v, std::size_t off, Eigen::Index r, Eigen::Index c) {
  return CMap(v.data() + off, r, c);
}
MMap mmat(Buffer& v, std::size_t off, Eigen::Index r, Eigen::Index c) { return MMap(v.data() + off, r, c); }
CVecMap cvec(const Buffer& v, std::size_t off, Eigen::Index n) { return CVecMap(v.data() + off, n); }
MVecMap mvec(Buffer& v, std::size_t off, Eigen::Index n) { return MVecMap(v.data() + off, n); }

void layer_norm(const RowMat& x, const CVecMap& g, const CVecMap& b, RowMat& hat, Eigen::VectorXd& rstd, RowMat& out) {
  const Eigen::Index T = x.rows(), d = x.cols();
  hat.resize(T, d);
  rstd.resize(T);
  out.resize(T, d);
  for (Eigen::Index t = 0; t < T; ++t) {
    const double mean = x.row(t).mean();
    const double var = (x.row(t).array() - mean).square().mean();
    const double r = 1.0 / std::sqrt(var + kLnEps);
    rstd(t) = r;
    hat.row(t) = (x.row(t).array() - mean) * r;
    out.row(t) = hat.row(t).cwiseProduct(g) + b;
  }
}

// Returns dL/dx and accumulates the gain/bias gradients.
RowMat layer_norm_backward(const RowMat& dout, const RowMat& hat, const Eigen::VectorXd& rstd, const CVecMap& g,
                           MVecMap dg, MVecMap db) {
  dg += dout.cwiseProduct(hat).colwise().sum();
  db += dout.colwise().sum();
  RowMat dhat = dout.array().rowwise() * g.array();
  RowMat dx(dout.rows(), dout.cols());
  for (Eigen::Index t = 0; t < dout.rows(); ++t) {
    const double m1 = dhat.row(t).mean();
    const double m2 = dhat.row(t).cwiseProduct(hat.row(t)).mean();
    dx.row(t) = (dhat.row(t).array() - m1 - hat.row(t).array() * m2) * rstd(t);
  }
  return dx;
}

// tanh(kGeluC * (u + 0.044715 u^3)) written through exp so Eigen vectorizes it.
template <typename Derived>
RowMat gelu_tanh(const Eigen::MatrixBase<Derived>& u) {
  const auto z = kGeluC * (u.array() + 0.044715 * u.array().cube());
  return (1.0 - 2.0 / ((2.0 * z).exp() + 1.0)).matrix();
}
// Derivative of the tanh-approximated GELU given th = gelu_tanh(u).
double gelu_grad(double u, double th) {
  return 0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * 0.044715 * u * u);
}

void log_softmax_row(const Eigen::Ref<const RowVec>& logits, Eigen::Ref<RowVec> out) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  out = logits.array() - lse;
}

void check_input(const ModelConfig& c, const Tokens& input) {
  if (input.empty()) throw Error("empty model input");
  if (static_cast<int>(input.size()) > c.max_len) {
    throw Error("sequence of length " + std::to_string(input.size()) + " exceeds max length " +
                std::to_string(c.max_len));
  }
  for (TokenId t : input) {
    if (t < 0 || t >= c.vocab_size) throw Error("token id " + std::to_string(t) + " outside vocabulary");
  }
}

}  // namespace

struct LayerCache {
  RowMat hat1, a1;
  Eigen::VectorXd rstd1;
  RowMat q, k, v;
  std::vector<RowMat> probs;  // per head, T x T (lower triangular)
  RowMat attn;
  RowMat hat2, a2;
  Eigen::VectorXd rstd2;
  RowMat u, th, g;
};

ForwardPass::ForwardPass() = default;
ForwardPass::~ForwardPass() = default;
ForwardPass::ForwardPass(ForwardPass&&) noexcept = default;
ForwardPass& ForwardPass::operator=(ForwardPass&&) noexcept = default;

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid model config: " + what); };
  if (vocab_size <= Vocab::kFirstContent) fail("vocab_size must exceed the reserved token block");
  if (width <= 0) fail("width must be positive");
  if (layers <= 0) fail("layers must be positive");
  if (heads <= 0 || width % heads != 0) fail("heads must divide width");
  if (mlp_ratio <= 0) fail("mlp_ratio must be positive");
  if (max_len <= 0) fail("max_len must be positive");
  if (parameter_count() > param_budget) {
    fail("parameter count " + std::to_string(parameter_count()) + " exceeds budget " + std::to_string(param_budget));
  }
}

std::size_t ModelConfig::parameter_count() const {
  if (width <= 0 || layers < 0 || mlp_ratio <= 0 || max_len < 0 || vocab_size <= 0) return 0;
  return compute_offsets(*this).total;
}

std::string ModelConfig::fingerprint() const {
  std::ostringstream s;
  s << "dec-v" << vocab_size << "-d" << width << "-l" << layers << "-h" << heads << "-f" << mlp_ratio << "-t"
    << max_len;
  return s.str();
}

ModelConfig ModelConfig::from_fingerprint(const std::string& fp) {
  ModelConfig c;
  if (std::sscanf(fp.c_str(), "dec-v%d-d%d-l%d-h%d-f%d-t%d", &c.vocab_size, &c.width, &c.layers, &c.heads,
                  &c.mlp_ratio, &c.max_len) != 6 ||
      c.fingerprint() != fp) {
    throw CheckpointError("unrecognized architecture fingerprint '" + fp + "'");
  }
  c.param_budget = std::numeric_limits<std::size_t>::max();
  return c;
}

std::vector<TensorSpec> parameter_tensors(const ModelConfig& c) {
  const Offsets o = compute_offsets(c);
  const std::size_t d = c.width, f = static_cast<std::size_t>(c.width) * c.mlp_ratio, V = c.vocab_size,
                    T = c.max_len;
  std::vector<TensorSpec> t;
  t.push_back({"tok_emb", o.tok, V, d});
  t.push_back({"pos_emb", o.pos, T, d});
  for (int l = 0; l < c.layers; ++l) {
    const auto& L = o.layer[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    t.push_back({p + "ln1.gain", L.ln1_g, 1, d});
    t.push_back({p + "ln1.bias", L.ln1_b, 1, d});
    t.push_back({p + "attn.wq", L.wq, d, d});
    t.push_back({p + "attn.wk", L.wk, d, d});
    t.push_back({p + "attn.wv", L.wv, d, d});
    t.push_back({p + "attn.wo", L.wo, d, d});
    t.push_back({p + "ln2.gain", L.ln2_g, 1, d});
    t.push_back({p + "ln2.bias", L.ln2_b, 1, d});
    t.push_back({p + "mlp.w1", L.w1, d, f});
    t.push_back({p + "mlp.b1", L.b1, 1, f});
    t.push_back({p + "mlp.w2", L.w2, f, d});
    t.push_back({p + "mlp.b2", L.b2, 1, d});
  }
  t.push_back({"lnf.gain", o.lnf_g, 1, d});
  t.push_back({"lnf.bias", o.lnf_b, 1, d});
  t.push_back({"head.w", o.head_w, d, V});
  t.push_back({"head.b", o.head_b, 1, V});
  return t;
}

bool ModelParams::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

double Gradients::norm() const {
  double s = 0.0;
  for (double v : values) s += v * v;
  return std::sqrt(s);
}

bool Gradients::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

ModelCounters& model_counters() {
  static ModelCounters counters;
  return counters;
}

ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams p;
  p.config = config;
  p.seed = seed;
  p.values.assign(config.parameter_count(), 0.0);
  Rng rng(derive_seed(seed, 0x1417));
  for (const auto& t : parameter_tensors(config)) {
    const bool is_gain = t.name.ends_with(".gain");
    const bool is_bias = t.name.ends_with(".bias") || t.name.ends_with(".b1") || t.name.ends_with(".b2") ||
                         t.name == "head.b";
    if (is_gain) {
      std::fill_n(p.values.begin() + static_cast<std::ptrdiff_t>(t.offset), t.size(), 1.0);
    } else if (!is_bias) {
      const double fan_in = t.name.ends_with("mlp.w2") ? static_cast<double>(t.rows) : config.width;
      const double scale = 1.0 / std::sqrt(fan_in);
      for (std::size_t i = 0; i < t.size(); ++i) p.values[t.offset + i] = scale * rng.normal();
    }
  }
  return p;
}

void force_uniform_head(ModelParams& params) {
  const Offsets o = compute_offsets(params.config);
  std::fill(params.values.begin() + static_cast<std::ptrdiff_t>(o.head_w),
            params.values.begin() + static_cast<std::ptrdiff_t>(o.total), 0.0);
}

SequenceLayout layout_sequence(const Tokens& context, const Tokens& target) {
  if (target.empty()) throw Error("empty target");
  SequenceLayout s;
  s.input.reserve(context.size() + target.size() + 1);
  s.input.push_back(Vocab::kBos);
  s.input.insert(s.input.end(), context.begin(), context.end());
  s.input.push_back(Vocab::kSep);
  s.first_target_pos = s.input.size() - 1;
  s.input.insert(s.input.end(), target.begin(), target.end() - 1);
  s.targets = target;
  return s;
}

Tokens generation_prefix(const Tokens& context) {
  Tokens p;
  p.reserve(context.size() + 2);
  p.push_back(Vocab::kBos);
  p.insert(p.end(), context.begin(), context.end());
  p.push_back(Vocab::kSep);
  return p;
}

ForwardPass forward(const ModelParams& params, const Tokens& input) {
  const ModelConfig& c = params.config;
  check_input(c, input);
  model_counters().forward_passes.fetch_add(1, std::memory_order_relaxed);
  const Offsets o = compute_offsets(c);
  const auto& w = params.values;
  const Eigen::Index T = static_cast<Eigen::Index>(input.size()), d = c.width, f = c.width * c.mlp_ratio,
                     V = c.vocab_size, H = c.heads, dh = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  ForwardPass pass;
  pass.input = input;
  pass.layers_.resize(c.layers);

  const auto tok = cmat(w, o.tok, V, d);
  const auto pos = cmat(w, o.pos, c.max_len, d);
  RowMat x(T, d);
  for (Eigen::Index t = 0; t < T; ++t) x.row(t) = tok.row(input[t]) + pos.row(t);

  for (int l = 0; l < c.layers; ++l) {
    const LayerOffsets& L = o.layer[l];
    LayerCache& C = pass.layers_[l];
    layer_norm(x, cvec(w, L.ln1_g, d), cvec(w, L.ln1_b, d), C.hat1, C.rstd1, C.a1);
    C.q.noalias() = C.a1 * cmat(w, L.wq, d, d);
    C.k.noalias() = C.a1 * cmat(w, L.wk, d, d);
    C.v.noalias() = C.a1 * cmat(w, L.wv, d, d);
    C.attn.resize(T, d);
    C.probs.resize(H);
    for (Eigen::Index h = 0; h < H; ++h) {
      RowMat S = (C.q.middleCols(h * dh, dh) * C.k.middleCols(h * dh, dh).transpose()) * scale;
      RowMat& P = C.probs[h];
      P.setZero(T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        const double mx = S.row(i).head(i + 1).maxCoeff();
        P.row(i).head(i + 1) = (S.row(i).head(i + 1).array() - mx).exp();
        P.row(i).head(i + 1) /= P.row(i).head(i + 1).sum();
      }
      C.attn.middleCols(h * dh, dh).noalias() = P * C.v.middleCols(h * dh, dh);
    }
    x.noalias() += C.attn * cmat(w, L.wo, d, d);

    layer_norm(x, cvec(w, L.ln2_g, d), cvec(w, L.ln2_b, d), C.hat2, C.rstd2, C.a2);
    C.u.noalias() = C.a2 * cmat(w, L.w1, d, f);
    C.u.rowwise() += cvec(w, L.b1, f);
    C.th = gelu_tanh(C.u);
    C.g = 0.5 * C.u.array() * (1.0 + C.th.array());
    x.noalias() += C.g * cmat(w, L.w2, f, d);
    x.rowwise() += cvec(w, L.b2, d);
  }

  layer_norm(x, cvec(w, o.lnf_g, d), cvec(w, o.lnf_b, d), pass.final_hat_, pass.final_rstd_, pass.final_out_);
  pass.logits.noalias() = pass.final_out_ * cmat(w, o.head_w, d, V);
  pass.logits.rowwise() += cvec(w, o.head_b, V);
  return pass;
}

void backward(const ModelParams& params, const ForwardPass& pass, const RowMat& dlogits, Gradients& grads) {
  const ModelConfig& c = params.config;
  const Offsets o = compute_offsets(c);
  const auto& w = params.values;
  auto& gw = grads.values;
  if (gw.size() != w.size()) throw Error("gradient buffer does not match parameters");
  const Eigen::Index T = pass.logits.rows(), d = c.width, f = c.width * c.mlp_ratio, V = c.vocab_size, H = c.heads,
                     dh = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  mmat(gw, o.head_w, d, V).noalias() += pass.final_out_.transpose() * dlogits;
  mvec(gw, o.head_b, V) += dlogits.colwise().sum();
  RowMat dfinal = dlogits * cmat(w, o.head_w, d, V).transpose();
  RowMat dx = layer_norm_backward(dfinal, pass.final_hat_, pass.final_rstd_, cvec(w, o.lnf_g, d),
                                  mvec(gw, o.lnf_g, d), mvec(gw, o.lnf_b, d));

  for (int l = c.layers - 1; l >= 0; --l) {
    const LayerOffsets& L = o.layer[l];
    const LayerCache& C = pass.layers_[l];

    mmat(gw, L.w2, f, d).noalias() += C.g.transpose() * dx;
    mvec(gw, L.b2, d) += dx.colwise().sum();
    RowMat du = dx * cmat(w, L.w2, f, d).transpose();
    du.array() *= C.u.binaryExpr(C.th, [](double u, double th) { return gelu_grad(u, th); }).array();
    mmat(gw, L.w1, d, f).noalias() += C.a2.transpose() * du;
    mvec(gw, L.b1, f) += du.colwise().sum();
    RowMat da2 = du * cmat(w, L.w1, d, f).transpose();
    dx += layer_norm_backward(da2, C.hat2, C.rstd2, cvec(w, L.ln2_g, d), mvec(gw, L.ln2_g, d), mvec(gw, L.ln2_b, d));

    mmat(gw, L.wo, d, d).noalias() += C.attn.transpose() * dx;
    RowMat dattn = dx * cmat(w, L.wo, d, d).transpose();
    RowMat dq(T, d), dk(T, d), dv(T, d);
    for (Eigen::Index h = 0; h < H; ++h) {
      const RowMat& P = C.probs[h];
      const auto dout = dattn.middleCols(h * dh, dh);
      RowMat dP = dout * C.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh).noalias() = P.transpose() * dout;
      RowMat dS = P.cwiseProduct(dP);
      const Eigen::VectorXd rs = dS.rowwise().sum();
      dS.array() -= P.array().colwise() * rs.array();
      dq.middleCols(h * dh, dh).noalias() = (dS * C.k.middleCols(h * dh, dh)) * scale;
      dk.middleCols(h * dh, dh).noalias() = (dS.transpose() * C.q.middleCols(h * dh, dh)) * scale;
    }
    mmat(gw, L.wq, d, d).noalias() += C.a1.transpose() * dq;
    mmat(gw, L.wk, d, d).noalias() += C.a1.transpose() * dk;
    mmat(gw, L.wv, d, d).noalias() += C.a1.transpose() * dv;
    RowMat da1 = dq * cmat(w, L.wq, d, d).transpose();
    da1.noalias() += dk * cmat(w, L.wk, d, d).transpose();
    da1.noalias() += dv * cmat(w, L.wv, d, d).transpose();
    dx += layer_norm_backward(da1, C.hat1, C.rstd1, cvec(w, L.ln1_g, d), mvec(gw, L.ln1_g, d), mvec(gw, L.ln1_b, d));
  }

  auto dtok = mmat(gw, o.tok, V, d);
  auto dpos = mmat(gw, o.pos, c.max_len, d);
  for (Eigen::Index t = 0; t < T; ++t) {
    dtok.row(pass.input[t]) += dx.row(t);
    dpos.row(t) += dx.row(t);
  }
}

TargetScore score_target(const ModelParams& params, const Tokens& context, const Tokens& target) {
  TargetScore s;
  s.layout = layout_sequence(context, target);
  s.pass = forward(params, s.layout.input);
  const Eigen::Index n = static_cast<Eigen::Index>(target.size());
  s.log_probs.resize(n, params.config.vocab_size);
  s.per_token.resize(target.size());
  s.total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    log_softmax_row(s.pass.logits.row(static_cast<Eigen::Index>(s.layout.first_target_pos) + i), s.log_probs.row(i));
    s.per_token[i] = s.log_probs(i, target[i]);
    s.total += s.per_token[i];
  }
  return s;
}

void accumulate_logit_grad(const ModelParams& params, const TargetScore& score, const RowMat& dlogits,
                           Gradients& grads) {
  RowMat full = RowMat::Zero(score.pass.logits.rows(), score.pass.logits.cols());
  full.middleRows(static_cast<Eigen::Index>(score.layout.first_target_pos), dlogits.rows()) = dlogits;
  backward(params, score.pass, full, grads);
}

void accumulate_target_grad(const ModelParams& params, const TargetScore& score, std::span<const double> coeff,
                            Gradients& grads) {
  const Eigen::Index n = score.log_probs.rows();
  if (static_cast<Eigen::Index>(coeff.size()) != n) throw Error("coefficient count does not match target length");
  if (std::all_of(coeff.begin(), coeff.end(), [](double v) { return v == 0.0; })) return;
  // d log p(y_i) / d logits_i = onehot(y_i) - softmax_i
  RowMat dl = -score.log_probs.array().exp();
  for (Eigen::Index i = 0; i < n; ++i) {
    dl(i, score.layout.targets[i]) += 1.0;
    dl.row(i) *= coeff[i];
  }
  accumulate_logit_grad(params, score, dl, grads);
}

SeqLogProb sequence_log_prob(const ModelParams& params, const Tokens& context, const Tokens& target) {
  if (target.empty() || target.back() != Vocab::kEos) throw Error("target must end with EOS");
  TargetScore s = score_target(params, context, target);
  return {std::move(s.per_token), s.total};
}

double perplexity(const ModelParams& params, std::span<const ContextTarget> dataset) {
  if (dataset.empty()) throw DataError("perplexity of an empty dataset");
  double nll = 0.0;
  std::size_t count = 0;
  for (const auto& ex : dataset) {
    const SeqLogProb lp = sequence_log_prob(params, ex.context, ex.target);
    nll -= lp.total;
    count += ex.target.size();
  }
  return std::exp(nll / static_cast<double>(count));
}

DecoderState encode_prefix(const ModelParams& params, const Tokens& prefix) {
  ForwardPass pass = forward(params, prefix);
  model_counters().prefix_encodes.fetch_add(1, std::memory_order_relaxed);
  DecoderState s;
  s.length_ = static_cast<int>(prefix.size());
  for (const LayerCache& C : pass.layers_) {
    s.keys_.emplace_back(C.k.data(), C.k.data() + C.k.size());
    s.values_.emplace_back(C.v.data(), C.v.data() + C.v.size());
  }
  s.logits_ = pass.logits.row(pass.logits.rows() - 1);
  return s;
}

void advance(const ModelParams& params, DecoderState& state, TokenId token) {
  const ModelConfig& c = params.config;
  if (state.length_ >= c.max_len) throw Error("decoder state exceeds max length");
  if (token < 0 || token >= c.vocab_size) throw Error("token id outside vocabulary");
  model_counters().decode_steps.fetch_add(1, std::memory_order_relaxed);
  const Offsets o = compute_offsets(c);
  const auto& w = params.values;
  const Eigen::Index d = c.width, f = c.width * c.mlp_ratio, V = c.vocab_size, H = c.heads, dh = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Eigen::Index pos = state.length_;

  RowMat x = cmat(w, o.tok, V, d).row(token) + cmat(w, o.pos, c.max_len, d).row(pos);
  RowMat hat, a;
  Eigen::VectorXd rstd;
  for (int l = 0; l < c.layers; ++l) {
    const LayerOffsets& L = o.layer[l];
    layer_norm(x, cvec(w, L.ln1_g, d), cvec(w, L.ln1_b, d), hat, rstd, a);
    const RowMat q = a * cmat(w, L.wq, d, d);
    const RowMat k = a * cmat(w, L.wk, d, d);
    const RowMat v = a * cmat(w, L.wv, d, d);
    auto& K = state.keys_[l];
    auto& Vs = state.values_[l];
    K.insert(K.end(), k.data(), k.data() + d);
    Vs.insert(Vs.end(), v.data(), v.data() + d);
    const CMap Km(K.data(), pos + 1, d), Vm(Vs.data(), pos + 1, d);
    RowMat attn(1, d);
    for (Eigen::Index h = 0; h < H; ++h) {
      Eigen::VectorXd sc = (Km.middleCols(h * dh, dh) * q.middleCols(h * dh, dh).transpose()) * scale;
      sc = (sc.array() - sc.maxCoeff()).exp();
      sc /= sc.sum();
      attn.middleCols(h * dh, dh) = sc.transpose() * Vm.middleCols(h * dh, dh);
    }
    x += attn * cmat(w, L.wo, d, d);
    layer_norm(x, cvec(w, L.ln2_g, d), cvec(w, L.ln2_b, d), hat, rstd, a);
    RowMat u = a * cmat(w, L.w1, d, f);
    u += cvec(w, L.b1, f);
    u = (0.5 * u.array() * (1.0 + gelu_tanh(u).array())).matrix();
    x += u * cmat(w, L.w2, f, d);
    x += cvec(w, L.b2, d);
  }
  layer_norm(x, cvec(w, o.lnf_g, d), cvec(w, o.lnf_b, d), hat, rstd, a);
  state.logits_ = a * cmat(w, o.head_w, d, V);
  state.logits_ += cvec(w, o.head_b, V);
  state.length_ += 1;
}

Gradients gradients(const ModelParams& params, const LossClosure& loss) {
  Gradients g = Gradients::zeros_like(params);
  const double value = loss(params, &g);
  if (!std::isfinite(value)) throw DivergenceError("non-finite loss");
  return g;
}

OptimizerState OptimizerState::for_params(const ModelParams& p, double lr) {
  OptimizerState s;
  s.lr = lr;
  s.m.assign(p.values.size(), 0.0);
  s.v.assign(p.values.size(), 0.0);
  return s;
}

UpdateResult apply_update(const ModelParams& params, const Gradients& grads, const OptimizerState& state,
                          const AdamConfig& config) {
  const std::size_t n = params.values.size();
  if (grads.values.size() != n || state.m.size() != n || state.v.size() != n) {
    throw Error("optimizer update: shape mismatch");
  }
  if (!grads.all_finite()) throw DivergenceError("non-finite gradient values");
  model_counters().parameter_updates.fetch_add(1, std::memory_order_relaxed);
  UpdateResult r{params, state};
  r.state.step += 1;
  double gscale = 1.0;
  if (config.clip_norm > 0.0) {
    const double gn = grads.norm();
    if (gn > config.clip_norm) gscale = config.clip_norm / gn;
  }
  const double t = static_cast<double>(r.state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads.values[i] * gscale;
    double& m = r.state.m[i];
    double& v = r.state.v[i];
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g * g;
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    r.params.values[i] -= r.state.lr * mhat / (std::sqrt(vhat) + config.eps);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout (little endian):
//   "SLICKPT1" | u32 version | u32 len | fingerprint | u64 seed | u64 n | n f64
//   | u8 has_opt [ u64 step | f64 lr | n f64 m | n f64 v ] | 64 hex chars sha256
// ---------------------------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little endian");

constexpr char kMagic[8] = {'S', 'L', 'I', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void put(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_doubles(std::string& out, const Buffer& v) {
  out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
}

class Reader {
 public:
  Reader(std::string_view bytes, std::string name) : bytes_(bytes), name_(std::move(name)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + at_, sizeof(T));
    at_ += sizeof(T);
    return v;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(bytes_.substr(at_, n));
    at_ += n;
    return s;
  }
  Buffer get_doubles(std::size_t n) {
    need(n * sizeof(double));
    Buffer v(n);
    std::memcpy(v.data(), bytes_.data() + at_, n * sizeof(double));
    at_ += n * sizeof(double);
    return v;
  }
  std::size_t remaining() const { return bytes_.size() - at_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - at_ < n) throw CheckpointError("corrupt checkpoint " + name_ + ": truncated");
  }
  std::string_view bytes_;
  std::string name_;
  std::size_t at_ = 0;
};

}  // namespace

void save_checkpoint(const ModelParams& params, const OptimizerState* optimizer, const std::filesystem::path& path) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put(out, kCheckpointVersion);
  const std::string fp = params.fingerprint();
  put(out, static_cast<std::uint32_t>(fp.size()));
  out += fp;
  put(out, params.seed);
  put(out, static_cast<std::uint64_t>(params.values.size()));
  put_doubles(out, params.values);
  put(out, static_cast<std::uint8_t>(optimizer ? 1 : 0));
  if (optimizer) {
    put(out, optimizer->step);
    put(out, optimizer->lr);
    put_doubles(out, optimizer->m);
    put_doubles(out, optimizer->v);
  }
  out += sha256_hex(out);
  write_file(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  model_counters().checkpoint_loads.fetch_add(1, std::memory_order_relaxed);
  const std::string bytes = read_file(path);
  const std::string name = path.string();
  if (bytes.size() < sizeof(kMagic) + 64 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("corrupt checkpoint " + name + ": bad header");
  }
  const std::string_view body(bytes.data(), bytes.size() - 64);
  if (sha256_hex(body) != std::string_view(bytes).substr(bytes.size() - 64)) {
    throw CheckpointError("corrupt checkpoint " + name + ": checksum mismatch");
  }
  Reader r(body.substr(sizeof(kMagic)), name);
  if (r.get<std::uint32_t>() != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version in " + name);
  const auto fp_len = r.get<std::uint32_t>();
  const std::string fp = r.get_string(fp_len);
  Checkpoint ck;
  ck.params.config = ModelConfig::from_fingerprint(fp);
  ck.params.seed = r.get<std::uint64_t>();
  const auto n = r.get<std::uint64_t>();
  if (n != ck.params.config.parameter_count()) throw CheckpointError("corrupt checkpoint " + name + ": size mismatch");
  ck.params.values = r.get_doubles(n);
  if (r.get<std::uint8_t>() != 0) {
    OptimizerState s;
    s.step = r.get<std::uint64_t>();
    s.lr = r.get<double>();
    s.m = r.get_doubles(n);
    s.v = r.get_doubles(n);
    ck.optimizer = std::move(s);
  }
  if (r.remaining() != 0) throw CheckpointError("corrupt checkpoint " + name + ": trailing bytes");
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.params.fingerprint() != expected.fingerprint()) {
    throw CheckpointError("checkpoint " + path.string() + " has architecture " + ck.params.fingerprint() +
                          ", expected " + expected.fingerprint());
  }
  ck.params.config.param_budget = expected.param_budget;
  return ck;
}

}  // namespace slic
