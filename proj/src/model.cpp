#include "mil/model.hpp"

#include <cmath>
#include <random>

#include "mil/errors.hpp"

namespace mil {

void check_finite(const Mat& m, const std::string& role) {
  if (!m.allFinite()) {
    throw NumericError("non-finite values in " + role);
  }
}

namespace {

using Rng = std::mt19937_64;

Mat randn(Rng& rng, Eigen::Index rows, Eigen::Index cols, double std_dev) {
  std::normal_distribution<double> dist(0.0, std_dev);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  }
  return m;
}

constexpr double kInitStd = 0.02;

std::vector<double> sigma_scales(int k) {
  if (k == 3) return {0.1, 0.5, 1.0};
  if (k == 1) return {std::sqrt(0.1)};  // geometric midpoint of [0.1, 1]
  std::vector<double> s(k);
  for (int i = 0; i < k; ++i) {
    s[i] = 0.1 * std::pow(10.0, static_cast<double>(i) / (k - 1));
  }
  return s;
}

void init_phase_local(ModelState& m, Rng& rng) {
  const auto& c = m.config;
  const int d = c.width;
  const int r = c.adapter_rank;
  const int k = c.num_components;
  const int h = std::max(1, c.mod_hidden());

  m.adapter_a = randn(rng, r, d, kInitStd);
  m.adapter_b = Mat::Zero(d, r);
  m.adapter_gate = Mat::Ones(1, 1);

  m.trans_w = Mat::Identity(d, d) + randn(rng, d, d, kInitStd);
  m.trans_b = Mat::Zero(1, d);

  m.mod_w1 = randn(rng, h, d, kInitStd);
  m.mod_b1 = Mat::Zero(1, h);
  m.mod_w2 = randn(rng, k, h, kInitStd);
  m.mod_b2 = Mat::Zero(1, k);

  m.log_sigma = Mat(k, d);
  auto scales = sigma_scales(k);
  for (int i = 0; i < k; ++i) {
    m.log_sigma.row(i).setConstant(std::log(scales[i]));
  }

  m.scorer_w = randn(rng, 1, d, kInitStd);
  m.scorer_b = Mat::Zero(1, 1);
}

Var lin(Tape& t, Var x, Var w, Var b) {
  return t.add_rowvec(t.matmul_nt(x, w), b);
}

}  // namespace

ModelState init_model(const ModelConfig& config) {
  validate(config);
  ModelState m;
  m.config = config;
  Rng rng(config.seed);

  const int d = config.width;
  m.agg_w = Mat::Identity(d, d) + randn(rng, d, d, kInitStd);
  m.agg_b = Mat::Zero(1, d);
  m.pos_embed = randn(rng, config.max_len, d, kInitStd);

  m.layers.resize(config.depth);
  for (auto& l : m.layers) {
    l.ln1_g = Mat::Ones(1, d);
    l.ln1_b = Mat::Zero(1, d);
    l.wq = randn(rng, d, d, kInitStd);
    l.bq = Mat::Zero(1, d);
    l.wk = randn(rng, d, d, kInitStd);
    l.bk = Mat::Zero(1, d);
    l.wv = randn(rng, d, d, kInitStd);
    l.bv = Mat::Zero(1, d);
    l.wo = randn(rng, d, d, kInitStd);
    l.bo = Mat::Zero(1, d);
    l.ln2_g = Mat::Ones(1, d);
    l.ln2_b = Mat::Zero(1, d);
    l.w1 = randn(rng, config.mlp_hidden(), d, kInitStd);
    l.b1 = Mat::Zero(1, config.mlp_hidden());
    l.w2 = randn(rng, d, config.mlp_hidden(), kInitStd);
    l.b2 = Mat::Zero(1, d);
  }
  m.final_ln_g = Mat::Ones(1, d);
  m.final_ln_b = Mat::Zero(1, d);

  m.cls_w = randn(rng, config.num_classes, d, kInitStd);
  m.cls_b = Mat::Zero(1, config.num_classes);

  init_phase_local(m, rng);
  return m;
}

void reinit_phase_local(ModelState& model, std::uint64_t seed) {
  Rng rng(seed);
  init_phase_local(model, rng);
}

void ensure_input_proj(ModelState& model, int modality, int raw_dim) {
  if (raw_dim == model.config.width) return;
  if (model.input_proj.count(modality)) {
    if (model.input_proj[modality].cols() != raw_dim) {
      throw ShapeError("ingestion projection raw dim changed for modality " +
                       std::to_string(modality));
    }
    return;
  }
  Rng rng(model.config.seed ^ (0x9e3779b97f4a7c15ULL * (modality + 1)));
  model.input_proj[modality] =
      randn(rng, model.config.width, raw_dim, 1.0 / std::sqrt(raw_dim));
}

void for_each_param(ModelState& m,
                    const std::function<void(const std::string&, Mat&)>& fn) {
  fn("agg_w", m.agg_w);
  fn("agg_b", m.agg_b);
  fn("pos_embed", m.pos_embed);
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    auto& l = m.layers[i];
    std::string p = "layer." + std::to_string(i) + ".";
    fn(p + "ln1_g", l.ln1_g);
    fn(p + "ln1_b", l.ln1_b);
    fn(p + "wq", l.wq);
    fn(p + "bq", l.bq);
    fn(p + "wk", l.wk);
    fn(p + "bk", l.bk);
    fn(p + "wv", l.wv);
    fn(p + "bv", l.bv);
    fn(p + "wo", l.wo);
    fn(p + "bo", l.bo);
    fn(p + "ln2_g", l.ln2_g);
    fn(p + "ln2_b", l.ln2_b);
    fn(p + "w1", l.w1);
    fn(p + "b1", l.b1);
    fn(p + "w2", l.w2);
    fn(p + "b2", l.b2);
  }
  fn("final_ln_g", m.final_ln_g);
  fn("final_ln_b", m.final_ln_b);
  fn("cls_w", m.cls_w);
  fn("cls_b", m.cls_b);
  for (auto& [id, w] : m.input_proj) {
    fn("input_proj." + std::to_string(id), w);
  }
  fn("adapter_a", m.adapter_a);
  fn("adapter_b", m.adapter_b);
  fn("adapter_gate", m.adapter_gate);
  fn("trans_w", m.trans_w);
  fn("trans_b", m.trans_b);
  fn("mod_w1", m.mod_w1);
  fn("mod_b1", m.mod_b1);
  fn("mod_w2", m.mod_w2);
  fn("mod_b2", m.mod_b2);
  fn("log_sigma", m.log_sigma);
  fn("scorer_w", m.scorer_w);
  fn("scorer_b", m.scorer_b);
}

void for_each_param(
    const ModelState& m,
    const std::function<void(const std::string&, const Mat&)>& fn) {
  for_each_param(const_cast<ModelState&>(m),
                 [&](const std::string& n, Mat& v) { fn(n, v); });
}

std::uint64_t param_checksum(const ModelState& m) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for_each_param(m, [&](const std::string&, const Mat& v) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
    std::size_t n = sizeof(double) * static_cast<std::size_t>(v.size());
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  });
  return h;
}

ModelVars bind_model(Tape& tape, ModelState& model, ParamBindings* reg) {
  ModelVars v;
  auto bindp = [&](const std::string& name, Mat& storage) {
    Var var = tape.leaf(storage);
    if (reg) reg->push_back(NamedBinding{name, &storage, var});
    return var;
  };
  v.agg_w = bindp("agg_w", model.agg_w);
  v.agg_b = bindp("agg_b", model.agg_b);
  v.pos = bindp("pos_embed", model.pos_embed);
  v.layers.resize(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    auto& l = model.layers[i];
    auto& lv = v.layers[i];
    std::string p = "layer." + std::to_string(i) + ".";
    lv.ln1_g = bindp(p + "ln1_g", l.ln1_g);
    lv.ln1_b = bindp(p + "ln1_b", l.ln1_b);
    lv.wq = bindp(p + "wq", l.wq);
    lv.bq = bindp(p + "bq", l.bq);
    lv.wk = bindp(p + "wk", l.wk);
    lv.bk = bindp(p + "bk", l.bk);
    lv.wv = bindp(p + "wv", l.wv);
    lv.bv = bindp(p + "bv", l.bv);
    lv.wo = bindp(p + "wo", l.wo);
    lv.bo = bindp(p + "bo", l.bo);
    lv.ln2_g = bindp(p + "ln2_g", l.ln2_g);
    lv.ln2_b = bindp(p + "ln2_b", l.ln2_b);
    lv.w1 = bindp(p + "w1", l.w1);
    lv.b1 = bindp(p + "b1", l.b1);
    lv.w2 = bindp(p + "w2", l.w2);
    lv.b2 = bindp(p + "b2", l.b2);
  }
  v.final_ln_g = bindp("final_ln_g", model.final_ln_g);
  v.final_ln_b = bindp("final_ln_b", model.final_ln_b);
  v.cls_w = bindp("cls_w", model.cls_w);
  v.cls_b = bindp("cls_b", model.cls_b);
  for (auto& [id, w] : model.input_proj) {
    v.input_proj[id] = bindp("input_proj." + std::to_string(id), w);
  }
  v.adapter_a = bindp("adapter_a", model.adapter_a);
  v.adapter_b = bindp("adapter_b", model.adapter_b);
  v.adapter_gate = bindp("adapter_gate", model.adapter_gate);
  v.trans_w = bindp("trans_w", model.trans_w);
  v.trans_b = bindp("trans_b", model.trans_b);
  v.mod_w1 = bindp("mod_w1", model.mod_w1);
  v.mod_b1 = bindp("mod_b1", model.mod_b1);
  v.mod_w2 = bindp("mod_w2", model.mod_w2);
  v.mod_b2 = bindp("mod_b2", model.mod_b2);
  v.log_sigma = bindp("log_sigma", model.log_sigma);
  v.scorer_w = bindp("scorer_w", model.scorer_w);
  v.scorer_b = bindp("scorer_b", model.scorer_b);
  return v;
}

Var ingest(Tape& tape, const ModelVars& v, const ModelConfig& cfg,
           const FeatureSequence& f) {
  if (f.tokens.rows() < 1 || f.tokens.cols() < 1) {
    throw ShapeError("feature sequence must be at least 1 x 1");
  }
  Var x = tape.leaf(f.tokens);
  if (f.tokens.cols() == cfg.width) return x;
  auto it = v.input_proj.find(f.modality);
  if (it == v.input_proj.end() ||
      it->second->value.cols() != f.tokens.cols()) {
    throw ShapeError("feature width " + std::to_string(f.tokens.cols()) +
                     " does not match model width " +
                     std::to_string(cfg.width) +
                     " and no ingestion projection exists for modality " +
                     std::to_string(f.modality));
  }
  return tape.matmul_nt(x, it->second);
}

Var backbone_forward(Tape& tape, const ModelVars& v, const ModelConfig& cfg,
                     Var tokens) {
  const int L = static_cast<int>(tokens->value.rows());
  if (tokens->value.cols() != cfg.width) {
    throw ShapeError("backbone input width mismatch");
  }
  Var h = tokens;
  if (cfg.use_positional) {
    if (L > cfg.max_len) {
      throw ShapeError("sequence length exceeds configured max_len");
    }
    h = tape.add(h, tape.row_slice(v.pos, 0, L));
  }
  const int dh = cfg.width / cfg.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const auto& l : v.layers) {
    Var a_in = tape.layernorm_rows(h, l.ln1_g, l.ln1_b);
    Var q = lin(tape, a_in, l.wq, l.bq);
    Var k = lin(tape, a_in, l.wk, l.bk);
    Var val = lin(tape, a_in, l.wv, l.bv);
    std::vector<Var> heads;
    heads.reserve(cfg.heads);
    for (int i = 0; i < cfg.heads; ++i) {
      Var qh = tape.col_slice(q, i * dh, dh);
      Var kh = tape.col_slice(k, i * dh, dh);
      Var vh = tape.col_slice(val, i * dh, dh);
      Var s = tape.scale(tape.matmul_nt(qh, kh), scale);
      Var att = tape.softmax_rows(s);
      heads.push_back(tape.matmul(att, vh));
    }
    Var attn_out = lin(tape, tape.hstack(heads), l.wo, l.bo);
    h = tape.add(h, attn_out);
    Var f_in = tape.layernorm_rows(h, l.ln2_g, l.ln2_b);
    Var ff = lin(tape, tape.gelu(lin(tape, f_in, l.w1, l.b1)), l.w2, l.b2);
    h = tape.add(h, ff);
  }
  Var out = tape.layernorm_rows(h, v.final_ln_g, v.final_ln_b);
  return tape.mean_rows(out);
}

Var classifier_logits(Tape& tape, const ModelVars& v, Var pooled) {
  return lin(tape, pooled, v.cls_w, v.cls_b);
}

ForwardResult forward(const ModelState& model, const FeatureSequence& f) {
  check_finite(f.tokens, "input feature sequence");
  Tape tape;
  ModelVars v = bind_model(tape, const_cast<ModelState&>(model));
  Var x = ingest(tape, v, model.config, f);
  Var agg = lin(tape, x, v.agg_w, v.agg_b);
  Var pooled = backbone_forward(tape, v, model.config, agg);
  Var logits = classifier_logits(tape, v, pooled);
  ForwardResult r;
  r.pooled = pooled->value.row(0).transpose();
  r.logits = logits->value.row(0).transpose();
  return r;
}

int predict_class(const ModelState& model, const FeatureSequence& f) {
  Eigen::VectorXd logits = forward(model, f).logits;
  int best = 0;
  for (int c = 1; c < logits.size(); ++c) {
    if (logits(c) > logits(best)) best = c;  // ties keep the lowest index
  }
  return best;
}

}  // namespace mil
