#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mil/autograd.hpp"
#include "mil/config.hpp"

namespace mil {

// Universal sample representation: L x d token matrix. `modality` tags the
// source modality for ingestion projection; the model itself never branches
// on it when raw dims already match the configured width.
struct FeatureSequence {
  Mat tokens;
  int modality = -1;
};

void check_finite(const Mat& m, const std::string& role);

struct LayerParams {
  Mat ln1_g, ln1_b;
  Mat wq, bq, wk, bk, wv, bv, wo, bo;
  Mat ln2_g, ln2_b;
  Mat w1, b1, w2, b2;
};

struct ModelState {
  ModelConfig config;

  // persistent across phases
  Mat agg_w, agg_b;  // aggregation module E_m: token -> token * W^T + b
  Mat pos_embed;     // max_len x width learned positional table
  std::vector<LayerParams> layers;
  Mat final_ln_g, final_ln_b;
  Mat cls_w, cls_b;  // classifier: num_classes x d weight, 1 x num_classes bias
  std::map<int, Mat> input_proj;  // modality id -> width x raw_dim projection

  // phase-local (re-initialized each phase, never needed at inference)
  Mat adapter_a, adapter_b, adapter_gate;  // r x d, d x r, 1 x 1
  Mat trans_w, trans_b;                    // E_trans
  Mat mod_w1, mod_b1, mod_w2, mod_b2;      // E_mod two affine maps
  Mat log_sigma;                           // K x d
  Mat scorer_w, scorer_b;                  // proxy-weight scorer d -> 1
};

// Deterministic seeded initialization. Throws ConfigError for bad configs.
ModelState init_model(const ModelConfig& config);

// Re-draws the phase-local parameters (adapter, modulation heads, scorer)
// from a fresh stream; persistent parameters are untouched.
void reinit_phase_local(ModelState& model, std::uint64_t seed);

// Ensures an ingestion projection exists for (modality, raw_dim); creates a
// seeded one on first sight. No-op when raw_dim == width.
void ensure_input_proj(ModelState& model, int modality, int raw_dim);

// Visits every parameter matrix with a stable name. Order is fixed and is
// the serialization order.
void for_each_param(ModelState& m,
                    const std::function<void(const std::string&, Mat&)>& fn);
void for_each_param(const ModelState& m,
                    const std::function<void(const std::string&, const Mat&)>& fn);

std::uint64_t param_checksum(const ModelState& m);

// ---- graph construction ------------------------------------------------

struct LayerVars {
  Var ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2,
      b2;
};

struct ModelVars {
  Var agg_w, agg_b, pos, final_ln_g, final_ln_b, cls_w, cls_b;
  std::vector<LayerVars> layers;
  std::map<int, Var> input_proj;
  Var adapter_a, adapter_b, adapter_gate;
  Var trans_w, trans_b, mod_w1, mod_b1, mod_w2, mod_b2, log_sigma, scorer_w,
      scorer_b;
};

// One (name, storage, tape leaf) triple per bound parameter.
struct NamedBinding {
  std::string name;
  Mat* storage;
  Var var;
};
using ParamBindings = std::vector<NamedBinding>;

ModelVars bind_model(Tape& tape, ModelState& model,
                     ParamBindings* reg = nullptr);

// Projects raw tokens to model width when needed (uses the modality's
// ingestion projection); identity otherwise.
Var ingest(Tape& tape, const ModelVars& v, const ModelConfig& cfg,
           const FeatureSequence& f);

// Transformer encoder over tokens -> mean-pooled 1 x d classification feature.
Var backbone_forward(Tape& tape, const ModelVars& v, const ModelConfig& cfg,
                     Var tokens);

Var classifier_logits(Tape& tape, const ModelVars& v, Var pooled);

// ---- convenience inference path ---------------------------------------

struct ForwardResult {
  Eigen::VectorXd pooled;
  Eigen::VectorXd logits;
};

// Inference path: raw feature -> ingestion -> E_m -> backbone -> classifier.
// Never touches adapter, modulation, or scorer parameters.
ForwardResult forward(const ModelState& model, const FeatureSequence& f);

int predict_class(const ModelState& model, const FeatureSequence& f);

}  // namespace mil
