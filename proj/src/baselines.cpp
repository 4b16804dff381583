#include "mil/baselines.hpp"

#include <algorithm>

#include "mil/bridging.hpp"
#include "mil/errors.hpp"

namespace mil {

namespace {

bool is_persistent(const std::string& name) {
  return !(name.rfind("adapter_", 0) == 0 || name.rfind("trans_", 0) == 0 ||
           name.rfind("mod_", 0) == 0 || name == "log_sigma" ||
           name.rfind("scorer_", 0) == 0);
}

std::map<std::string, Mat> persistent_params(const ModelState& m) {
  std::map<std::string, Mat> out;
  for_each_param(m, [&](const std::string& n, const Mat& v) {
    if (is_persistent(n)) out.emplace(n, v);
  });
  return out;
}

}  // namespace

FisherDiagonal estimate_fisher(ModelState& model, const ModalityData& data,
                               int num_classes, const ModelConfig& cfg,
                               int max_samples) {
  if (num_classes != cfg.num_classes) {
    throw ConfigError("estimate_fisher: num_classes mismatch");
  }
  FisherDiagonal fisher;
  const int n =
      std::min<int>(max_samples, static_cast<int>(data.train.size()));
  if (n == 0) throw ConfigError("estimate_fisher: empty split");
  int counted = 0;
  for (int i = 0; i < n; ++i) {
    Tape tape;
    ParamBindings all;
    ModelVars v = bind_model(tape, model, &all);
    FeatureSequence f = feature_at(data, data.train, i);
    Var x = ingest(tape, v, cfg, f);
    Var agg = aggregate_g(tape, v.agg_w, v.agg_b, x);
    Var pooled = backbone_forward(tape, v, cfg, agg);
    Var logits = classifier_logits(tape, v, pooled);
    Var loss = tape.cross_entropy(logits, {data.train.labels[i]});
    tape.backward(loss);
    for (const auto& b : all) {
      if (!is_persistent(b.name)) continue;
      Mat sq = b.var->grad.cwiseProduct(b.var->grad);
      auto it = fisher.find(b.name);
      if (it == fisher.end()) {
        fisher.emplace(b.name, sq);
      } else {
        it->second += sq;
      }
    }
    ++counted;
  }
  for (auto& [name, m] : fisher) m /= static_cast<double>(counted);
  return fisher;
}

double fullr_penalty(const ModelState& model, const ModelState& snapshot) {
  auto cur = persistent_params(model);
  auto ref = persistent_params(snapshot);
  double sum = 0.0;
  long count = 0;
  for (const auto& [name, v] : cur) {
    auto it = ref.find(name);
    if (it == ref.end()) continue;
    if (it->second.rows() != v.rows() || it->second.cols() != v.cols()) {
      throw ShapeError("fullr_penalty: shape mismatch for " + name);
    }
    sum += (v - it->second).squaredNorm();
    count += v.size();
  }
  if (count == 0) throw ShapeError("fullr_penalty: no shared parameters");
  return sum / static_cast<double>(count);
}

double ewc_penalty(const ModelState& model, const ModelState& snapshot,
                   const FisherDiagonal& fisher, double lambda_ewc) {
  if (fisher.empty()) {
    throw ConfigError("ewc_penalty: missing Fisher estimates");
  }
  auto cur = persistent_params(model);
  auto ref = persistent_params(snapshot);
  double sum = 0.0;
  for (const auto& [name, fdiag] : fisher) {
    auto cit = cur.find(name);
    auto rit = ref.find(name);
    if (cit == cur.end() || rit == ref.end()) continue;
    Mat diff = cit->second - rit->second;
    sum += diff.cwiseProduct(diff).cwiseProduct(fdiag).sum();
  }
  return 0.5 * lambda_ewc * sum;
}

double lwf_loss(const Mat& current_logits, const Mat& snapshot_logits,
                double temperature) {
  if (temperature <= 0) throw ConfigError("lwf_loss: temperature must be > 0");
  Tape t;
  return t.kl_softened(t.leaf(current_logits), snapshot_logits, temperature)
      ->value(0, 0);
}

EwcTerm make_ewc_term(const ModelState& anchor, const FisherDiagonal& fisher) {
  EwcTerm term;
  term.fisher = fisher;
  term.theta_star = persistent_params(anchor);
  return term;
}

}  // namespace mil
