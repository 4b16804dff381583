#include "mil/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "json.hpp"
#include "mil/alignment.hpp"
#include "mil/bridging.hpp"
#include "mil/errors.hpp"
#include "mil/evaluation.hpp"
#include "mil/modulation.hpp"
#include "mil/optimizer.hpp"

namespace mil {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ splitmix64(b));
}

bool is_phase_local(const std::string& name) {
  return name.rfind("adapter_", 0) == 0 || name.rfind("trans_", 0) == 0 ||
         name.rfind("mod_", 0) == 0 || name == "log_sigma" ||
         name.rfind("scorer_", 0) == 0;
}

bool is_input_proj(const std::string& name) {
  return name.rfind("input_proj.", 0) == 0;
}

// Selects which bound parameters the optimizer may update.
ParamBindings select_trainable(const ParamBindings& all, Method method,
                               int phase, int current_modality) {
  const std::string cur_proj =
      "input_proj." + std::to_string(current_modality);
  ParamBindings out;
  for (const auto& b : all) {
    if (is_input_proj(b.name)) {
      // ingestion projections train only during their own modality's phase
      if (b.name == cur_proj) out.push_back(b);
      continue;
    }
    if (is_phase_local(b.name)) {
      if (method == Method::kHarmony && phase >= 2) out.push_back(b);
      continue;
    }
    if (method == Method::kFrozen && phase >= 2) {
      if (b.name == "cls_w" || b.name == "cls_b") out.push_back(b);
      continue;
    }
    out.push_back(b);
  }
  return out;
}

Mat ingest_plain(const ModelState& model, const FeatureSequence& f) {
  if (f.tokens.cols() == model.config.width) return f.tokens;
  auto it = model.input_proj.find(f.modality);
  if (it == model.input_proj.end()) {
    throw ShapeError("no ingestion projection for modality " +
                     std::to_string(f.modality));
  }
  return f.tokens * it->second.transpose();
}

void clamp_log_sigma(ModelState& model) {
  const double lo = std::log(1e-4), hi = std::log(10.0);
  model.log_sigma = model.log_sigma.cwiseMax(lo).cwiseMin(hi);
}

struct BatchOutcome {
  double cls = 0.0;
  double align = 0.0;
  double penalty = 0.0;
  double total = 0.0;
};

void check_batch_finite(const Var& logits, const Var& o_cur, const Var& o_hist,
                        double loss) {
  if (std::isfinite(loss)) return;
  if (o_cur && !o_cur->value.allFinite()) {
    throw NumericError("non-finite values in current-branch pooled features");
  }
  if (o_hist && !o_hist->value.allFinite()) {
    throw NumericError("non-finite values in historical-branch pooled features");
  }
  if (logits && !logits->value.allFinite()) {
    throw NumericError("non-finite values in classifier logits");
  }
  throw NumericError("non-finite training loss");
}

}  // namespace

Method parse_method(const std::string& id) {
  if (id == "seqf" || id == "seql") return Method::kSeqF;
  if (id == "frozen") return Method::kFrozen;
  if (id == "fullr") return Method::kFullR;
  if (id == "ewc") return Method::kEwc;
  if (id == "lwf") return Method::kLwf;
  if (id == "harmony") return Method::kHarmony;
  if (id == "jointt") return Method::kJointT;
  std::string valid;
  for (const auto& n : method_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw ConfigError("unknown method '" + id + "' (valid: " + valid + ")");
}

std::string method_name(Method m) {
  switch (m) {
    case Method::kSeqF: return "seqf";
    case Method::kFrozen: return "frozen";
    case Method::kFullR: return "fullr";
    case Method::kEwc: return "ewc";
    case Method::kLwf: return "lwf";
    case Method::kHarmony: return "harmony";
    case Method::kJointT: return "jointt";
  }
  return "?";
}

std::vector<std::string> method_names() {
  return {"seqf", "frozen", "fullr", "ewc", "lwf", "harmony", "jointt"};
}

PhaseSnapshot snapshot_model(const ModelState& model, int phase) {
  PhaseSnapshot s;
  s.state = model;  // deep copy (value semantics throughout)
  s.phase = phase;
  s.checksum = param_checksum(s.state);
  return s;
}

double total_loss(const Mat& logits, const std::vector<int>& labels,
                  double align_loss, double lambda) {
  if (lambda < 0) throw ConfigError("total_loss: lambda must be >= 0");
  Tape t;
  double ce = t.cross_entropy(t.leaf(logits), labels)->value(0, 0);
  return ce + lambda * align_loss;
}

std::string train_report_to_json(const TrainReport& r) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"cls", e.cls},
                      {"align", e.align},
                      {"penalty", e.penalty},
                      {"total", e.total},
                      {"val_acc", e.val_acc}});
  }
  nlohmann::json j{{"phase", r.phase},
                   {"method", r.method},
                   {"epochs", epochs},
                   {"wall_seconds", r.wall_seconds},
                   {"final_checksum", r.final_checksum},
                   {"min_alpha", r.min_alpha},
                   {"alpha_sum_err", r.alpha_sum_err},
                   {"min_beta", r.min_beta},
                   {"beta_sum_err", r.beta_sum_err}};
  return j.dump(2);
}

TrainReport train_phase(ModelState& model, const PhaseSnapshot* snapshot,
                        const ModalityData& data, int num_classes,
                        const ModelConfig& cfg, Method method,
                        const std::vector<EwcTerm>* ewc_terms) {
  const int phase = snapshot ? snapshot->phase + 1 : 1;
  if ((snapshot == nullptr) != (phase == 1)) {
    throw ConfigError("snapshot must be provided exactly for phases >= 2");
  }
  if (num_classes != cfg.num_classes) {
    throw ConfigError("dataset num_classes does not match model config");
  }
  if (data.train.size() == 0) throw ConfigError("empty training split");
  if (!data.train.features.empty() &&
      data.train.features.front().cols() != data.raw_dim) {
    throw ConfigError("dataset feature width inconsistent with manifest");
  }
  ensure_input_proj(model, data.id, data.raw_dim);
  if (method == Method::kEwc && phase >= 2 &&
      (ewc_terms == nullptr || ewc_terms->empty())) {
    throw ConfigError("ewc requires stored Fisher terms for phases >= 2");
  }

  const bool harmony_path = method == Method::kHarmony && phase >= 2;
  if (harmony_path) {
    reinit_phase_local(model, mix(cfg.seed, 0xF00D0000ULL + phase));
  }

  auto t_start = std::chrono::steady_clock::now();
  TrainReport report;
  report.phase = phase;
  report.method = method_name(method);

  AdamW opt(cfg.learning_rate, cfg.weight_decay);
  std::mt19937_64 noise_rng(mix(cfg.seed, 0xAB000000ULL + phase));

  std::map<std::string, Mat> snap_params;
  if (snapshot && method == Method::kFullR) {
    for_each_param(snapshot->state, [&](const std::string& nm, const Mat& m) {
      snap_params.emplace(nm, m);
    });
  }

  const int n = static_cast<int>(data.train.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // method-independent shuffle stream (fair comparison across methods)
    std::mt19937_64 shuffle_rng(
        mix(cfg.seed, 0x5AFE0000ULL + phase * 1024ULL + epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochStats stats;
    double weight_sum = 0.0;

    for (int start = 0; start < n; start += cfg.batch_size) {
      const int bs = std::min(cfg.batch_size, n - start);
      Tape tape;
      ParamBindings all;
      ModelVars v = bind_model(tape, model, &all);
      ModelVars sv;
      if (snapshot) {
        sv = bind_model(tape, const_cast<ModelState&>(snapshot->state));
      }
      BankVars bank = bank_vars(v);

      std::vector<Var> logits_rows, o_cur_rows, o_hist_rows;
      std::vector<int> labels;
      logits_rows.reserve(bs);
      labels.reserve(bs);

      for (int i = 0; i < bs; ++i) {
        const int idx = order[start + i];
        FeatureSequence f = feature_at(data, data.train, idx);
        const int label = data.train.labels[idx];
        labels.push_back(label);

        Var x = ingest(tape, v, cfg, f);
        Var fhat_cur = aggregate_g(tape, v.agg_w, v.agg_b, x);

        Var o_cur;
        if (harmony_path) {
          Var alpha = mixture_coefficients_g(tape, bank, x);
          Eigen::RowVectorXd proto =
              extract_prototype(snapshot->state.cls_w, label);
          Mat noise =
              draw_noise(cfg.num_components, cfg.width, noise_rng);
          Var pert = perturb_prototype_g(tape, bank, proto, alpha,
                                         cfg.lambda_g, noise);
          Var f_hist = modulate_g(tape, pert, x);
          Var fhat_hist =
              aggregate_g(tape, sv.agg_w, sv.agg_b, f_hist);  // frozen E_m
          Var f_tilde_hist = adapter_apply_g(tape, v.adapter_a, v.adapter_b,
                                             v.adapter_gate, fhat_hist);
          Var f_tilde_cur =
              cross_attention_fuse_g(tape, f_tilde_hist, fhat_cur);
          o_cur = backbone_forward(tape, v, cfg, f_tilde_cur);
          Var o_hist = backbone_forward(tape, sv, cfg, fhat_hist);
          o_hist_rows.push_back(o_hist);
        } else {
          o_cur = backbone_forward(tape, v, cfg, fhat_cur);
        }
        o_cur_rows.push_back(o_cur);
        logits_rows.push_back(classifier_logits(tape, v, o_cur));
      }

      Var logits = tape.stack_rows(logits_rows);
      Var o_cur_batch = tape.stack_rows(o_cur_rows);
      Var o_hist_batch;
      Var cls = tape.cross_entropy(logits, labels);
      Var loss = cls;

      Var align;
      if (harmony_path) {
        o_hist_batch = tape.stack_rows(o_hist_rows);
        align = hybrid_align_g(tape, o_cur_batch, o_hist_batch, v.scorer_w,
                               v.scorer_b, cfg.lambda_con, cfg.lambda_dis,
                               cfg.epsilon, cfg.contrastive_form);
        loss = tape.add(loss, tape.scale(align, cfg.lambda));
      }

      Var penalty;
      if (method == Method::kFullR && phase >= 2) {
        long count = 0;
        Var acc;
        for (const auto& b : all) {
          if (is_phase_local(b.name) || is_input_proj(b.name)) continue;
          auto it = snap_params.find(b.name);
          if (it == snap_params.end()) continue;
          count += b.var->value.size();
          Var term = tape.sq_diff_sum(b.var, it->second);
          acc = acc ? tape.add(acc, term) : term;
        }
        penalty =
            tape.scale(acc, cfg.lambda_fullr / static_cast<double>(count));
      } else if (method == Method::kEwc && phase >= 2) {
        Var acc;
        for (const auto& term : *ewc_terms) {
          for (const auto& b : all) {
            auto fit = term.fisher.find(b.name);
            auto tit = term.theta_star.find(b.name);
            if (fit == term.fisher.end() || tit == term.theta_star.end()) {
              continue;
            }
            Var part =
                tape.weighted_sq_diff_sum(b.var, tit->second, fit->second);
            acc = acc ? tape.add(acc, part) : part;
          }
        }
        if (acc) penalty = tape.scale(acc, 0.5 * cfg.lambda_ewc);
      } else if (method == Method::kLwf && phase >= 2) {
        Mat teacher(bs, cfg.num_classes);
        for (int i = 0; i < bs; ++i) {
          const int idx = order[start + i];
          teacher.row(i) =
              forward(snapshot->state, feature_at(data, data.train, idx))
                  .logits.transpose();
        }
        penalty = tape.scale(
            tape.kl_softened(logits, teacher, cfg.lwf_temperature),
            cfg.lwf_weight);
      }
      if (penalty) loss = tape.add(loss, penalty);

      double loss_v = loss->value(0, 0);
      check_batch_finite(logits, o_cur_batch, o_hist_batch, loss_v);

      tape.backward(loss);
      ParamBindings trainable = select_trainable(all, method, phase, data.id);
      opt.step(trainable);
      if (harmony_path) clamp_log_sigma(model);

      // simplex invariants, re-checked on post-step parameters
      if (harmony_path) {
        PerturbationBank pb = bank_from(model);
        for (int i = 0; i < bs; ++i) {
          const int idx = order[start + i];
          Mat x = ingest_plain(model, feature_at(data, data.train, idx));
          Eigen::RowVectorXd alpha = mixture_coefficients(pb, x);
          report.min_alpha = std::min(report.min_alpha, alpha.minCoeff());
          report.alpha_sum_err =
              std::max(report.alpha_sum_err, std::abs(alpha.sum() - 1.0));
        }
        ProxyScorer scorer{model.scorer_w, model.scorer_b};
        Eigen::RowVectorXd beta =
            proxy_weights(scorer, o_cur_batch->value);
        report.min_beta = std::min(report.min_beta, beta.minCoeff());
        report.beta_sum_err =
            std::max(report.beta_sum_err, std::abs(beta.sum() - 1.0));
      }

      const double w = static_cast<double>(bs);
      stats.cls += cls->value(0, 0) * w;
      stats.align += (align ? align->value(0, 0) : 0.0) * w;
      stats.penalty += (penalty ? penalty->value(0, 0) : 0.0) * w;
      stats.total += loss_v * w;
      weight_sum += w;
    }

    stats.cls /= weight_sum;
    stats.align /= weight_sum;
    stats.penalty /= weight_sum;
    stats.total /= weight_sum;
    stats.val_acc =
        data.val.size() ? eval_accuracy(model, data, data.val) : 0.0;
    report.epochs.push_back(stats);
  }

  if (harmony_path) {
    // fold the learned adapter into the aggregation module; structure stays
    // one d x d affine map
    AggregationModule mod{model.agg_w, model.agg_b};
    GatedAdapter ad{model.adapter_a, model.adapter_b,
                    model.adapter_gate(0, 0)};
    AggregationModule merged = merge_adapter(mod, ad, cfg.merge_mode);
    model.agg_w = merged.weight;
    model.agg_b = merged.bias;
  }

  report.final_checksum = param_checksum(model);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return report;
}

}  // namespace mil
