#include "mil/runner.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include "mil/baselines.hpp"
#include "mil/errors.hpp"
#include "mil/serialize.hpp"

namespace fs = std::filesystem;

namespace mil {

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!text.empty() && text.back() != '\n') out << "\n";
}

// All phases' train data as one pseudo-modality (the JointT upper bound).
ModalityData concatenate_training(const Dataset& ds,
                                  const std::vector<int>& order) {
  ModalityData joint;
  joint.id = -1;
  joint.name = "joint";
  joint.raw_dim = ds.modalities[order[0]].raw_dim;
  joint.seq_len = ds.modalities[order[0]].seq_len;
  for (int idx : order) {
    const auto& m = ds.modalities[idx];
    if (m.raw_dim != joint.raw_dim) {
      throw ConfigError(
          "jointt requires equal feature dims across modalities");
    }
    int tag = 100000 * (idx + 1);
    for (std::size_t i = 0; i < m.train.size(); ++i) {
      joint.train.features.push_back(m.train.features[i]);
      joint.train.labels.push_back(m.train.labels[i]);
      joint.train.ids.push_back(tag + m.train.ids[i]);
    }
    for (std::size_t i = 0; i < m.val.size(); ++i) {
      joint.val.features.push_back(m.val.features[i]);
      joint.val.labels.push_back(m.val.labels[i]);
      joint.val.ids.push_back(tag + m.val.ids[i]);
    }
  }
  joint.test = ds.modalities[order[0]].test;
  return joint;
}

}  // namespace

std::vector<int> resolve_phase_order(const Dataset& ds,
                                     const std::vector<std::string>& order) {
  std::vector<int> out;
  if (order.empty()) {
    for (std::size_t i = 0; i < ds.modalities.size(); ++i) {
      out.push_back(static_cast<int>(i));
    }
    return out;
  }
  std::set<int> seen;
  for (const auto& name : order) {
    const ModalityData* m = ds.find_modality(name);
    if (!m) throw ConfigError("phase order names unknown modality: " + name);
    int idx = -1;
    for (std::size_t i = 0; i < ds.modalities.size(); ++i) {
      if (&ds.modalities[i] == m) idx = static_cast<int>(i);
    }
    if (!seen.insert(idx).second) {
      throw ConfigError("phase order repeats modality: " + name);
    }
    out.push_back(idx);
  }
  return out;
}

RunResult run_experiment(const Dataset& ds, const std::vector<int>& order,
                         const ModelConfig& cfg, Method method,
                         const std::string& out_dir) {
  if (order.empty()) throw ConfigError("empty phase order");
  if (ds.num_classes != cfg.num_classes) {
    throw ConfigError("dataset num_classes " + std::to_string(ds.num_classes) +
                      " does not match config num_classes " +
                      std::to_string(cfg.num_classes));
  }
  const int t_phases = static_cast<int>(order.size());

  fs::path root(out_dir);
  if (!out_dir.empty()) {
    fs::create_directories(root / "checkpoints");
    fs::create_directories(root / "reports");
    fs::create_directories(root / "tables");
  }

  RunResult result;
  EvalReport& report = result.report;
  report.method = method_name(method);
  report.dataset_name = ds.name;
  report.seed = cfg.seed;
  report.config_json = config_to_json(cfg);
  for (int idx : order) report.phase_order.push_back(ds.modalities[idx].name);
  report.s.resize(t_phases);

  ModelState model = init_model(cfg);

  auto eval_row = [&](int m) {
    for (int n = 1; n <= m; ++n) {
      const auto& mod = ds.modalities[order[n - 1]];
      report.s.entry(m, n) = eval_accuracy(model, mod, mod.test);
    }
  };

  if (method == Method::kJointT) {
    ModalityData joint = concatenate_training(ds, order);
    TrainReport tr =
        train_phase(model, nullptr, joint, ds.num_classes, cfg, method);
    result.phase_reports.push_back(tr);
    for (int m = 1; m <= t_phases; ++m) eval_row(m);
    if (!out_dir.empty()) {
      save_checkpoint(model, (root / "checkpoints" / "phase_1").string());
      write_text(root / "reports" / "train_phase_1.json",
                 train_report_to_json(tr));
    }
  } else {
    PhaseSnapshot snapshot;
    bool have_snapshot = false;
    std::vector<EwcTerm> ewc_terms;
    for (int m = 1; m <= t_phases; ++m) {
      const auto& mod = ds.modalities[order[m - 1]];
      TrainReport tr =
          train_phase(model, have_snapshot ? &snapshot : nullptr, mod,
                      ds.num_classes, cfg, method,
                      ewc_terms.empty() ? nullptr : &ewc_terms);
      result.phase_reports.push_back(tr);
      if (method == Method::kEwc) {
        FisherDiagonal fisher =
            estimate_fisher(model, mod, ds.num_classes, cfg);
        ewc_terms.push_back(make_ewc_term(model, fisher));
      }
      snapshot = snapshot_model(model, m);
      have_snapshot = true;
      eval_row(m);
      if (!out_dir.empty()) {
        save_checkpoint(
            model,
            (root / "checkpoints" / ("phase_" + std::to_string(m))).string());
        write_text(root / "reports" /
                       ("train_phase_" + std::to_string(m) + ".json"),
                   train_report_to_json(tr));
      }
    }
  }

  if (has_paired_test_set(ds)) {
    std::vector<const ModalityData*> mods;
    for (int idx : order) mods.push_back(&ds.modalities[idx]);
    report.a_multi =
        late_fusion_accuracy(model, mods, cfg.fuse_probabilities);
  }
  for (int idx : order) {
    const auto& mod = ds.modalities[idx];
    report.per_class.push_back(
        per_class_accuracy(model, mod, mod.test, ds.num_classes));
  }
  finalize_report(report);

  if (!out_dir.empty()) {
    write_text(root / "reports" / "eval_report.json", report_to_json(report));
    write_text(root / "tables" / "smatrix.csv", smatrix_to_csv(report));
    write_text(root / "tables" / "summary.md", report_to_markdown(report));
  }
  result.final_model = std::move(model);
  return result;
}

}  // namespace mil
