#pragma once

#include <string>
#include <vector>

#include "mil/data.hpp"
#include "mil/model.hpp"

namespace mil {

// Lower-triangular accuracy matrix in percent: entry(m, n) is the accuracy
// of the model after phase m on modality n's test split, 1-based, n <= m.
struct SMatrix {
  int phases = 0;
  std::vector<std::vector<double>> rows;  // rows[m-1] has m entries

  void resize(int t);
  double& entry(int m, int n);
  double entry(int m, int n) const;
};

struct EvalReport {
  std::string method;
  std::string dataset_name;
  std::vector<std::string> phase_order;  // modality names in training order
  SMatrix s;
  std::vector<double> aa;  // aa[m-1] = mean of row m
  double a_multi = 0.0;
  std::string config_json;
  std::uint64_t seed = 0;
  // per-class accuracy of the final model on each modality's test split
  std::vector<std::vector<double>> per_class;
};

double accuracy_percent(const std::vector<int>& predictions,
                        const std::vector<int>& labels);

// 100 * correct / N over a test split; argmax ties break to the lowest
// class index. Empty split -> EvalError.
double eval_accuracy(const ModelState& model, const ModalityData& mod,
                     const Split& split);

std::vector<double> per_class_accuracy(const ModelState& model,
                                       const ModalityData& mod,
                                       const Split& split, int num_classes);

// AA_m = mean of row m of S (1-based). Missing entries -> EvalError.
double average_accuracy(const SMatrix& s, int m);

// Late fusion: average each sample's per-modality outputs from the single
// final model, then argmax. `mods` must share one aligned test set.
double late_fusion_accuracy(const ModelState& model,
                            const std::vector<const ModalityData*>& mods,
                            bool fuse_probabilities = false);

// Recomputes AA from S and fills the report; throws EvalError if an already
// present AA disagrees beyond 1e-9.
void finalize_report(EvalReport& report);

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json_text(const std::string& text);
EvalReport report_from_json_file(const std::string& path);
std::string smatrix_to_csv(const EvalReport& report);
std::string report_to_markdown(const EvalReport& report);

}  // namespace mil
