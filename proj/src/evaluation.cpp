#include "mil/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mil/errors.hpp"

using nlohmann::json;

namespace mil {

void SMatrix::resize(int t) {
  phases = t;
  rows.assign(t, {});
  for (int m = 1; m <= t; ++m) rows[m - 1].assign(m, 0.0);
}

double& SMatrix::entry(int m, int n) {
  if (m < 1 || m > phases || n < 1 || n > m) {
    throw EvalError("S-matrix index (" + std::to_string(m) + "," +
                    std::to_string(n) + ") outside the lower triangle");
  }
  return rows[m - 1][n - 1];
}

double SMatrix::entry(int m, int n) const {
  return const_cast<SMatrix*>(this)->entry(m, n);
}

double accuracy_percent(const std::vector<int>& predictions,
                        const std::vector<int>& labels) {
  if (predictions.size() != labels.size()) {
    throw EvalError("prediction/label count mismatch");
  }
  if (labels.empty()) throw EvalError("empty evaluation split");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (predictions[i] == labels[i]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) /
         static_cast<double>(labels.size());
}

double eval_accuracy(const ModelState& model, const ModalityData& mod,
                     const Split& split) {
  if (split.size() == 0) throw EvalError("empty evaluation split");
  std::vector<int> preds;
  preds.reserve(split.size());
  for (std::size_t i = 0; i < split.size(); ++i) {
    preds.push_back(predict_class(model, feature_at(mod, split, i)));
  }
  return accuracy_percent(preds, split.labels);
}

std::vector<double> per_class_accuracy(const ModelState& model,
                                       const ModalityData& mod,
                                       const Split& split, int num_classes) {
  std::vector<int> correct(num_classes, 0), total(num_classes, 0);
  for (std::size_t i = 0; i < split.size(); ++i) {
    int label = split.labels[i];
    ++total[label];
    if (predict_class(model, feature_at(mod, split, i)) == label) {
      ++correct[label];
    }
  }
  std::vector<double> acc(num_classes, 0.0);
  for (int c = 0; c < num_classes; ++c) {
    acc[c] = total[c] ? 100.0 * correct[c] / total[c] : 0.0;
  }
  return acc;
}

double average_accuracy(const SMatrix& s, int m) {
  if (m < 1 || m > s.phases ||
      static_cast<int>(s.rows[m - 1].size()) != m) {
    throw EvalError("S-matrix row " + std::to_string(m) + " not populated");
  }
  double sum = 0.0;
  for (double v : s.rows[m - 1]) sum += v;
  return sum / static_cast<double>(m);
}

double late_fusion_accuracy(const ModelState& model,
                            const std::vector<const ModalityData*>& mods,
                            bool fuse_probabilities) {
  if (mods.empty()) throw EvalError("late fusion needs at least one modality");
  const std::size_t n = mods.front()->test.size();
  for (const auto* m : mods) {
    if (m->test.size() != n || m->test.ids != mods.front()->test.ids) {
      throw DataError("late fusion test sets are not aligned across modalities");
    }
  }
  std::vector<int> preds(n);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXd avg;
    for (const auto* m : mods) {
      Eigen::VectorXd out = forward(model, feature_at(*m, m->test, i)).logits;
      if (fuse_probabilities) {
        Eigen::VectorXd e = (out.array() - out.maxCoeff()).exp();
        out = e / e.sum();
      }
      if (avg.size() == 0) {
        avg = out;
      } else {
        avg += out;
      }
    }
    int best = 0;
    for (int c = 1; c < avg.size(); ++c) {
      if (avg(c) > avg(best)) best = c;
    }
    preds[i] = best;
  }
  return accuracy_percent(preds, mods.front()->test.labels);
}

void finalize_report(EvalReport& report) {
  std::vector<double> aa(report.s.phases);
  for (int m = 1; m <= report.s.phases; ++m) {
    aa[m - 1] = average_accuracy(report.s, m);
  }
  if (!report.aa.empty()) {
    for (int m = 0; m < report.s.phases; ++m) {
      if (std::abs(report.aa[m] - aa[m]) > 1e-9) {
        throw EvalError("stored AA disagrees with S-matrix row mean at phase " +
                        std::to_string(m + 1));
      }
    }
  }
  report.aa = std::move(aa);
}

std::string report_to_json(const EvalReport& r) {
  json j{{"method", r.method},
         {"dataset", r.dataset_name},
         {"phase_order", r.phase_order},
         {"phases", r.s.phases},
         {"s_matrix", r.s.rows},
         {"aa", r.aa},
         {"a_multi", r.a_multi},
         {"seed", r.seed},
         {"per_class", r.per_class}};
  if (!r.config_json.empty()) j["config"] = json::parse(r.config_json);
  return j.dump(2);
}

EvalReport report_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("report parse error: ") + e.what());
  }
  EvalReport r;
  try {
    r.method = j.at("method").get<std::string>();
    r.dataset_name = j.value("dataset", "");
    r.phase_order = j.at("phase_order").get<std::vector<std::string>>();
    r.s.phases = j.at("phases").get<int>();
    r.s.rows = j.at("s_matrix").get<std::vector<std::vector<double>>>();
    r.aa = j.at("aa").get<std::vector<double>>();
    r.a_multi = j.at("a_multi").get<double>();
    r.seed = j.value("seed", 0ULL);
    if (j.contains("per_class")) {
      r.per_class = j.at("per_class").get<std::vector<std::vector<double>>>();
    }
    if (j.contains("config")) r.config_json = j.at("config").dump();
  } catch (const json::exception& e) {
    throw DataError(std::string("report field error: ") + e.what());
  }
  return r;
}

EvalReport report_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return report_from_json_text(ss.str());
}

std::string smatrix_to_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "phase";
  for (int n = 1; n <= r.s.phases; ++n) {
    out << ",S_" << n << " (" << (n <= static_cast<int>(r.phase_order.size())
                                      ? r.phase_order[n - 1]
                                      : "?")
        << ")";
  }
  out << ",AA\n";
  out.setf(std::ios::fixed);
  out.precision(2);
  for (int m = 1; m <= r.s.phases; ++m) {
    out << m;
    for (int n = 1; n <= r.s.phases; ++n) {
      out << ",";
      if (n <= m) out << r.s.entry(m, n);
    }
    out << "," << r.aa[m - 1] << "\n";
  }
  return out.str();
}

std::string report_to_markdown(const EvalReport& r) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(2);
  out << "# " << r.method << " on " << r.dataset_name << "\n\n";
  out << "Phase order:";
  for (const auto& p : r.phase_order) out << " " << p;
  out << "\n\n| after phase |";
  for (int n = 1; n <= r.s.phases; ++n) {
    out << " S_" << n << " |";
  }
  out << " AA |\n|---|";
  for (int n = 0; n <= r.s.phases; ++n) out << "---|";
  out << "\n";
  for (int m = 1; m <= r.s.phases; ++m) {
    out << "| " << m << " |";
    for (int n = 1; n <= r.s.phases; ++n) {
      if (n <= m) {
        out << " " << r.s.entry(m, n) << " |";
      } else {
        out << " |";
      }
    }
    out << " " << r.aa[m - 1] << " |\n";
  }
  out << "\nA_multi: " << r.a_multi << "\n";
  return out.str();
}

}  // namespace mil
