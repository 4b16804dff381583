#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mil/config.hpp"
#include "mil/data.hpp"
#include "mil/model.hpp"

namespace mil {

enum class Method {
  kSeqF,
  kFrozen,
  kFullR,
  kEwc,
  kLwf,
  kHarmony,
  kJointT,
};

Method parse_method(const std::string& id);  // throws ConfigError
std::string method_name(Method m);
std::vector<std::string> method_names();

// Frozen end-of-phase copy of the model, the historical model for the next
// phase. Never receives optimizer updates; gradients may flow through it.
struct PhaseSnapshot {
  ModelState state;
  int phase = 0;
  std::uint64_t checksum = 0;
};

PhaseSnapshot snapshot_model(const ModelState& model, int phase);

struct EpochStats {
  double cls = 0.0;
  double align = 0.0;
  double penalty = 0.0;
  double total = 0.0;
  double val_acc = 0.0;
};

struct TrainReport {
  int phase = 0;
  std::string method;
  std::vector<EpochStats> epochs;
  double wall_seconds = 0.0;
  std::uint64_t final_checksum = 0;
  // simplex monitoring over the whole phase (recomputed after each step)
  double min_alpha = 1.0;
  double alpha_sum_err = 0.0;
  double min_beta = 1.0;
  double beta_sum_err = 0.0;
};

std::string train_report_to_json(const TrainReport& r);

// mean cross-entropy over the batch + lambda * align_loss
double total_loss(const Mat& logits, const std::vector<int>& labels,
                  double align_loss, double lambda);

// One stored EwC regularization term (previous-phase anchor + importances).
struct EwcTerm {
  std::map<std::string, Mat> fisher;
  std::map<std::string, Mat> theta_star;
};

// Trains one phase in place. `snapshot` must be null iff this is phase 1.
// Method selects the loss/freezing rules; kHarmony wires modulation,
// bridging and hybrid alignment and merges the adapter at phase end.
TrainReport train_phase(ModelState& model, const PhaseSnapshot* snapshot,
                        const ModalityData& data, int num_classes,
                        const ModelConfig& cfg, Method method,
                        const std::vector<EwcTerm>* ewc_terms = nullptr);

}  // namespace mil
