#pragma once

#include <string>
#include <vector>

#include "mil/evaluation.hpp"
#include "mil/trainer.hpp"

namespace mil {

struct RunResult {
  EvalReport report;
  std::vector<TrainReport> phase_reports;
  ModelState final_model;
};

// Resolves --phase-order names/ids to modality indices; empty input means
// manifest order. Throws ConfigError for unknown or duplicate entries.
std::vector<int> resolve_phase_order(const Dataset& ds,
                                     const std::vector<std::string>& order);

// Runs the full phase sequence for one method. When out_dir is non-empty,
// writes checkpoints/, reports/ and tables/ under it.
RunResult run_experiment(const Dataset& ds, const std::vector<int>& order,
                         const ModelConfig& cfg, Method method,
                         const std::string& out_dir = "");

}  // namespace mil
