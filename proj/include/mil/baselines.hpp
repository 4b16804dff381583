#pragma once

#include "mil/trainer.hpp"

namespace mil {

// Per-parameter non-negative importance estimates, keyed by parameter name,
// same shapes as the penalized (persistent) parameters.
using FisherDiagonal = std::map<std::string, Mat>;

// Mean squared gradient of the classification loss over (up to max_samples
// of) the given train split, taken on the persistent parameters.
FisherDiagonal estimate_fisher(ModelState& model, const ModalityData& data,
                               int num_classes, const ModelConfig& cfg,
                               int max_samples = 200);

// Mean-normalized squared L2 distance over shared persistent parameters.
double fullr_penalty(const ModelState& model, const ModelState& snapshot);

// 0.5 * lambda_ewc * sum_i fisher_i (theta_i - theta*_i)^2
double ewc_penalty(const ModelState& model, const ModelState& snapshot,
                   const FisherDiagonal& fisher, double lambda_ewc);

// KL between the temperature-softened snapshot and current distributions,
// scaled by T^2, mean over batch rows.
double lwf_loss(const Mat& current_logits, const Mat& snapshot_logits,
                double temperature);

EwcTerm make_ewc_term(const ModelState& anchor, const FisherDiagonal& fisher);

}  // namespace mil
