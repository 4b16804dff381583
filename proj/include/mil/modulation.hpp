#pragma once

#include <random>

#include "mil/autograd.hpp"
#include "mil/model.hpp"

namespace mil {

// Parameters of the adaptive feature perturbation path: a transform applied
// to historical prototypes, a small two-layer head producing mixture
// coefficients, and K learnable per-dimension log standard deviations.
struct PerturbationBank {
  Mat trans_w, trans_b;                // E_trans: d -> d
  Mat mod_w1, mod_b1, mod_w2, mod_b2;  // E_mod: d -> h -> K
  Mat log_sigma;                       // K x d

  int num_components() const { return static_cast<int>(log_sigma.rows()); }
  int width() const { return static_cast<int>(log_sigma.cols()); }
};

PerturbationBank bank_from(const ModelState& m);

// Row `label` of the frozen previous-phase classifier weights.
Eigen::RowVectorXd extract_prototype(const Mat& classifier_weights, int label);

// softmax(E_mod(mean-pooled tokens)); lies on the K-simplex.
Eigen::RowVectorXd mixture_coefficients(const PerturbationBank& bank,
                                        const Mat& current_tokens);

// E_trans(prototype) + lambda_g * sum_i alpha_i * z_i,
// z_i ~ N(0, diag(exp(log_sigma_i)^2)), one draw per component per call.
Eigen::RowVectorXd perturb_prototype(const PerturbationBank& bank,
                                     const Eigen::RowVectorXd& prototype,
                                     const Eigen::RowVectorXd& alpha,
                                     double lambda_g, std::mt19937_64& rng);

// Broadcast-adds the perturbed prototype to every token of the current
// feature; result has the current feature's shape.
Mat modulate(const Eigen::RowVectorXd& perturbed_prototype,
             const Mat& current_tokens);

// ---- graph versions (gradients flow to E_trans, E_mod, log_sigma) ------

struct BankVars {
  Var trans_w, trans_b, mod_w1, mod_b1, mod_w2, mod_b2, log_sigma;
};

BankVars bank_vars(const ModelVars& v);

Var mixture_coefficients_g(Tape& t, const BankVars& b, Var tokens);  // 1 x K

// `noise` is a K x d matrix of standard-normal draws taken outside the graph.
Var perturb_prototype_g(Tape& t, const BankVars& b,
                        const Eigen::RowVectorXd& prototype, Var alpha,
                        double lambda_g, const Mat& noise);

Var modulate_g(Tape& t, Var perturbed_prototype, Var tokens);

// Draws the K x d standard-normal block used by perturb_prototype_g.
Mat draw_noise(int k, int d, std::mt19937_64& rng);

}  // namespace mil
