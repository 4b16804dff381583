#pragma once

#include "mil/autograd.hpp"
#include "mil/config.hpp"

namespace mil {

// Paired pooled features from the current and historical branches.
struct AlignmentBatch {
  Mat o_cur;   // N x d
  Mat o_hist;  // N x d
};

// Shared affine scorer producing per-sample proxy weights beta via softmax.
struct ProxyScorer {
  Mat w;  // 1 x d
  Mat b;  // 1 x 1
};

// mean_i || o_cur_i - o_hist_i ||_2
double direct_align(const AlignmentBatch& batch);

// Margin loss over L2-normalized cross-branch similarities; mean over
// ordered pairs k != j, zero for N = 1.
double contrastive_align(const AlignmentBatch& batch, double margin,
                         ContrastiveForm form = ContrastiveForm::kHinge);

Eigen::RowVectorXd proxy_weights(const ProxyScorer& scorer, const Mat& o_cur);

// || sum_k beta_k o_cur_k - sum_k beta_k o_hist_k ||_2 with beta shared.
double distribution_align(const AlignmentBatch& batch,
                          const ProxyScorer& scorer);

double hybrid_align(const AlignmentBatch& batch, const ProxyScorer& scorer,
                    double lambda_con, double lambda_dis, double margin,
                    ContrastiveForm form = ContrastiveForm::kHinge);

// ---- graph versions ----------------------------------------------------

Var direct_align_g(Tape& t, Var o_cur, Var o_hist);
Var contrastive_align_g(Tape& t, Var o_cur, Var o_hist, double margin,
                        ContrastiveForm form = ContrastiveForm::kHinge);
Var distribution_align_g(Tape& t, Var o_cur, Var o_hist, Var scorer_w,
                         Var scorer_b);
Var hybrid_align_g(Tape& t, Var o_cur, Var o_hist, Var scorer_w, Var scorer_b,
                   double lambda_con, double lambda_dis, double margin,
                   ContrastiveForm form = ContrastiveForm::kHinge);

}  // namespace mil
