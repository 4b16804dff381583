#include "mil/alignment.hpp"

#include "mil/errors.hpp"

namespace mil {

namespace {

void check_batch(const AlignmentBatch& b) {
  if (b.o_cur.rows() != b.o_hist.rows() || b.o_cur.cols() != b.o_hist.cols()) {
    throw ShapeError("alignment batch: branch shapes differ");
  }
  if (b.o_cur.rows() < 1) throw ShapeError("alignment batch: empty");
}

}  // namespace

Var direct_align_g(Tape& t, Var o_cur, Var o_hist) {
  return t.mean_row_norms(t.sub(o_cur, o_hist));
}

Var contrastive_align_g(Tape& t, Var o_cur, Var o_hist, double margin,
                        ContrastiveForm form) {
  Var nc = t.row_l2_normalize(o_cur);
  Var nh = t.row_l2_normalize(o_hist);
  Var sims = t.matmul_nt(nc, nh);
  return t.contrastive_hinge(sims, margin,
                             form == ContrastiveForm::kAbsolute);
}

Var distribution_align_g(Tape& t, Var o_cur, Var o_hist, Var scorer_w,
                         Var scorer_b) {
  Var scores = t.add_rowvec(t.matmul_nt(o_cur, scorer_w),
                            scorer_b);  // N x 1
  Var beta = t.softmax_rows(t.transpose(scores));  // 1 x N, shared both sides
  Var h_cur = t.matmul(beta, o_cur);
  Var h_hist = t.matmul(beta, o_hist);
  return t.mean_row_norms(t.sub(h_cur, h_hist));
}

Var hybrid_align_g(Tape& t, Var o_cur, Var o_hist, Var scorer_w, Var scorer_b,
                   double lambda_con, double lambda_dis, double margin,
                   ContrastiveForm form) {
  Var loss = direct_align_g(t, o_cur, o_hist);
  if (lambda_con != 0.0) {
    loss = t.add(loss, t.scale(contrastive_align_g(t, o_cur, o_hist, margin,
                                                   form),
                               lambda_con));
  }
  if (lambda_dis != 0.0) {
    loss = t.add(loss,
                 t.scale(distribution_align_g(t, o_cur, o_hist, scorer_w,
                                              scorer_b),
                         lambda_dis));
  }
  return loss;
}

double direct_align(const AlignmentBatch& batch) {
  check_batch(batch);
  Tape t;
  return direct_align_g(t, t.leaf(batch.o_cur), t.leaf(batch.o_hist))
      ->value(0, 0);
}

double contrastive_align(const AlignmentBatch& batch, double margin,
                         ContrastiveForm form) {
  check_batch(batch);
  Tape t;
  return contrastive_align_g(t, t.leaf(batch.o_cur), t.leaf(batch.o_hist),
                             margin, form)
      ->value(0, 0);
}

Eigen::RowVectorXd proxy_weights(const ProxyScorer& scorer, const Mat& o_cur) {
  Eigen::VectorXd scores =
      (o_cur * scorer.w.transpose()).col(0).array() + scorer.b(0, 0);
  scores.array() -= scores.maxCoeff();
  Eigen::VectorXd e = scores.array().exp();
  return (e / e.sum()).transpose();
}

double distribution_align(const AlignmentBatch& batch,
                          const ProxyScorer& scorer) {
  check_batch(batch);
  Tape t;
  return distribution_align_g(t, t.leaf(batch.o_cur), t.leaf(batch.o_hist),
                              t.leaf(scorer.w), t.leaf(scorer.b))
      ->value(0, 0);
}

double hybrid_align(const AlignmentBatch& batch, const ProxyScorer& scorer,
                    double lambda_con, double lambda_dis, double margin,
                    ContrastiveForm form) {
  check_batch(batch);
  Tape t;
  return hybrid_align_g(t, t.leaf(batch.o_cur), t.leaf(batch.o_hist),
                        t.leaf(scorer.w), t.leaf(scorer.b), lambda_con,
                        lambda_dis, margin, form)
      ->value(0, 0);
}

}  // namespace mil
