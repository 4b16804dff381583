#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <vector>

namespace mil {

using Mat = Eigen::MatrixXd;

// One tape node. `grad` has the same shape as `value` and is zero until
// Tape::backward runs.
struct Node {
  Mat value;
  Mat grad;
  std::function<void(Node&)> backprop;  // adds into parents' grads
};

using Var = std::shared_ptr<Node>;

// Reverse-mode tape over dense double matrices. Scalars are 1x1 matrices.
// Every op records its node in creation order; backward() replays in reverse.
// Gradients are accumulated for all nodes; callers decide which leaves they
// care about.
class Tape {
 public:
  Var leaf(const Mat& v);
  Var leaf(Mat&& v);

  // elementwise / broadcast
  Var add(const Var& a, const Var& b);
  Var sub(const Var& a, const Var& b);
  Var mul(const Var& a, const Var& b);       // hadamard
  Var scale(const Var& a, double c);
  Var scale_var(const Var& a, const Var& s);  // s: 1 x 1
  Var transpose(const Var& a);
  Var add_rowvec(const Var& a, const Var& bias);  // bias: 1 x cols
  Var add_const(const Var& a, const Mat& c);
  Var relu(const Var& a);
  Var tanh_op(const Var& a);
  Var gelu(const Var& a);
  Var exp_op(const Var& a);

  // matmul family
  Var matmul(const Var& a, const Var& b);     // a * b
  Var matmul_nt(const Var& a, const Var& b);  // a * b^T
  Var matmul_tn(const Var& a, const Var& b);  // a^T * b

  // shape ops
  Var row_slice(const Var& a, int r0, int n);
  Var col_slice(const Var& a, int c0, int n);
  Var hstack(const std::vector<Var>& parts);
  Var stack_rows(const std::vector<Var>& rows);  // each 1 x d
  Var tile_rows(const Var& row, int n);          // 1 x d -> n x d

  // reductions / normalizations
  Var mean_rows(const Var& a);  // L x d -> 1 x d
  Var sum_all(const Var& a);    // -> 1 x 1
  Var softmax_rows(const Var& a);
  Var layernorm_rows(const Var& x, const Var& gamma, const Var& beta,
                     double eps = 1e-5);
  Var row_l2_normalize(const Var& a, double eps = 1e-12);
  Var mean_row_norms(const Var& a);  // mean_i ||row_i||_2 -> 1 x 1

  // losses
  Var cross_entropy(const Var& logits, const std::vector<int>& labels);
  // mean over off-diagonal pairs of max(0, S_kj - S_kk + eps); S square.
  // With absolute=true uses |S_kj - S_kk + eps| instead of the hinge.
  Var contrastive_hinge(const Var& sims, double margin, bool absolute = false);
  // KL(softmax(ref/T) || softmax(cur/T)) * T^2, mean over rows; ref is const
  Var kl_softened(const Var& cur_logits, const Mat& ref_logits, double T);
  // sum_i w_i (x_i - c_i)^2 with constant c, w -> 1 x 1
  Var weighted_sq_diff_sum(const Var& x, const Mat& ref, const Mat& fisher);
  Var sq_diff_sum(const Var& x, const Mat& ref);

  void backward(const Var& root);
  std::size_t size() const { return order_.size(); }

 private:
  Var make(Mat v, std::function<void(Node&)> bp);
  std::vector<Var> order_;
};

}  // namespace mil
