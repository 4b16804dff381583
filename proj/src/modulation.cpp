#include "mil/modulation.hpp"

#include <stdexcept>

#include "mil/errors.hpp"

namespace mil {

PerturbationBank bank_from(const ModelState& m) {
  PerturbationBank b;
  b.trans_w = m.trans_w;
  b.trans_b = m.trans_b;
  b.mod_w1 = m.mod_w1;
  b.mod_b1 = m.mod_b1;
  b.mod_w2 = m.mod_w2;
  b.mod_b2 = m.mod_b2;
  b.log_sigma = m.log_sigma;
  return b;
}

Eigen::RowVectorXd extract_prototype(const Mat& classifier_weights,
                                     int label) {
  if (label < 0 || label >= classifier_weights.rows()) {
    throw std::out_of_range("prototype label " + std::to_string(label) +
                            " out of range [0, " +
                            std::to_string(classifier_weights.rows()) + ")");
  }
  return classifier_weights.row(label);
}

Eigen::RowVectorXd mixture_coefficients(const PerturbationBank& bank,
                                        const Mat& current_tokens) {
  if (current_tokens.cols() != bank.width()) {
    throw ShapeError("mixture_coefficients: feature width mismatch");
  }
  Eigen::RowVectorXd pooled = current_tokens.colwise().mean();
  Eigen::RowVectorXd h =
      ((pooled * bank.mod_w1.transpose() + bank.mod_b1).array().tanh());
  Eigen::RowVectorXd logits = h * bank.mod_w2.transpose() + bank.mod_b2;
  logits.array() -= logits.maxCoeff();
  Eigen::RowVectorXd e = logits.array().exp();
  return e / e.sum();
}

Eigen::RowVectorXd perturb_prototype(const PerturbationBank& bank,
                                     const Eigen::RowVectorXd& prototype,
                                     const Eigen::RowVectorXd& alpha,
                                     double lambda_g, std::mt19937_64& rng) {
  if (prototype.size() != bank.width()) {
    throw ShapeError("perturb_prototype: prototype width mismatch");
  }
  Eigen::RowVectorXd out =
      prototype * bank.trans_w.transpose() + bank.trans_b;
  if (lambda_g == 0.0) return out;  // pure function of (E_trans, prototype)
  Mat noise = draw_noise(bank.num_components(), bank.width(), rng);
  for (int i = 0; i < bank.num_components(); ++i) {
    Eigen::RowVectorXd z =
        bank.log_sigma.row(i).array().exp() * noise.row(i).array();
    out += lambda_g * alpha(i) * z;
  }
  return out;
}

Mat modulate(const Eigen::RowVectorXd& perturbed_prototype,
             const Mat& current_tokens) {
  if (perturbed_prototype.size() != current_tokens.cols()) {
    throw ShapeError("modulate: width mismatch");
  }
  Mat out = current_tokens;
  out.rowwise() += perturbed_prototype;
  return out;
}

Mat draw_noise(int k, int d, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Mat n(k, d);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < d; ++j) n(i, j) = dist(rng);
  }
  return n;
}

BankVars bank_vars(const ModelVars& v) {
  return BankVars{v.trans_w, v.trans_b, v.mod_w1, v.mod_b1,
                  v.mod_w2, v.mod_b2, v.log_sigma};
}

Var mixture_coefficients_g(Tape& t, const BankVars& b, Var tokens) {
  Var pooled = t.mean_rows(tokens);
  Var h = t.tanh_op(t.add_rowvec(t.matmul_nt(pooled, b.mod_w1), b.mod_b1));
  Var logits = t.add_rowvec(t.matmul_nt(h, b.mod_w2), b.mod_b2);
  return t.softmax_rows(logits);
}

Var perturb_prototype_g(Tape& t, const BankVars& b,
                        const Eigen::RowVectorXd& prototype, Var alpha,
                        double lambda_g, const Mat& noise) {
  Var p = t.leaf(Mat(prototype));
  Var transformed = t.add_rowvec(t.matmul_nt(p, b.trans_w), b.trans_b);
  if (lambda_g == 0.0) return transformed;
  Var sigma = t.exp_op(b.log_sigma);
  Var z = t.mul(sigma, t.leaf(noise));  // K x d, rows are z_i
  Var mix = t.matmul(alpha, z);         // 1 x d
  return t.add(transformed, t.scale(mix, lambda_g));
}

Var modulate_g(Tape& t, Var perturbed_prototype, Var tokens) {
  if (perturbed_prototype->value.cols() != tokens->value.cols()) {
    throw ShapeError("modulate: width mismatch");
  }
  return t.add(tokens, t.tile_rows(perturbed_prototype,
                                   static_cast<int>(tokens->value.rows())));
}

}  // namespace mil
