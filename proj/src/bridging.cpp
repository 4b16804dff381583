#include "mil/bridging.hpp"

#include <cmath>

#include "mil/errors.hpp"

namespace mil {

Mat aggregate(const AggregationModule& m, const Mat& tokens) {
  if (tokens.cols() != m.weight.cols()) {
    throw ShapeError("aggregate: token width does not match module");
  }
  Mat out = tokens * m.weight.transpose();
  out.rowwise() += m.bias.row(0);
  return out;
}

Mat adapter_apply(const GatedAdapter& ad, const Mat& tokens) {
  if (tokens.cols() != ad.b.rows()) {
    throw ShapeError("adapter_apply: token width does not match adapter");
  }
  return ad.gate * ((tokens * ad.b) * ad.a);
}

Mat cross_attention_fuse(const Mat& f_hist, const Mat& f_cur) {
  if (f_hist.cols() != f_cur.cols()) {
    throw ShapeError("cross_attention_fuse: width mismatch");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(f_hist.cols()));
  Mat scores = (f_hist * f_cur.transpose()) * scale;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::RowVectorXd r = scores.row(i);
    r.array() -= r.maxCoeff();
    Eigen::RowVectorXd e = r.array().exp();
    scores.row(i) = e / e.sum();
  }
  return scores * f_cur;
}

AggregationModule merge_adapter(const AggregationModule& m,
                                const GatedAdapter& ad, MergeMode mode) {
  const Eigen::Index d = m.weight.rows();
  if (ad.b.rows() != d || ad.a.cols() != d) {
    throw ShapeError("merge_adapter: adapter does not match module width");
  }
  Mat g = ad.effective();  // d x d
  AggregationModule out;
  if (mode == MergeMode::kResidual) {
    // x W^T + b followed by the residual branch (I + G):
    //   x W^T (I + G) + b (I + G)
    Mat ig = Mat::Identity(d, d) + g;
    out.weight = ig.transpose() * m.weight;
    out.bias = m.bias * ig;
  } else {
    out.weight = g.transpose() * m.weight;
    out.bias = m.bias * g;
  }
  return out;
}

Var aggregate_g(Tape& t, Var weight, Var bias, Var tokens) {
  return t.add_rowvec(t.matmul_nt(tokens, weight), bias);
}

Var adapter_apply_g(Tape& t, Var a, Var b, Var gate, Var tokens) {
  return t.scale_var(t.matmul(t.matmul(tokens, b), a), gate);
}

Var cross_attention_fuse_g(Tape& t, Var f_hist, Var f_cur) {
  if (f_hist->value.cols() != f_cur->value.cols()) {
    throw ShapeError("cross_attention_fuse: width mismatch");
  }
  const double scale =
      1.0 / std::sqrt(static_cast<double>(f_hist->value.cols()));
  Var s = t.scale(t.matmul_nt(f_hist, f_cur), scale);
  return t.matmul(t.softmax_rows(s), f_cur);
}

}  // namespace mil
