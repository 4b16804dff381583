#include "mil/autograd.hpp"

#include <cmath>
#include <stdexcept>

namespace mil {

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a->value.rows() != b->value.rows() ||
      a->value.cols() != b->value.cols()) {
    throw std::invalid_argument(std::string("shape mismatch in ") + op);
  }
}

}  // namespace

Var Tape::make(Mat v, std::function<void(Node&)> bp) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->grad = Mat::Zero(n->value.rows(), n->value.cols());
  n->backprop = std::move(bp);
  order_.push_back(n);
  return n;
}

Var Tape::leaf(const Mat& v) { return make(v, nullptr); }
Var Tape::leaf(Mat&& v) { return make(std::move(v), nullptr); }

Var Tape::add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return make(a->value + b->value, [a, b](Node& n) {
    a->grad += n.grad;
    b->grad += n.grad;
  });
}

Var Tape::sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return make(a->value - b->value, [a, b](Node& n) {
    a->grad += n.grad;
    b->grad -= n.grad;
  });
}

Var Tape::mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  return make(a->value.cwiseProduct(b->value), [a, b](Node& n) {
    a->grad += n.grad.cwiseProduct(b->value);
    b->grad += n.grad.cwiseProduct(a->value);
  });
}

Var Tape::scale(const Var& a, double c) {
  return make(a->value * c, [a, c](Node& n) { a->grad += n.grad * c; });
}

Var Tape::scale_var(const Var& a, const Var& s) {
  if (s->value.rows() != 1 || s->value.cols() != 1) {
    throw std::invalid_argument("scale_var: scale must be 1 x 1");
  }
  return make(a->value * s->value(0, 0), [a, s](Node& n) {
    a->grad += n.grad * s->value(0, 0);
    s->grad(0, 0) += n.grad.cwiseProduct(a->value).sum();
  });
}

Var Tape::transpose(const Var& a) {
  return make(a->value.transpose(),
              [a](Node& n) { a->grad += n.grad.transpose(); });
}

Var Tape::add_rowvec(const Var& a, const Var& bias) {
  if (bias->value.rows() != 1 || bias->value.cols() != a->value.cols()) {
    throw std::invalid_argument("add_rowvec: bias must be 1 x cols");
  }
  Mat v = a->value;
  v.rowwise() += bias->value.row(0);
  return make(std::move(v), [a, bias](Node& n) {
    a->grad += n.grad;
    bias->grad += n.grad.colwise().sum();
  });
}

Var Tape::add_const(const Var& a, const Mat& c) {
  return make(a->value + c, [a](Node& n) { a->grad += n.grad; });
}

Var Tape::relu(const Var& a) {
  return make(a->value.cwiseMax(0.0), [a](Node& n) {
    a->grad += (a->value.array() > 0.0).cast<double>().matrix().cwiseProduct(
        n.grad);
  });
}

Var Tape::tanh_op(const Var& a) {
  Mat v = a->value.array().tanh().matrix();
  return make(v, [a, v](Node& n) {
    a->grad += ((1.0 - v.array().square()) * n.grad.array()).matrix();
  });
}

Var Tape::gelu(const Var& a) {
  const double inv_sqrt2 = 0.7071067811865476;
  const double inv_sqrt2pi = 0.3989422804014327;
  Mat v = a->value.unaryExpr(
      [&](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
  return make(std::move(v), [a, inv_sqrt2, inv_sqrt2pi](Node& n) {
    Mat d = a->value.unaryExpr([&](double x) {
      double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
      double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
      return cdf + x * pdf;
    });
    a->grad += d.cwiseProduct(n.grad);
  });
}

Var Tape::exp_op(const Var& a) {
  Mat v = a->value.array().exp().matrix();
  return make(v, [a, v](Node& n) { a->grad += v.cwiseProduct(n.grad); });
}

Var Tape::matmul(const Var& a, const Var& b) {
  if (a->value.cols() != b->value.rows()) {
    throw std::invalid_argument("matmul: inner dimension mismatch");
  }
  return make(a->value * b->value, [a, b](Node& n) {
    a->grad += n.grad * b->value.transpose();
    b->grad += a->value.transpose() * n.grad;
  });
}

Var Tape::matmul_nt(const Var& a, const Var& b) {
  if (a->value.cols() != b->value.cols()) {
    throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  }
  return make(a->value * b->value.transpose(), [a, b](Node& n) {
    a->grad += n.grad * b->value;
    b->grad += n.grad.transpose() * a->value;
  });
}

Var Tape::matmul_tn(const Var& a, const Var& b) {
  if (a->value.rows() != b->value.rows()) {
    throw std::invalid_argument("matmul_tn: inner dimension mismatch");
  }
  return make(a->value.transpose() * b->value, [a, b](Node& n) {
    a->grad += b->value * n.grad.transpose();
    b->grad += a->value * n.grad;
  });
}

Var Tape::row_slice(const Var& a, int r0, int n) {
  if (r0 < 0 || r0 + n > a->value.rows()) {
    throw std::out_of_range("row_slice out of range");
  }
  return make(a->value.middleRows(r0, n), [a, r0, n](Node& nd) {
    a->grad.middleRows(r0, n) += nd.grad;
  });
}

Var Tape::col_slice(const Var& a, int c0, int n) {
  if (c0 < 0 || c0 + n > a->value.cols()) {
    throw std::out_of_range("col_slice out of range");
  }
  return make(a->value.middleCols(c0, n), [a, c0, n](Node& nd) {
    a->grad.middleCols(c0, n) += nd.grad;
  });
}

Var Tape::hstack(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("hstack: empty");
  Eigen::Index rows = parts[0]->value.rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) cols += p->value.cols();
  Mat v(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    v.middleCols(c, p->value.cols()) = p->value;
    c += p->value.cols();
  }
  return make(std::move(v), [parts](Node& n) {
    Eigen::Index c = 0;
    for (const auto& p : parts) {
      p->grad += n.grad.middleCols(c, p->value.cols());
      c += p->value.cols();
    }
  });
}

Var Tape::stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: empty");
  Mat v(static_cast<Eigen::Index>(rows.size()), rows[0]->value.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i]->value.rows() != 1) {
      throw std::invalid_argument("stack_rows: inputs must be 1 x d");
    }
    v.row(static_cast<Eigen::Index>(i)) = rows[i]->value.row(0);
  }
  return make(std::move(v), [rows](Node& n) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      rows[i]->grad.row(0) += n.grad.row(static_cast<Eigen::Index>(i));
    }
  });
}

Var Tape::tile_rows(const Var& row, int n) {
  if (row->value.rows() != 1) {
    throw std::invalid_argument("tile_rows: input must be 1 x d");
  }
  Mat v = row->value.replicate(n, 1);
  return make(std::move(v), [row](Node& nd) {
    row->grad.row(0) += nd.grad.colwise().sum();
  });
}

Var Tape::mean_rows(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a->value.rows());
  Mat v = a->value.colwise().mean();
  return make(std::move(v), [a, inv](Node& n) {
    a->grad.rowwise() += (n.grad.row(0) * inv).eval();
  });
}

Var Tape::sum_all(const Var& a) {
  Mat v(1, 1);
  v(0, 0) = a->value.sum();
  return make(std::move(v), [a](Node& n) {
    a->grad.array() += n.grad(0, 0);
  });
}

Var Tape::softmax_rows(const Var& a) {
  Mat v = a->value;
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    Eigen::RowVectorXd r = v.row(i);
    r.array() -= r.maxCoeff();
    Eigen::RowVectorXd e = r.array().exp();
    v.row(i) = e / e.sum();
  }
  return make(v, [a, v](Node& n) {
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      double dot = n.grad.row(i).dot(v.row(i));
      a->grad.row(i) +=
          v.row(i).cwiseProduct((n.grad.row(i).array() - dot).matrix());
    }
  });
}

Var Tape::layernorm_rows(const Var& x, const Var& gamma, const Var& beta,
                         double eps) {
  const Eigen::Index d = x->value.cols();
  Mat xhat(x->value.rows(), d);
  Eigen::VectorXd inv_std(x->value.rows());
  for (Eigen::Index i = 0; i < x->value.rows(); ++i) {
    double mu = x->value.row(i).mean();
    Eigen::RowVectorXd c = x->value.row(i).array() - mu;
    double var = c.squaredNorm() / static_cast<double>(d);
    double is = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = c * is;
    inv_std(i) = is;
  }
  Mat v = xhat;
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    v.row(i) = v.row(i).cwiseProduct(gamma->value.row(0)) + beta->value.row(0);
  }
  return make(std::move(v), [x, gamma, beta, xhat, inv_std, d](Node& n) {
    for (Eigen::Index i = 0; i < n.grad.rows(); ++i) {
      Eigen::RowVectorXd g = n.grad.row(i);
      gamma->grad.row(0) += g.cwiseProduct(xhat.row(i));
      beta->grad.row(0) += g;
      Eigen::RowVectorXd gh = g.cwiseProduct(gamma->value.row(0));
      double m1 = gh.mean();
      double m2 = gh.cwiseProduct(xhat.row(i)).mean();
      x->grad.row(i) +=
          inv_std(i) *
          (gh.array() - m1 - xhat.row(i).array() * m2).matrix();
    }
  });
}

Var Tape::row_l2_normalize(const Var& a, double eps) {
  Eigen::VectorXd norms(a->value.rows());
  Mat v(a->value.rows(), a->value.cols());
  for (Eigen::Index i = 0; i < a->value.rows(); ++i) {
    double nn = a->value.row(i).norm() + eps;
    norms(i) = nn;
    v.row(i) = a->value.row(i) / nn;
  }
  return make(v, [a, v, norms](Node& n) {
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      double dot = n.grad.row(i).dot(v.row(i));
      a->grad.row(i) += (n.grad.row(i) - dot * v.row(i)) / norms(i);
    }
  });
}

Var Tape::mean_row_norms(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a->value.rows());
  Eigen::VectorXd norms(a->value.rows());
  double s = 0.0;
  for (Eigen::Index i = 0; i < a->value.rows(); ++i) {
    norms(i) = a->value.row(i).norm();
    s += norms(i);
  }
  Mat v(1, 1);
  v(0, 0) = s * inv;
  return make(std::move(v), [a, norms, inv](Node& n) {
    double g = n.grad(0, 0) * inv;
    for (Eigen::Index i = 0; i < a->value.rows(); ++i) {
      double nn = norms(i) + 1e-12;
      a->grad.row(i) += (g / nn) * a->value.row(i);
    }
  });
}

Var Tape::cross_entropy(const Var& logits, const std::vector<int>& labels) {
  const Eigen::Index n_rows = logits->value.rows();
  if (static_cast<Eigen::Index>(labels.size()) != n_rows) {
    throw std::invalid_argument("cross_entropy: label count mismatch");
  }
  Mat probs(n_rows, logits->value.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n_rows; ++i) {
    Eigen::RowVectorXd r = logits->value.row(i);
    double mx = r.maxCoeff();
    Eigen::RowVectorXd e = (r.array() - mx).exp();
    double z = e.sum();
    probs.row(i) = e / z;
    loss += std::log(z) + mx - r(labels[i]);
  }
  Mat v(1, 1);
  v(0, 0) = loss / static_cast<double>(n_rows);
  return make(std::move(v), [logits, labels, probs, n_rows](Node& n) {
    double g = n.grad(0, 0) / static_cast<double>(n_rows);
    Mat d = probs;
    for (Eigen::Index i = 0; i < n_rows; ++i) d(i, labels[i]) -= 1.0;
    logits->grad += g * d;
  });
}

Var Tape::contrastive_hinge(const Var& sims, double margin, bool absolute) {
  const Eigen::Index n_rows = sims->value.rows();
  if (n_rows != sims->value.cols()) {
    throw std::invalid_argument("contrastive_hinge: similarity matrix not square");
  }
  const Eigen::Index pairs = n_rows * (n_rows - 1);
  Mat v(1, 1);
  if (pairs == 0) {
    v(0, 0) = 0.0;
    return make(std::move(v), nullptr);
  }
  double s = 0.0;
  for (Eigen::Index k = 0; k < n_rows; ++k) {
    for (Eigen::Index j = 0; j < n_rows; ++j) {
      if (k == j) continue;
      double t = sims->value(k, j) - sims->value(k, k) + margin;
      s += absolute ? std::abs(t) : std::max(0.0, t);
    }
  }
  v(0, 0) = s / static_cast<double>(pairs);
  return make(std::move(v), [sims, margin, n_rows, pairs, absolute](Node& n) {
    double g = n.grad(0, 0) / static_cast<double>(pairs);
    for (Eigen::Index k = 0; k < n_rows; ++k) {
      for (Eigen::Index j = 0; j < n_rows; ++j) {
        if (k == j) continue;
        double t = sims->value(k, j) - sims->value(k, k) + margin;
        double d = absolute ? (t > 0.0 ? 1.0 : (t < 0.0 ? -1.0 : 0.0))
                            : (t > 0.0 ? 1.0 : 0.0);
        if (d != 0.0) {
          sims->grad(k, j) += g * d;
          sims->grad(k, k) -= g * d;
        }
      }
    }
  });
}

Var Tape::kl_softened(const Var& cur_logits, const Mat& ref_logits, double T) {
  const Eigen::Index n_rows = cur_logits->value.rows();
  if (ref_logits.rows() != n_rows ||
      ref_logits.cols() != cur_logits->value.cols()) {
    throw std::invalid_argument("kl_softened: logits shape mismatch");
  }
  auto softmax_t = [T](const Eigen::RowVectorXd& r) {
    Eigen::RowVectorXd s = r / T;
    s.array() -= s.maxCoeff();
    Eigen::RowVectorXd e = s.array().exp();
    return Eigen::RowVectorXd(e / e.sum());
  };
  Mat p_cur(n_rows, cur_logits->value.cols());
  Mat p_ref(n_rows, cur_logits->value.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n_rows; ++i) {
    p_cur.row(i) = softmax_t(cur_logits->value.row(i));
    p_ref.row(i) = softmax_t(ref_logits.row(i));
    for (Eigen::Index c = 0; c < p_cur.cols(); ++c) {
      double pr = p_ref(i, c);
      if (pr > 0.0) loss += pr * (std::log(pr) - std::log(p_cur(i, c) + 1e-30));
    }
  }
  Mat v(1, 1);
  v(0, 0) = loss * T * T / static_cast<double>(n_rows);
  return make(std::move(v), [cur_logits, p_cur, p_ref, T, n_rows](Node& n) {
    double g = n.grad(0, 0) * T / static_cast<double>(n_rows);
    cur_logits->grad += g * (p_cur - p_ref);
  });
}

Var Tape::weighted_sq_diff_sum(const Var& x, const Mat& ref,
                               const Mat& fisher) {
  Mat diff = x->value - ref;
  Mat v(1, 1);
  v(0, 0) = diff.cwiseProduct(diff).cwiseProduct(fisher).sum();
  return make(std::move(v), [x, diff, fisher](Node& n) {
    x->grad += 2.0 * n.grad(0, 0) * diff.cwiseProduct(fisher);
  });
}

Var Tape::sq_diff_sum(const Var& x, const Mat& ref) {
  Mat diff = x->value - ref;
  Mat v(1, 1);
  v(0, 0) = diff.squaredNorm();
  return make(std::move(v), [x, diff](Node& n) {
    x->grad += 2.0 * n.grad(0, 0) * diff;
  });
}

void Tape::backward(const Var& root) {
  if (root->value.rows() != 1 || root->value.cols() != 1) {
    throw std::invalid_argument("backward: root must be scalar (1x1)");
  }
  root->grad(0, 0) = 1.0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    if ((*it)->backprop) (*it)->backprop(**it);
  }
}

}  // namespace mil
