#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "mil/autograd.hpp"

using mil::Mat;
using mil::Tape;
using mil::Var;

namespace {

Mat randm(std::mt19937_64& rng, int r, int c, double s = 1.0) {
  std::normal_distribution<double> nd(0.0, s);
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = nd(rng);
  return m;
}

// Central finite differences of a scalar-valued graph builder with respect
// to every entry of every input matrix. `build` must return a 1x1 Var.
using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

double max_rel_err(const std::vector<Mat>& inputs, const Builder& build,
                   double h = 1e-6) {
  // analytic gradients
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& m : inputs) leaves.push_back(tape.leaf(m));
  Var loss = build(tape, leaves);
  REQUIRE(loss->value.rows() == 1);
  REQUIRE(loss->value.cols() == 1);
  tape.backward(loss);

  auto eval = [&](const std::vector<Mat>& xs) {
    Tape t2;
    std::vector<Var> ls;
    for (const auto& m : xs) ls.push_back(t2.leaf(m));
    return build(t2, ls)->value(0, 0);
  };

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (Eigen::Index i = 0; i < inputs[k].rows(); ++i) {
      for (Eigen::Index j = 0; j < inputs[k].cols(); ++j) {
        std::vector<Mat> xs = inputs;
        xs[k](i, j) += h;
        double up = eval(xs);
        xs[k](i, j) -= 2 * h;
        double dn = eval(xs);
        double fd = (up - dn) / (2 * h);
        double an = leaves[k]->grad(i, j);
        double denom = std::max({std::abs(fd), std::abs(an), 1e-4});
        worst = std::max(worst, std::abs(fd - an) / denom);
      }
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("leaf keeps values and zero grads") {
  Tape t;
  Mat m = Mat::Ones(2, 3);
  Var v = t.leaf(m);
  CHECK(v->value == m);
  CHECK(v->grad.isZero());
}

TEST_CASE("forward values of basic ops") {
  Tape t;
  Mat a(2, 2), b(2, 2);
  a << 1, 2, 3, 4;
  b << 5, 6, 7, 8;
  Var va = t.leaf(a), vb = t.leaf(b);
  CHECK(t.add(va, vb)->value == (a + b).eval());
  CHECK(t.sub(va, vb)->value == (a - b).eval());
  CHECK(t.mul(va, vb)->value == a.cwiseProduct(b).eval());
  CHECK(t.matmul(va, vb)->value == (a * b).eval());
  CHECK(t.matmul_nt(va, vb)->value == (a * b.transpose()).eval());
  CHECK(t.matmul_tn(va, vb)->value == (a.transpose() * b).eval());
  CHECK(t.scale(va, 2.5)->value == (2.5 * a).eval());
  CHECK(t.transpose(va)->value == a.transpose().eval());
}

TEST_CASE("softmax rows sum to one and are positive") {
  std::mt19937_64 rng(11);
  Tape t;
  Var x = t.leaf(randm(rng, 5, 7, 3.0));
  Mat s = t.softmax_rows(x)->value;
  for (int i = 0; i < 5; ++i) {
    CHECK(s.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(s.row(i).minCoeff() > 0.0);
  }
}

TEST_CASE("cross entropy of uniform logits is ln(C)") {
  Tape t;
  Var logits = t.leaf(Mat::Zero(3, 4));
  Var loss = t.cross_entropy(logits, {0, 1, 2});
  CHECK(loss->value(0, 0) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy of confident correct logits is near zero") {
  Mat logits = Mat::Zero(2, 3);
  logits(0, 1) = 50.0;
  logits(1, 2) = 50.0;
  Tape t;
  Var loss = t.cross_entropy(t.leaf(logits), {1, 2});
  CHECK(loss->value(0, 0) < 1e-6);
}

TEST_CASE("gradients: elementwise and matmul chain") {
  std::mt19937_64 rng(21);
  std::vector<Mat> in = {randm(rng, 3, 4), randm(rng, 4, 2), randm(rng, 3, 2)};
  double err = max_rel_err(in, [](Tape& t, const std::vector<Var>& v) {
    Var y = t.add(t.matmul(v[0], v[1]), v[2]);
    return t.sum_all(t.mul(t.tanh_op(y), y));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("gradients: gelu / relu / exp") {
  std::mt19937_64 rng(22);
  // keep relu inputs away from the kink
  Mat x = randm(rng, 4, 5);
  for (int i = 0; i < x.size(); ++i) {
    if (std::abs(x.data()[i]) < 0.05) x.data()[i] += 0.1;
  }
  double err = max_rel_err({x}, [](Tape& t, const std::vector<Var>& v) {
    Var g = t.gelu(v[0]);
    Var r = t.relu(v[0]);
    Var e = t.exp_op(t.scale(v[0], 0.3));
    return t.sum_all(t.add(t.add(g, r), e));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("gradients: softmax rows and cross entropy") {
  std::mt19937_64 rng(23);
  std::vector<Mat> in = {randm(rng, 4, 6)};
  double err = max_rel_err(in, [](Tape& t, const std::vector<Var>& v) {
    Var s = t.softmax_rows(v[0]);
    Var ce = t.cross_entropy(v[0], {1, 0, 5, 2});
    return t.add(t.sum_all(t.mul(s, s)), ce);
  });
  CHECK(err < 1e-4);
}

TEST_CASE("gradients: layernorm rows") {
  std::mt19937_64 rng(24);
  std::vector<Mat> in = {randm(rng, 3, 8), randm(rng, 1, 8),
                         randm(rng, 1, 8)};
  double err = max_rel_err(in, [](Tape& t, const std::vector<Var>& v) {
    Var y = t.layernorm_rows(v[0], v[1], v[2]);
    return t.sum_all(t.mul(y, y));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("gradients: shape ops and reductions") {
  std::mt19937_64 rng(25);
  std::vector<Mat> in = {randm(rng, 4, 6), randm(rng, 1, 6)};
  double err = max_rel_err(in, [](Tape& t, const std::vector<Var>& v) {
    Var s1 = t.row_slice(v[0], 1, 2);
    Var st = t.hstack({t.col_slice(s1, 0, 3), t.col_slice(s1, 3, 3)});
    Var tiled = t.tile_rows(v[1], 4);
    Var sum = t.add(t.mean_rows(t.mul(v[0], tiled)), t.mean_rows(st));
    Var rows = t.stack_rows({sum, t.mean_rows(st), t.mean_rows(v[0])});
    return t.sum_all(t.mul(rows, rows));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("gradients: row normalization and norms") {
  std::mt19937_64 rng(26);
  std::vector<Mat> in = {randm(rng, 4, 5)};
  double err = max_rel_err(in, [](Tape& t, const std::vector<Var>& v) {
    Var n = t.row_l2_normalize(v[0]);
    return t.add(t.mean_row_norms(v[0]), t.sum_all(t.mul(n, n)));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("gradients: add_rowvec, scale_var, add_const") {
  std::mt19937_64 rng(27);
  std::vector<Mat> in = {randm(rng, 3, 4), randm(rng, 1, 4),
                         randm(rng, 1, 1)};
  Mat c = randm(rng, 3, 4);
  double err = max_rel_err(in, [c](Tape& t, const std::vector<Var>& v) {
    Var y = t.add_const(t.add_rowvec(v[0], v[1]), c);
    return t.sum_all(t.mul(t.scale_var(y, v[2]), y));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("gradients: contrastive hinge away from kink") {
  std::mt19937_64 rng(28);
  std::vector<Mat> in = {randm(rng, 4, 4, 2.0)};
  double err = max_rel_err(in, [](Tape& t, const std::vector<Var>& v) {
    return t.contrastive_hinge(v[0], 0.3);
  });
  CHECK(err < 1e-4);
}

TEST_CASE("gradients: kl_softened and penalty reductions") {
  std::mt19937_64 rng(29);
  Mat ref = randm(rng, 3, 5);
  Mat anchor = randm(rng, 2, 3);
  Mat fisher = randm(rng, 2, 3).cwiseAbs();
  std::vector<Mat> in = {randm(rng, 3, 5), randm(rng, 2, 3)};
  double err =
      max_rel_err(in, [&](Tape& t, const std::vector<Var>& v) {
        Var kl = t.kl_softened(v[0], ref, 2.0);
        Var w = t.weighted_sq_diff_sum(v[1], anchor, fisher);
        Var s = t.sq_diff_sum(v[1], anchor);
        return t.add(kl, t.add(w, s));
      });
  CHECK(err < 1e-4);
}

TEST_CASE("backward accumulates through shared subexpressions") {
  // loss = sum(x*x + x) -> d/dx = 2x + 1 exactly
  Mat x(2, 2);
  x << 1, -2, 0.5, 3;
  Tape t;
  Var vx = t.leaf(x);
  Var loss = t.sum_all(t.add(t.mul(vx, vx), vx));
  t.backward(loss);
  Mat expect = 2 * x + Mat::Ones(2, 2);
  CHECK((vx->grad - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("kl of identical logits is zero") {
  std::mt19937_64 rng(30);
  Mat logits = randm(rng, 4, 6);
  Tape t;
  Var kl = t.kl_softened(t.leaf(logits), logits, 2.0);
  CHECK(std::abs(kl->value(0, 0)) < 1e-12);
}
