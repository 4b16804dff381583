#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <random>

#include "doctest.h"
#include "mil/errors.hpp"
#include "mil/evaluation.hpp"

using namespace mil;

namespace {

Mat randm(std::mt19937_64& rng, int r, int c, double s = 1.0) {
  std::normal_distribution<double> nd(0.0, s);
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = nd(rng);
  return m;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.depth = 1;
  c.width = 8;
  c.heads = 2;
  c.num_classes = 4;
  c.adapter_rank = 2;
  c.max_len = 4;
  c.seed = 5;
  return c;
}

ModalityData make_modality(std::mt19937_64& rng, int n, int L, int d,
                           int num_classes, int id = 0) {
  ModalityData m;
  m.id = id;
  m.name = "m" + std::to_string(id);
  m.raw_dim = d;
  m.seq_len = L;
  for (int i = 0; i < n; ++i) {
    m.test.features.push_back(randm(rng, L, d));
    m.test.labels.push_back(i % num_classes);
    m.test.ids.push_back(i);
  }
  return m;
}

}  // namespace

TEST_CASE("accuracy_percent basics") {
  CHECK(accuracy_percent({0, 1, 2, 3}, {0, 1, 2, 3}) == 100.0);
  // constant prediction on a balanced 4-class split
  CHECK(accuracy_percent({1, 1, 1, 1, 1, 1, 1, 1}, {0, 1, 2, 3, 0, 1, 2, 3}) ==
        doctest::Approx(25.0));
  CHECK_THROWS_AS(accuracy_percent({}, {}), EvalError);
  CHECK_THROWS_AS(accuracy_percent({1}, {1, 2}), EvalError);
}

TEST_CASE("eval_accuracy equals a loop-and-count oracle") {
  ModelConfig c = tiny_config();
  ModelState model = init_model(c);
  std::mt19937_64 rng(6);
  ModalityData mod = make_modality(rng, 20, 3, c.width, c.num_classes);

  int correct = 0;
  for (int i = 0; i < 20; ++i) {
    FeatureSequence f{mod.test.features[i], 0};
    if (predict_class(model, f) == mod.test.labels[i]) ++correct;
  }
  double want = 100.0 * correct / 20.0;
  CHECK(eval_accuracy(model, mod, mod.test) == doctest::Approx(want));

  Split empty;
  CHECK_THROWS_AS(eval_accuracy(model, mod, empty), EvalError);
}

TEST_CASE("average accuracy reproduces the published row means") {
  SMatrix s;
  s.resize(3);
  s.entry(3, 1) = 50.70;
  s.entry(3, 2) = 33.85;
  s.entry(3, 3) = 26.97;
  CHECK(average_accuracy(s, 3) == doctest::Approx(37.17).epsilon(0.005 / 37.17));

  s.entry(3, 1) = 43.70;
  s.entry(3, 2) = 41.60;
  s.entry(3, 3) = 27.13;
  CHECK(average_accuracy(s, 3) == doctest::Approx(37.48).epsilon(0.005 / 37.48));

  s.entry(1, 1) = 44.26;
  CHECK(average_accuracy(s, 1) == doctest::Approx(44.26));
}

TEST_CASE("average accuracy is permutation invariant over the row") {
  SMatrix s;
  s.resize(3);
  s.entry(3, 1) = 10;
  s.entry(3, 2) = 70;
  s.entry(3, 3) = 40;
  double a = average_accuracy(s, 3);
  s.entry(3, 1) = 70;
  s.entry(3, 2) = 40;
  s.entry(3, 3) = 10;
  CHECK(average_accuracy(s, 3) == doctest::Approx(a));
}

TEST_CASE("smatrix rejects upper-triangle access") {
  SMatrix s;
  s.resize(3);
  CHECK_THROWS_AS(s.entry(1, 2), EvalError);
  CHECK_THROWS_AS(s.entry(4, 1), EvalError);
  CHECK_THROWS_AS(s.entry(0, 0), EvalError);
}

TEST_CASE("late fusion of one modality equals plain accuracy") {
  ModelConfig c = tiny_config();
  ModelState model = init_model(c);
  std::mt19937_64 rng(7);
  ModalityData mod = make_modality(rng, 16, 3, c.width, c.num_classes);
  CHECK(late_fusion_accuracy(model, {&mod}) ==
        doctest::Approx(eval_accuracy(model, mod, mod.test)));
}

TEST_CASE("late fusion with identical modalities leaves accuracy unchanged") {
  ModelConfig c = tiny_config();
  ModelState model = init_model(c);
  std::mt19937_64 rng(8);
  ModalityData mod = make_modality(rng, 16, 3, c.width, c.num_classes);
  ModalityData copy = mod;
  copy.id = 1;
  CHECK(late_fusion_accuracy(model, {&mod, &copy}) ==
        doctest::Approx(eval_accuracy(model, mod, mod.test)));
}

TEST_CASE("late fusion matches a brute-force average-argmax oracle") {
  ModelConfig c = tiny_config();
  ModelState model = init_model(c);
  std::mt19937_64 rng(9);
  std::vector<ModalityData> mods;
  for (int m = 0; m < 3; ++m) {
    std::mt19937_64 mrng(100 + m);
    ModalityData mod = make_modality(mrng, 50, 3, c.width, c.num_classes, m);
    mods.push_back(std::move(mod));
  }
  std::vector<const ModalityData*> ptrs{&mods[0], &mods[1], &mods[2]};

  int correct = 0;
  for (int i = 0; i < 50; ++i) {
    Eigen::VectorXd avg = Eigen::VectorXd::Zero(c.num_classes);
    for (const auto* m : ptrs) {
      avg += forward(model, FeatureSequence{m->test.features[i], m->id}).logits;
    }
    int best = 0;
    for (int k = 1; k < avg.size(); ++k) {
      if (avg(k) > avg(best)) best = k;
    }
    if (best == mods[0].test.labels[i]) ++correct;
  }
  CHECK(late_fusion_accuracy(model, ptrs) ==
        doctest::Approx(100.0 * correct / 50.0));
}

TEST_CASE("late fusion requires aligned test ids") {
  ModelConfig c = tiny_config();
  ModelState model = init_model(c);
  std::mt19937_64 rng(10);
  ModalityData a = make_modality(rng, 8, 3, c.width, c.num_classes, 0);
  ModalityData b = make_modality(rng, 8, 3, c.width, c.num_classes, 1);
  b.test.ids[3] = 99;
  CHECK_THROWS_AS(late_fusion_accuracy(model, {&a, &b}), DataError);
}

TEST_CASE("finalize_report recomputes AA and enforces consistency") {
  EvalReport r;
  r.method = "seqf";
  r.s.resize(2);
  r.s.entry(1, 1) = 80.0;
  r.s.entry(2, 1) = 60.0;
  r.s.entry(2, 2) = 90.0;
  finalize_report(r);
  REQUIRE(r.aa.size() == 2);
  CHECK(r.aa[0] == doctest::Approx(80.0));
  CHECK(r.aa[1] == doctest::Approx(75.0));

  r.aa[1] = 99.0;  // corrupt the stored AA
  CHECK_THROWS_AS(finalize_report(r), EvalError);
}

TEST_CASE("report JSON round trip preserves all metric fields") {
  EvalReport r;
  r.method = "harmony";
  r.dataset_name = "bench";
  r.phase_order = {"rgb", "flow"};
  r.s.resize(2);
  r.s.entry(1, 1) = 81.25;
  r.s.entry(2, 1) = 64.5;
  r.s.entry(2, 2) = 88.0;
  r.a_multi = 90.5;
  r.seed = 7;
  r.per_class = {{100.0, 50.0}, {75.0, 25.0}};
  finalize_report(r);

  EvalReport back = report_from_json_text(report_to_json(r));
  CHECK(back.method == r.method);
  CHECK(back.phase_order == r.phase_order);
  CHECK(back.s.rows == r.s.rows);
  CHECK(back.aa == r.aa);
  CHECK(back.a_multi == r.a_multi);
  CHECK(back.seed == r.seed);
  CHECK(back.per_class == r.per_class);
}

TEST_CASE("csv and markdown renderings carry two-decimal entries") {
  EvalReport r;
  r.method = "seqf";
  r.dataset_name = "bench";
  r.phase_order = {"rgb", "flow"};
  r.s.resize(2);
  r.s.entry(1, 1) = 81.256;
  r.s.entry(2, 1) = 64.5;
  r.s.entry(2, 2) = 88.0;
  finalize_report(r);

  std::string csv = smatrix_to_csv(r);
  CHECK(csv.find("81.26") != std::string::npos);
  CHECK(csv.find("rgb") != std::string::npos);
  std::string md = report_to_markdown(r);
  CHECK(md.find("64.50") != std::string::npos);
  CHECK(md.find("A_multi") != std::string::npos);
}
