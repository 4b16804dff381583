#pragma once

#include "mil/autograd.hpp"
#include "mil/config.hpp"

namespace mil {

// Front-end affine map applied per token: token -> token * W^T + b.
struct AggregationModule {
  Mat weight;  // d x d
  Mat bias;    // 1 x d
};

// Low-rank gated adapter; effective weight is gate * B * A (d x d) but it is
// never materialized on the training path.
struct GatedAdapter {
  Mat a;        // r x d
  Mat b;        // d x r
  double gate;  // omega

  Mat effective() const { return gate * b * a; }
};

Mat aggregate(const AggregationModule& m, const Mat& tokens);

// tokens * (gate * B * A), computed as two rank-r multiplies.
Mat adapter_apply(const GatedAdapter& ad, const Mat& tokens);

// Projection-free dot-product attention: historical tokens query current
// tokens; output rows are convex combinations of current tokens.
Mat cross_attention_fuse(const Mat& f_hist, const Mat& f_cur);

// Folds the adapter into the module so that one affine map reproduces the
// residual composition  aggregate(m, f) + adapter_apply(a, aggregate(m, f)).
// MergeMode::kMultiplicative instead reproduces the bare product path.
AggregationModule merge_adapter(const AggregationModule& m,
                                const GatedAdapter& ad,
                                MergeMode mode = MergeMode::kResidual);

// ---- graph versions ----------------------------------------------------

Var aggregate_g(Tape& t, Var weight, Var bias, Var tokens);
Var adapter_apply_g(Tape& t, Var a, Var b, Var gate, Var tokens);
Var cross_attention_fuse_g(Tape& t, Var f_hist, Var f_cur);

}  // namespace mil
