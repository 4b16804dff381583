#include "mil/optimizer.hpp"

#include <cmath>

namespace mil {

AdamW::AdamW(double lr, double weight_decay, double beta1, double beta2,
             double eps)
    : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamW::step(const ParamBindings& binds) {
  for (const auto& b : binds) {
    Mat& theta = *b.storage;
    const Mat& g = b.var->grad;
    auto& slot = slots_[b.storage];
    if (slot.t == 0) {
      slot.m = Mat::Zero(theta.rows(), theta.cols());
      slot.v = Mat::Zero(theta.rows(), theta.cols());
    }
    ++slot.t;
    slot.m = beta1_ * slot.m + (1.0 - beta1_) * g;
    slot.v = beta2_ * slot.v + (1.0 - beta2_) * g.cwiseProduct(g);
    double bc1 = 1.0 - std::pow(beta1_, slot.t);
    double bc2 = 1.0 - std::pow(beta2_, slot.t);
    Mat mhat = slot.m / bc1;
    Mat vhat = slot.v / bc2;
    Mat update =
        mhat.cwiseQuotient((vhat.cwiseSqrt().array() + eps_).matrix());
    if (theta.rows() > 1 && theta.cols() > 1) {
      update += wd_ * theta;  // decoupled decay, matrices only
    }
    theta -= lr_ * update;
  }
}

}  // namespace mil
