#pragma once

#include <map>

#include "mil/model.hpp"

namespace mil {

// Adaptive moment estimation with decoupled weight decay. Decay applies to
// matrix-shaped parameters only (biases, gains, gates and other vectors and
// scalars are left undecayed).
class AdamW {
 public:
  AdamW(double lr, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8);

  // Reads gradients from the bound vars and updates the backing storages.
  void step(const ParamBindings& binds);

 private:
  struct Slot {
    Mat m, v;
    long t = 0;
  };
  double lr_, wd_, beta1_, beta2_, eps_;
  std::map<Mat*, Slot> slots_;
};

}  // namespace mil
