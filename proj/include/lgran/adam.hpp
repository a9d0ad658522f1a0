#pragma once

#include "lgran/params.hpp"

#include <cstdint>
#include <vector>

namespace lgran {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment accumulators, one pair per parameter.
struct AdamState {
  AdamHyper hyper;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t t = 0;

  AdamState() = default;
  AdamState(const ParamStore& store, AdamHyper h);
};

/// Bias-corrected Adam update in place. `lr` overrides hyper.lr when >= 0 so a
/// schedule can drive the step size.
void adam_step(ParamStore& params, const Gradients& grads, AdamState& state, double lr = -1.0);

}  // namespace lgran
