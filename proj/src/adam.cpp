#include "lgran/adam.hpp"

#include "lgran/errors.hpp"

#include <cmath>

namespace lgran {

AdamState::AdamState(const ParamStore& store, AdamHyper h) : hyper(h) {
  m.reserve(store.size());
  v.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    m.emplace_back(store.value(ParamId{i}).shape(), 0.0);
    v.emplace_back(store.value(ParamId{i}).shape(), 0.0);
  }
}

void adam_step(ParamStore& params, const Gradients& grads, AdamState& state, double lr) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw ShapeError("adam_step: parameter/gradient/state counts differ");
  }
  const double step_lr = lr >= 0.0 ? lr : state.hyper.lr;
  const double b1 = state.hyper.beta1;
  const double b2 = state.hyper.beta2;
  state.t += 1;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamId id{i};
    Tensor& p = params.value(id);
    const Tensor& g = grads.get(id);
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    if (!p.same_shape(g) || !p.same_shape(m)) {
      throw ShapeError("adam_step: " + params.name(id) + " " + p.shape_string() + " vs " + g.shape_string());
    }
    auto pd = p.data();
    auto gd = g.data();
    auto md = m.data();
    auto vd = v.data();
    for (std::size_t k = 0; k < pd.size(); ++k) {
      md[k] = b1 * md[k] + (1.0 - b1) * gd[k];
      vd[k] = b2 * vd[k] + (1.0 - b2) * gd[k] * gd[k];
      const double mhat = md[k] / c1;
      const double vhat = vd[k] / c2;
      pd[k] -= step_lr * mhat / (std::sqrt(vhat) + state.hyper.eps);
    }
  }
}

}  // namespace lgran
