#pragma once

// Central-difference gradient oracle for tests. Independent of the tape: it
// only ever calls the scalar function it is given.

#include "lgran/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

namespace lgran::testing {

inline Tensor central_difference(const std::function<double(const Tensor&)>& f, Tensor x, double h = 1e-5) {
  Tensor g(x.shape(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i];
    const double n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

inline Tensor random_tensor(Tensor::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape), 0.0);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

}  // namespace lgran::testing
