#include "lgran/params.hpp"

#include "lgran/errors.hpp"

#include <cmath>

namespace lgran {

ParamId ParamStore::add(std::string name, Tensor init) {
  if (index_.count(name)) throw Error(ErrorKind::kGeneric, "duplicate parameter name: " + name);
  const std::size_t i = values_.size();
  index_.emplace(name, i);
  names_.push_back(std::move(name));
  values_.push_back(std::move(init));
  return ParamId{i};
}

ParamId ParamStore::id(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorKind::kGeneric, "unknown parameter: " + std::string(name));
  return ParamId{it->second};
}

bool ParamStore::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::size_t ParamStore::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

Gradients::Gradients(const ParamStore& store) {
  grads_.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    grads_.emplace_back(store.value(ParamId{i}).shape(), 0.0);
  }
}

void Gradients::accumulate(ParamId id, const Tensor& g) {
  Tensor& dst = grads_.at(id.index);
  if (!dst.same_shape(g)) {
    throw ShapeError("gradient " + g.shape_string() + " vs parameter " + dst.shape_string());
  }
  dst.vec() += g.vec();
}

void Gradients::scale(double s) {
  for (auto& g : grads_) g.vec() *= s;
}

void Gradients::zero() {
  for (auto& g : grads_) g.fill(0.0);
}

Tensor xavier_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t = Tensor::matrix(rows, cols);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

Tensor xavier_uniform_vector(std::size_t n, std::size_t fan_in, std::size_t fan_out,
                             std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(Tensor::Shape{n});
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace lgran
