#pragma once

#include "lgran/tensor.hpp"

#include <cstddef>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace lgran {

/// Index of a named parameter inside a ParamStore.
struct ParamId {
  std::size_t index = static_cast<std::size_t>(-1);
  bool valid() const noexcept { return index != static_cast<std::size_t>(-1); }
  friend bool operator==(ParamId a, ParamId b) noexcept { return a.index == b.index; }
};

/// Ordered collection of named parameter tensors. Insertion order is the
/// canonical order used by checkpoints, the optimizer and gradient checks.
class ParamStore {
 public:
  ParamId add(std::string name, Tensor init);

  ParamId id(std::string_view name) const;
  bool contains(std::string_view name) const;

  Tensor& value(ParamId id) { return values_.at(id.index); }
  const Tensor& value(ParamId id) const { return values_.at(id.index); }
  const std::string& name(ParamId id) const { return names_.at(id.index); }

  std::size_t size() const noexcept { return values_.size(); }
  std::size_t scalar_count() const noexcept;
  ParamId at(std::size_t i) const { return ParamId{i}; }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Per-parameter gradient accumulators aligned with a ParamStore.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParamStore& store);

  void accumulate(ParamId id, const Tensor& g);
  const Tensor& get(ParamId id) const { return grads_.at(id.index); }
  Tensor& get(ParamId id) { return grads_.at(id.index); }
  std::size_t size() const noexcept { return grads_.size(); }
  void scale(double s);
  void zero();

 private:
  std::vector<Tensor> grads_;
};

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng);
Tensor xavier_uniform_vector(std::size_t n, std::size_t fan_in, std::size_t fan_out,
                             std::mt19937_64& rng);

}  // namespace lgran
