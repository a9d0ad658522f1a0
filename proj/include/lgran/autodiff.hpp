#pragma once

#include "lgran/params.hpp"
#include "lgran/tensor.hpp"

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <unordered_map>
#include <vector>

namespace lgran {

enum class Mode { kTrain, kEval };

enum class NormMode { kNone, kBatch, kLayer };

namespace ad {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  Tape* tape() const noexcept { return tape_; }
  int id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Passed to each op's backward rule. Parent accumulators are allocated lazily
/// and are null for parents that do not require gradients.
class BackwardContext {
 public:
  BackwardContext(Tape& tape, int self) : tape_(tape), self_(self) {}
  const Tensor& out_value() const;
  const Tensor& out_grad() const;
  const Tensor& value(std::size_t parent) const;
  Tensor* grad(std::size_t parent);

 private:
  Tape& tape_;
  int self_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

/// Records a forward computation for one reverse pass.
///
/// Nodes are appended in execution order, so the record is topologically
/// sorted by construction. Parameters enter through param() and are cached:
/// every use of the same parameter on one tape shares a single leaf, which
/// makes fan-out accumulation fall out of the ordinary backward sweep.
class Tape {
 public:
  explicit Tape(const ParamStore* params = nullptr) : params_(params) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);  // requires grad; read back with grad()
  Var param(ParamId id);

  Var record(Tensor value, std::vector<int> parents, BackwardFn backward);

  /// Reverse sweep from a scalar root. Parameter gradients are added into
  /// `into` (allocated with the store's shapes when empty).
  void backward(Var root, Gradients& into);
  void backward(Var root);

  const Tensor& value(int id) const;
  const Tensor& grad(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }
  const ParamStore* params() const noexcept { return params_; }

 private:
  friend class BackwardContext;

  struct Node {
    Tensor value;
    const Tensor* external = nullptr;  // parameter value, not copied
    Tensor grad;
    std::vector<int> parents;
    BackwardFn backward;
    bool requires_grad = false;
    ParamId param;
  };

  const Tensor& node_value(const Node& n) const { return n.external ? *n.external : n.value; }
  Tensor& grad_buffer(int id);

  const ParamStore* params_;
  std::vector<Node> nodes_;
  std::unordered_map<std::size_t, int> param_nodes_;
  bool consumed_ = false;
};

// Elementwise and structural primitives. All shape errors throw ShapeError;
// any non-finite forward value throws NumericError.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var mul_scalar(Var x, Var s);  // x * s for a rank-0 s
Var tanh(Var x);
Var sigmoid(Var x);
Var relu(Var x);

/// X W^T + b for X of shape [n, in] (or a length-in vector), W of shape
/// [out, in], optional b of length out.
Var linear(Var x, Var w, Var b = {});
Var matvec(Var w, Var x);
Var add_bias(Var x, Var b);  // b added to every row of x
Var dot(Var a, Var b);
Var rows_dot(Var x, Var y);           // [n, d] . [d] -> [n]
Var weighted_sum_rows(Var a, Var x);  // sum_t a_t x_t: [T] , [T, d] -> [d]
Var scale_rows(Var x, Var a);         // row i scaled by a_i

Var concat(std::span<const Var> parts);  // rank-1 pieces
Var concat_cols(Var a, Var b);           // [n, p] | [n, q] -> [n, p + q]
Var slice(Var x, std::size_t start, std::size_t len);
Var stack_rows(std::span<const Var> rows);
Var row(Var x, std::size_t i);
Var gather_rows(Var x, std::span<const std::size_t> index);

Var sum(Var x);
Var sum_rows(Var x);  // [n, d] -> [d]
Var softmax(Var x);
Var log_softmax(Var x);
Var pick(Var x, std::size_t i);

/// Softmax within contiguous segments [offsets[s], offsets[s+1]) of a score
/// vector. Empty segments contribute nothing.
Var segment_softmax(Var scores, std::span<const std::size_t> offsets);
/// out[s] = sum_{e in segment s} w[e] * x[e]; empty segments give zero rows.
Var segment_weighted_sum(Var w, Var x, std::span<const std::size_t> offsets);

Var dropout(Var x, double rate, Mode mode, std::mt19937_64& rng);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var batch_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

}  // namespace ad
}  // namespace lgran
