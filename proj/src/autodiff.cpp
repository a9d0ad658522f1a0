#include "lgran/autodiff.hpp"

#include "lgran/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace lgran::ad {

const Tensor& Var::value() const {
  if (!tape_) throw TapeError("use of an empty Var");
  return tape_->value(id_);
}

const Tensor& BackwardContext::out_value() const { return tape_.value(self_); }
const Tensor& BackwardContext::out_grad() const { return tape_.nodes_[self_].grad; }

const Tensor& BackwardContext::value(std::size_t parent) const {
  return tape_.value(tape_.nodes_[self_].parents.at(parent));
}

Tensor* BackwardContext::grad(std::size_t parent) {
  const int pid = tape_.nodes_[self_].parents.at(parent);
  if (!tape_.nodes_[pid].requires_grad) return nullptr;
  return &tape_.grad_buffer(pid);
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite constant");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::leaf(Tensor value) {
  Var v = constant(std::move(value));
  nodes_.back().requires_grad = true;
  return v;
}

Var Tape::param(ParamId id) {
  if (!params_) throw TapeError("tape has no parameter store");
  auto it = param_nodes_.find(id.index);
  if (it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.external = &params_->value(id);
  n.requires_grad = true;
  n.param = id;
  nodes_.push_back(std::move(n));
  const int nid = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(id.index, nid);
  return Var(this, nid);
}

Var Tape::record(Tensor value, std::vector<int> parents, BackwardFn backward) {
  if (consumed_) throw TapeError("tape already consumed");
  if (!value.all_finite()) throw NumericError("non-finite value produced on tape");
  Node n;
  n.value = std::move(value);
  for (int p : parents) n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

const Tensor& Tape::value(int id) const { return node_value(nodes_.at(id)); }

const Tensor& Tape::grad(Var v) const { return nodes_.at(v.id()).grad; }

Tensor& Tape::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(node_value(n).shape(), 0.0);
  return n.grad;
}

void Tape::backward(Var root) {
  if (consumed_) throw TapeError("tape already consumed");
  if (root.tape() != this) throw TapeError("root belongs to a different tape");
  if (root.value().size() != 1) {
    throw TapeError("backward root must be scalar, got " + root.value().shape_string());
  }
  consumed_ = true;
  if (!nodes_[root.id()].requires_grad) return;
  grad_buffer(root.id()).fill(1.0);
  for (int i = root.id(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    BackwardContext ctx(*this, i);
    n.backward(ctx);
  }
}

void Tape::backward(Var root, Gradients& into) {
  if (into.size() == 0 && params_) into = Gradients(*params_);
  backward(root);
  for (const Node& n : nodes_) {
    if (n.param.valid() && !n.grad.empty()) into.accumulate(n.param, n.grad);
  }
}

namespace {

Tape& same_tape(Var a, Var b) {
  if (!a.valid() || !b.valid() || a.tape() != b.tape()) throw TapeError("operands on different tapes");
  return *a.tape();
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

std::string shapes(const Tensor& a, const Tensor& b) { return a.shape_string() + " vs " + b.shape_string(); }

}  // namespace

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require(a.value().same_shape(b.value()), "add " + shapes(a.value(), b.value()));
  Tensor out = a.value();
  out.vec() += b.value().vec();
  return t.record(std::move(out), {a.id(), b.id()}, [](BackwardContext& c) {
    if (auto* g = c.grad(0)) g->vec() += c.out_grad().vec();
    if (auto* g = c.grad(1)) g->vec() += c.out_grad().vec();
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require(a.value().same_shape(b.value()), "sub " + shapes(a.value(), b.value()));
  Tensor out = a.value();
  out.vec() -= b.value().vec();
  return t.record(std::move(out), {a.id(), b.id()}, [](BackwardContext& c) {
    if (auto* g = c.grad(0)) g->vec() += c.out_grad().vec();
    if (auto* g = c.grad(1)) g->vec() -= c.out_grad().vec();
  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require(a.value().same_shape(b.value()), "mul " + shapes(a.value(), b.value()));
  Tensor out = a.value();
  out.vec().array() *= b.value().vec().array();
  return t.record(std::move(out), {a.id(), b.id()}, [](BackwardContext& c) {
    const auto& g = c.out_grad().vec().array();
    if (auto* ga = c.grad(0)) ga->vec().array() += g * c.value(1).vec().array();
    if (auto* gb = c.grad(1)) gb->vec().array() += g * c.value(0).vec().array();
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  out.vec() *= s;
  return a.tape()->record(std::move(out), {a.id()}, [s](BackwardContext& c) {
    if (auto* g = c.grad(0)) g->vec() += s * c.out_grad().vec();
  });
}

Var mul_scalar(Var x, Var s) {
  Tape& t = same_tape(x, s);
  require(s.value().size() == 1, "mul_scalar expects a single-element scale, got " + s.value().shape_string());
  Tensor out = x.value();
  const double sv = s.value()[0];
  out.vec() *= sv;
  return t.record(std::move(out), {x.id(), s.id()}, [](BackwardContext& c) {
    const auto& g = c.out_grad().vec();
    if (auto* gx = c.grad(0)) gx->vec() += c.value(1)[0] * g;
    if (auto* gs = c.grad(1)) (*gs)[0] += g.dot(c.value(0).vec());
  });
}

Var tanh(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = std::tanh(v);
  return x.tape()->record(std::move(out), {x.id()}, [](BackwardContext& c) {
    if (auto* g = c.grad(0)) {
      const auto& y = c.out_value().vec().array();
      g->vec().array() += c.out_grad().vec().array() * (1.0 - y * y);
    }
  });
}

Var sigmoid(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = 1.0 / (1.0 + std::exp(-v));
  return x.tape()->record(std::move(out), {x.id()}, [](BackwardContext& c) {
    if (auto* g = c.grad(0)) {
      const auto& y = c.out_value().vec().array();
      g->vec().array() += c.out_grad().vec().array() * y * (1.0 - y);
    }
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return x.tape()->record(std::move(out), {x.id()}, [](BackwardContext& c) {
    if (auto* g = c.grad(0)) {
      const auto in = c.value(0).data();
      const auto go = c.out_grad().data();
      auto gi = g->data();
      for (std::size_t i = 0; i < gi.size(); ++i) {
        if (in[i] > 0.0) gi[i] += go[i];
      }
    }
  });
}

Var linear(Var x, Var w, Var b) {
  Tape& t = same_tape(x, w);
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  require(W.rank() == 2, "linear weight must be rank 2, got " + W.shape_string());
  require(X.rank() == 1 || X.rank() == 2, "linear input must be rank 1 or 2");
  require(X.cols() == W.cols(), "linear input " + shapes(X, W));
  const bool has_bias = b.valid();
  if (has_bias) {
    same_tape(x, b);
    require(b.value().rank() == 1 && b.value().size() == W.rows(), "linear bias " + shapes(b.value(), W));
  }
  Tensor out = X.rank() == 2 ? Tensor::matrix(X.rows(), W.rows()) : Tensor(Tensor::Shape{W.rows()});
  out.mat().noalias() = X.mat() * W.mat().transpose();
  if (has_bias) out.mat().rowwise() += b.value().vec().transpose();
  std::vector<int> parents{x.id(), w.id()};
  if (has_bias) parents.push_back(b.id());
  return t.record(std::move(out), std::move(parents), [has_bias](BackwardContext& c) {
    const auto G = c.out_grad().mat();
    if (auto* gx = c.grad(0)) gx->mat().noalias() += G * c.value(1).mat();
    if (auto* gw = c.grad(1)) gw->mat().noalias() += G.transpose() * c.value(0).mat();
    if (has_bias) {
      if (auto* gb = c.grad(2)) gb->vec() += G.colwise().sum().transpose();
    }
  });
}

Var matvec(Var w, Var x) {
  require(x.value().rank() == 1, "matvec expects a vector, got " + x.value().shape_string());
  return linear(x, w);
}

Var add_bias(Var x, Var b) {
  Tape& t = same_tape(x, b);
  const Tensor& X = x.value();
  require(b.value().rank() == 1 && b.value().size() == X.cols(), "add_bias " + shapes(X, b.value()));
  Tensor out = X;
  out.mat().rowwise() += b.value().vec().transpose();
  return t.record(std::move(out), {x.id(), b.id()}, [](BackwardContext& c) {
    if (auto* gx = c.grad(0)) gx->vec() += c.out_grad().vec();
    if (auto* gb = c.grad(1)) gb->vec() += c.out_grad().mat().colwise().sum().transpose();
  });
}

Var dot(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require(a.value().rank() == 1 && a.value().same_shape(b.value()), "dot " + shapes(a.value(), b.value()));
  const double v = a.value().vec().dot(b.value().vec());
  return t.record(Tensor::scalar(v), {a.id(), b.id()}, [](BackwardContext& c) {
    const double g = c.out_grad()[0];
    if (auto* ga = c.grad(0)) ga->vec() += g * c.value(1).vec();
    if (auto* gb = c.grad(1)) gb->vec() += g * c.value(0).vec();
  });
}

Var rows_dot(Var x, Var y) {
  Tape& t = same_tape(x, y);
  const Tensor& X = x.value();
  const Tensor& Y = y.value();
  require(X.rank() == 2 && Y.rank() == 1 && X.cols() == Y.size(), "rows_dot " + shapes(X, Y));
  Tensor out(Tensor::Shape{X.rows()});
  out.vec().noalias() = X.mat() * Y.vec();
  return t.record(std::move(out), {x.id(), y.id()}, [](BackwardContext& c) {
    const auto& g = c.out_grad().vec();
    if (auto* gx = c.grad(0)) gx->mat().noalias() += g * c.value(1).vec().transpose();
    if (auto* gy = c.grad(1)) gy->vec().noalias() += c.value(0).mat().transpose() * g;
  });
}

Var weighted_sum_rows(Var a, Var x) {
  Tape& t = same_tape(a, x);
  const Tensor& A = a.value();
  const Tensor& X = x.value();
  require(A.rank() == 1 && X.rank() == 2 && A.size() == X.rows(), "weighted_sum_rows " + shapes(A, X));
  Tensor out(Tensor::Shape{X.cols()});
  out.vec().noalias() = X.mat().transpose() * A.vec();
  return t.record(std::move(out), {a.id(), x.id()}, [](BackwardContext& c) {
    const auto& g = c.out_grad().vec();
    if (auto* ga = c.grad(0)) ga->vec().noalias() += c.value(1).mat() * g;
    if (auto* gx = c.grad(1)) gx->mat().noalias() += c.value(0).vec() * g.transpose();
  });
}

Var scale_rows(Var x, Var a) {
  Tape& t = same_tape(x, a);
  const Tensor& X = x.value();
  const Tensor& A = a.value();
  require(X.rank() == 2 && A.rank() == 1 && A.size() == X.rows(), "scale_rows " + shapes(X, A));
  Tensor out = X;
  out.mat().array().colwise() *= A.vec().array();
  return t.record(std::move(out), {x.id(), a.id()}, [](BackwardContext& c) {
    const auto G = c.out_grad().mat();
    if (auto* gx = c.grad(0)) {
      gx->mat().array() += G.array().colwise() * c.value(1).vec().array();
    }
    if (auto* ga = c.grad(1)) {
      ga->vec() += G.cwiseProduct(c.value(0).mat()).rowwise().sum();
    }
  });
}

Var concat(std::span<const Var> parts) {
  require(!parts.empty(), "concat of nothing");
  Tape& t = *parts.front().tape();
  std::vector<int> parents;
  std::vector<std::size_t> sizes;
  std::vector<double> data;
  for (const Var& p : parts) {
    same_tape(parts.front(), p);
    require(p.value().rank() <= 1, "concat expects vectors, got " + p.value().shape_string());
    parents.push_back(p.id());
    sizes.push_back(p.value().size());
    data.insert(data.end(), p.value().values().begin(), p.value().values().end());
  }
  return t.record(Tensor::vector(std::move(data)), std::move(parents), [sizes](BackwardContext& c) {
    const auto g = c.out_grad().data();
    std::size_t off = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      if (auto* gi = c.grad(i)) {
        auto d = gi->data();
        for (std::size_t k = 0; k < sizes[i]; ++k) d[k] += g[off + k];
      }
      off += sizes[i];
    }
  });
}

Var concat_cols(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.rank() == 2 && B.rank() == 2 && A.rows() == B.rows(), "concat_cols " + shapes(A, B));
  const std::size_t p = A.cols();
  const std::size_t q = B.cols();
  Tensor out = Tensor::matrix(A.rows(), p + q);
  if (A.rows() > 0) {
    out.mat().leftCols(p) = A.mat();
    out.mat().rightCols(q) = B.mat();
  }
  return t.record(std::move(out), {a.id(), b.id()}, [p, q](BackwardContext& c) {
    const auto G = c.out_grad().mat();
    if (auto* ga = c.grad(0)) ga->mat() += G.leftCols(p);
    if (auto* gb = c.grad(1)) gb->mat() += G.rightCols(q);
  });
}

Var slice(Var x, std::size_t start, std::size_t len) {
  const Tensor& X = x.value();
  require(X.rank() == 1 && start + len <= X.size(), "slice out of range on " + X.shape_string());
  std::vector<double> data(X.values().begin() + start, X.values().begin() + start + len);
  return x.tape()->record(Tensor::vector(std::move(data)), {x.id()}, [start](BackwardContext& c) {
    if (auto* g = c.grad(0)) {
      const auto go = c.out_grad().data();
      auto gi = g->data();
      for (std::size_t k = 0; k < go.size(); ++k) gi[start + k] += go[k];
    }
  });
}

Var stack_rows(std::span<const Var> rows) {
  require(!rows.empty(), "stack_rows of nothing");
  Tape& t = *rows.front().tape();
  const std::size_t d = rows.front().value().size();
  Tensor out = Tensor::matrix(rows.size(), d);
  std::vector<int> parents;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    same_tape(rows.front(), rows[i]);
    require(rows[i].value().rank() == 1 && rows[i].value().size() == d, "stack_rows ragged input");
    std::copy(rows[i].value().values().begin(), rows[i].value().values().end(), out.data().begin() + i * d);
    parents.push_back(rows[i].id());
  }
  return t.record(std::move(out), std::move(parents), [d](BackwardContext& c) {
    const auto g = c.out_grad().data();
    const std::size_t n = c.out_grad().rows();
    for (std::size_t i = 0; i < n; ++i) {
      if (auto* gi = c.grad(i)) {
        auto dst = gi->data();
        for (std::size_t k = 0; k < d; ++k) dst[k] += g[i * d + k];
      }
    }
  });
}

Var row(Var x, std::size_t i) {
  const Tensor& X = x.value();
  require(X.rank() == 2 && i < X.rows(), "row index out of range on " + X.shape_string());
  const std::size_t d = X.cols();
  std::vector<double> data(X.values().begin() + i * d, X.values().begin() + (i + 1) * d);
  return x.tape()->record(Tensor::vector(std::move(data)), {x.id()}, [i, d](BackwardContext& c) {
    if (auto* g = c.grad(0)) {
      const auto go = c.out_grad().data();
      auto gi = g->data();
      for (std::size_t k = 0; k < d; ++k) gi[i * d + k] += go[k];
    }
  });
}

Var gather_rows(Var x, std::span<const std::size_t> index) {
  const Tensor& X = x.value();
  require(X.rank() == 2, "gather_rows expects a matrix, got " + X.shape_string());
  const std::size_t d = X.cols();
  Tensor out = Tensor::matrix(index.size(), d);
  for (std::size_t k = 0; k < index.size(); ++k) {
    require(index[k] < X.rows(), "gather_rows index out of range");
    std::copy_n(X.values().begin() + index[k] * d, d, out.data().begin() + k * d);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return x.tape()->record(std::move(out), {x.id()}, [idx, d](BackwardContext& c) {
    if (auto* g = c.grad(0)) {
      const auto go = c.out_grad().data();
      auto gi = g->data();
      for (std::size_t k = 0; k < idx.size(); ++k) {
        for (std::size_t j = 0; j < d; ++j) gi[idx[k] * d + j] += go[k * d + j];
      }
    }
  });
}

Var sum(Var x) {
  const double v = x.value().vec().sum();
  return x.tape()->record(Tensor::scalar(v), {x.id()}, [](BackwardContext& c) {
    if (auto* g = c.grad(0)) g->vec().array() += c.out_grad()[0];
  });
}

Var sum_rows(Var x) {
  const Tensor& X = x.value();
  require(X.rank() == 2, "sum_rows expects a matrix, got " + X.shape_string());
  Tensor out(Tensor::Shape{X.cols()});
  if (X.rows() > 0) out.vec() = X.mat().colwise().sum().transpose();
  return x.tape()->record(std::move(out), {x.id()}, [](BackwardContext& c) {
    if (auto* g = c.grad(0)) g->mat().rowwise() += c.out_grad().vec().transpose();
  });
}

namespace {

void softmax_inplace(std::span<double> v) {
  if (v.empty()) return;
  const double m = *std::max_element(v.begin(), v.end());
  double z = 0.0;
  for (auto& e : v) {
    e = std::exp(e - m);
    z += e;
  }
  for (auto& e : v) e /= z;
}

}  // namespace

Var softmax(Var x) {
  const Tensor& X = x.value();
  require(X.rank() == 1 && X.size() > 0, "softmax expects a nonempty vector, got " + X.shape_string());
  Tensor out = X;
  softmax_inplace(out.data());
  return x.tape()->record(std::move(out), {x.id()}, [](BackwardContext& c) {
    if (auto* g = c.grad(0)) {
      const auto& y = c.out_value().vec();
      const auto& go = c.out_grad().vec();
      const double s = go.dot(y);
      g->vec().array() += y.array() * (go.array() - s);
    }
  });
}

Var log_softmax(Var x) {
  const Tensor& X = x.value();
  require(X.rank() == 1 && X.size() > 0, "log_softmax expects a nonempty vector, got " + X.shape_string());
  const double m = X.vec().maxCoeff();
  const double lse = m + std::log((X.vec().array() - m).exp().sum());
  Tensor out = X;
  out.vec().array() -= lse;
  return x.tape()->record(std::move(out), {x.id()}, [](BackwardContext& c) {
    if (auto* g = c.grad(0)) {
      const auto& go = c.out_grad().vec();
      const double s = go.sum();
      g->vec().array() += go.array() - c.out_value().vec().array().exp() * s;
    }
  });
}

Var pick(Var x, std::size_t i) {
  require(i < x.value().size(), "pick index " + std::to_string(i) + " out of range on " + x.value().shape_string());
  return x.tape()->record(Tensor::scalar(x.value()[i]), {x.id()}, [i](BackwardContext& c) {
    if (auto* g = c.grad(0)) (*g)[i] += c.out_grad()[0];
  });
}

namespace {

void check_offsets(std::span<const std::size_t> offsets, std::size_t n, const char* op) {
  require(!offsets.empty() && offsets.front() == 0 && offsets.back() == n,
          std::string(op) + ": segment offsets do not cover the input");
  require(std::is_sorted(offsets.begin(), offsets.end()), std::string(op) + ": offsets not monotone");
}

}  // namespace

Var segment_softmax(Var scores, std::span<const std::size_t> offsets) {
  const Tensor& S = scores.value();
  require(S.rank() == 1, "segment_softmax expects a vector, got " + S.shape_string());
  check_offsets(offsets, S.size(), "segment_softmax");
  Tensor out = S;
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    softmax_inplace(out.data().subspan(offsets[s], offsets[s + 1] - offsets[s]));
  }
  std::vector<std::size_t> off(offsets.begin(), offsets.end());
  return scores.tape()->record(std::move(out), {scores.id()}, [off](BackwardContext& c) {
    if (auto* g = c.grad(0)) {
      const auto y = c.out_value().data();
      const auto go = c.out_grad().data();
      auto gi = g->data();
      for (std::size_t s = 0; s + 1 < off.size(); ++s) {
        double dotp = 0.0;
        for (std::size_t e = off[s]; e < off[s + 1]; ++e) dotp += go[e] * y[e];
        for (std::size_t e = off[s]; e < off[s + 1]; ++e) gi[e] += y[e] * (go[e] - dotp);
      }
    }
  });
}

Var segment_weighted_sum(Var w, Var x, std::span<const std::size_t> offsets) {
  Tape& t = same_tape(w, x);
  const Tensor& Wt = w.value();
  const Tensor& X = x.value();
  require(Wt.rank() == 1 && X.rank() == 2 && Wt.size() == X.rows(), "segment_weighted_sum " + shapes(Wt, X));
  check_offsets(offsets, Wt.size(), "segment_weighted_sum");
  const std::size_t segments = offsets.size() - 1;
  const std::size_t d = X.cols();
  Tensor out = Tensor::matrix(segments, d);
  for (std::size_t s = 0; s < segments; ++s) {
    for (std::size_t e = offsets[s]; e < offsets[s + 1]; ++e) {
      out.mat().row(s) += Wt[e] * X.mat().row(e);
    }
  }
  std::vector<std::size_t> off(offsets.begin(), offsets.end());
  return t.record(std::move(out), {w.id(), x.id()}, [off](BackwardContext& c) {
    const auto G = c.out_grad().mat();
    auto* gw = c.grad(0);
    auto* gx = c.grad(1);
    const Tensor& Wv = c.value(0);
    const Tensor& Xv = c.value(1);
    for (std::size_t s = 0; s + 1 < off.size(); ++s) {
      for (std::size_t e = off[s]; e < off[s + 1]; ++e) {
        if (gw) (*gw)[e] += G.row(s).dot(Xv.mat().row(e));
        if (gx) gx->mat().row(e) += Wv[e] * G.row(s);
      }
    }
  });
}

Var dropout(Var x, double rate, Mode mode, std::mt19937_64& rng) {
  if (mode == Mode::kEval || rate <= 0.0) return x;
  require(rate < 1.0, "dropout rate must be < 1");
  Tensor mask(x.value().shape(), 0.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double keep = 1.0 / (1.0 - rate);
  for (auto& m : mask.data()) m = u(rng) >= rate ? keep : 0.0;
  Tensor out = x.value();
  out.vec().array() *= mask.vec().array();
  return x.tape()->record(std::move(out), {x.id()}, [mask = std::move(mask)](BackwardContext& c) {
    if (auto* g = c.grad(0)) g->vec().array() += c.out_grad().vec().array() * mask.vec().array();
  });
}

namespace {

// Normalizes the rows of `in` (rows x d). `xhat` and `inv_std` are saved for
// the backward pass.
void normalize_rows(const RowMatrix& in, double eps, RowMatrix& xhat, Eigen::VectorXd& inv_std) {
  const Eigen::Index n = in.rows();
  const Eigen::Index d = in.cols();
  xhat.resize(n, d);
  inv_std.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = in.row(i).mean();
    const double var = (in.row(i).array() - mu).square().mean();
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (in.row(i).array() - mu) * inv_std[i];
  }
}

RowMatrix normalize_rows_backward(const RowMatrix& gxhat, const RowMatrix& xhat, const Eigen::VectorXd& inv_std) {
  RowMatrix gx(gxhat.rows(), gxhat.cols());
  for (Eigen::Index i = 0; i < gxhat.rows(); ++i) {
    const double mean_g = gxhat.row(i).mean();
    const double mean_gx = gxhat.row(i).cwiseProduct(xhat.row(i)).mean();
    gx.row(i) = inv_std[i] * (gxhat.row(i).array() - mean_g - xhat.row(i).array() * mean_gx);
  }
  return gx;
}

Var affine_norm(Var x, Var gamma, Var beta, double eps, bool across_rows) {
  Tape& t = same_tape(x, gamma);
  same_tape(x, beta);
  const Tensor& X = x.value();
  require(X.rank() == 1 || X.rank() == 2, "norm input rank");
  const std::size_t d = X.cols();
  require(gamma.value().rank() == 1 && gamma.value().size() == d && beta.value().same_shape(gamma.value()),
          "norm affine params " + shapes(gamma.value(), X));
  // Batch statistics are per column: normalize the transpose row-wise.
  if (X.size() == 0) {
    return t.record(Tensor(X.shape(), 0.0), {x.id(), gamma.id(), beta.id()}, [](BackwardContext&) {});
  }
  RowMatrix in = across_rows ? RowMatrix(X.mat().transpose()) : RowMatrix(X.mat());
  RowMatrix xhat;
  Eigen::VectorXd inv_std;
  normalize_rows(in, eps, xhat, inv_std);
  if (across_rows) xhat.transposeInPlace();
  Tensor out(X.shape(), 0.0);
  out.mat() = xhat;
  out.mat().array().rowwise() *= gamma.value().vec().transpose().array();
  out.mat().rowwise() += beta.value().vec().transpose();
  return t.record(std::move(out), {x.id(), gamma.id(), beta.id()},
                  [xhat = std::move(xhat), inv_std = std::move(inv_std), across_rows](BackwardContext& c) {
                    const auto G = c.out_grad().mat();
                    if (auto* gg = c.grad(1)) gg->vec() += G.cwiseProduct(xhat).colwise().sum().transpose();
                    if (auto* gb = c.grad(2)) gb->vec() += G.colwise().sum().transpose();
                    if (auto* gx = c.grad(0)) {
                      RowMatrix gxhat = G.array().rowwise() * c.value(1).vec().transpose().array();
                      if (across_rows) {
                        RowMatrix gt = normalize_rows_backward(gxhat.transpose(), xhat.transpose(), inv_std);
                        gx->mat() += gt.transpose();
                      } else {
                        gx->mat() += normalize_rows_backward(gxhat, xhat, inv_std);
                      }
                    }
                  });
}

}  // namespace

Var layer_norm(Var x, Var gamma, Var beta, double eps) { return affine_norm(x, gamma, beta, eps, false); }

Var batch_norm(Var x, Var gamma, Var beta, double eps) { return affine_norm(x, gamma, beta, eps, true); }

}  // namespace lgran::ad
