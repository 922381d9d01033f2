#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "l2c/matrix.hpp"
#include "l2c/numerics.hpp"

namespace l2c {

/// A named learnable matrix with its gradient accumulator.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Matrix value);

  void zero_grad();

  std::string name;
  Matrix value;
  Matrix grad;  // same shape as value
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape over Matrix values.
///
/// A non-recording tape evaluates the same graph but keeps no gradients or
/// backward closures, so one forward implementation serves both training and
/// gradient-free inference.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Matrix value);
  /// Like constant() but references `value` instead of copying it.
  Var constant_ref(const Matrix& value);
  /// Binds a parameter as a leaf. Binding the same parameter twice returns the
  /// same node, so gradients from every use accumulate together.
  Var param(Parameter& p);

  /// Seeds d(loss)/d(loss) = 1 and accumulates into every bound parameter's grad.
  void backward(Var loss);

  /// Adds a computed node. `backward` is only stored when recording.
  template <class F>
  Var push(Matrix value, std::initializer_list<Var> inputs, F&& backward) {
    return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::forward<F>(backward));
  }

  template <class F>
  Var push(Matrix value, std::span<const Var> inputs, F&& backward) {
    bool needs = false;
    if (record_) {
      for (const Var& v : inputs) needs = needs || nodes_[v.id_].needs_grad;
    }
    Node& n = nodes_.emplace_back();
    n.value = std::move(value);
    n.needs_grad = needs;
    if (needs) n.backward = Backward(std::forward<F>(backward));
    return Var(this, nodes_.size() - 1);
  }

  const Matrix& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ref ? *n.ref : n.value;
  }
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  bool needs_grad(const Var& v) const { return nodes_[v.id_].needs_grad; }
  /// Gradient accumulator for `v`, zero-allocated on first use.
  Matrix& grad_acc(const Var& v);

 private:
  struct Node {
    Matrix value;
    const Matrix* ref = nullptr;
    Matrix grad;
    bool needs_grad = false;
    Parameter* param = nullptr;
    Backward backward;
  };

  bool record_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> bound_;
};

/// Differentiable operations on tape variables.
namespace ad {

Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);  // a * b^T
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
/// alpha * a + beta, element-wise.
Var affine(Var a, double alpha, double beta);
/// Adds a 1xC row to every row of `a`.
Var add_row(Var a, Var bias);
/// Multiplies row i of `a` (R x C) by w(i, 0), w being R x 1.
Var scale_rows(Var a, Var w);
Var softmax(Var a, Axis axis = Axis::kRows);
/// Row-wise layer norm with 1xC gain and bias.
Var layer_norm(Var a, Var gamma, Var beta, double eps = 1e-5);
Var gelu(Var a);
Var l2_normalize_rows(Var a);
Var sum(Var a);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var slice_cols(Var a, std::size_t begin, std::size_t count);

}  // namespace ad
}  // namespace l2c
