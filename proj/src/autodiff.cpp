#include "l2c/autodiff.hpp"

#include <cmath>
#include <string>

#include "l2c/errors.hpp"

namespace l2c {

Parameter::Parameter(std::string name_, Matrix value_)
    : name(std::move(name_)), value(std::move(value_)), grad(value.rows(), value.cols()) {}

void Parameter::zero_grad() {
  if (!grad.same_shape(value)) grad = Matrix(value.rows(), value.cols());
  grad.fill(0.0);
}

const Matrix& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Matrix value) {
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant_ref(const Matrix& value) {
  Node& n = nodes_.emplace_back();
  n.ref = &value;
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Var(this, it->second);
  Node& n = nodes_.emplace_back();
  n.ref = &p.value;
  n.needs_grad = record_;
  n.param = &p;
  const std::size_t id = nodes_.size() - 1;
  bound_.emplace(&p, id);
  return Var(this, id);
}

Matrix& Tape::grad_acc(const Var& v) {
  Node& n = nodes_[v.id_];
  if (n.grad.empty()) {
    const Matrix& val = value(v.id_);
    n.grad = Matrix(val.rows(), val.cols());
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (!record_) throw ContractViolation("backward() on a non-recording tape");
  if (loss.tape_ != this) throw ValidationError("backward(): variable belongs to another tape");
  const Matrix& lv = value(loss.id_);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw DimensionError("backward(): loss must be 1x1, got " + lv.shape_string());
  }
  if (!nodes_[loss.id_].needs_grad) return;
  grad_acc(loss)(0, 0) += 1.0;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
  }
  // Parameters accumulate last so a parameter used by several nodes sees the
  // full sum.
  for (const auto& [param, id] : bound_) {
    const Node& n = nodes_[id];
    if (n.grad.empty()) continue;
    auto& p = *const_cast<Parameter*>(param);
    if (!p.grad.same_shape(p.value)) p.grad = Matrix(p.value.rows(), p.value.cols());
    add_acc(n.grad, p.grad);
  }
}

namespace ad {
namespace {

Tape& tape_of(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ValidationError("variables belong to different tapes");
  return a.tape();
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  return t.push(l2c::matmul(a.value(), b.value()), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(a)) matmul_nt_acc(g, b.value(), t.grad_acc(a));
    if (t.needs_grad(b)) matmul_tn_acc(a.value(), g, t.grad_acc(b));
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = tape_of(a, b);
  return t.push(l2c::matmul_nt(a.value(), b.value()), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(a)) matmul_acc(g, b.value(), t.grad_acc(a));
    if (t.needs_grad(b)) matmul_tn_acc(g, a.value(), t.grad_acc(b));
  });
}

Var transpose(Var a) {
  return a.tape().push(l2c::transpose(a.value()), {a}, [a](Tape& t, std::size_t self) {
    add_acc(l2c::transpose(t.grad(self)), t.grad_acc(a));
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  return t.push(l2c::add(a.value(), b.value()), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(a)) add_acc(g, t.grad_acc(a));
    if (t.needs_grad(b)) add_acc(g, t.grad_acc(b));
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  return t.push(l2c::sub(a.value(), b.value()), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(a)) add_acc(g, t.grad_acc(a));
    if (t.needs_grad(b)) add_acc(g, t.grad_acc(b), -1.0);
  });
}

Var scale(Var a, double s) { return affine(a, s, 0.0); }

Var affine(Var a, double alpha, double beta) {
  Matrix out = a.value();
  for (double& v : out.data()) v = alpha * v + beta;
  return a.tape().push(std::move(out), {a}, [a, alpha](Tape& t, std::size_t self) {
    add_acc(t.grad(self), t.grad_acc(a), alpha);
  });
}

Var add_row(Var a, Var bias) {
  Tape& t = tape_of(a, bias);
  const Matrix& av = a.value();
  const Matrix& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != av.cols()) {
    throw DimensionError("add_row: bias must be 1x" + std::to_string(av.cols()) + ", got " +
                         bv.shape_string());
  }
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv(0, c);
  }
  return t.push(std::move(out), {a, bias}, [a, bias](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(a)) add_acc(g, t.grad_acc(a));
    if (t.needs_grad(bias)) {
      Matrix& gb = t.grad_acc(bias);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
    }
  });
}

Var scale_rows(Var a, Var w) {
  Tape& t = tape_of(a, w);
  const Matrix& av = a.value();
  const Matrix& wv = w.value();
  if (wv.rows() != av.rows() || wv.cols() != 1) {
    throw DimensionError("scale_rows: weights must be " + shape_string(av.rows(), 1) + ", got " +
                         wv.shape_string());
  }
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (double& v : out.row(r)) v *= wv(r, 0);
  return t.push(std::move(out), {a, w}, [a, w](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& av = a.value();
    const Matrix& wv = w.value();
    if (t.needs_grad(a)) {
      Matrix& ga = t.grad_acc(a);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) += g(r, c) * wv(r, 0);
    }
    if (t.needs_grad(w)) {
      Matrix& gw = t.grad_acc(w);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < g.cols(); ++c) s += g(r, c) * av(r, c);
        gw(r, 0) += s;
      }
    }
  });
}

Var softmax(Var a, Axis axis) {
  if (axis == Axis::kCols) return transpose(softmax(transpose(a), Axis::kRows));
  return a.tape().push(l2c::softmax(a.value(), Axis::kRows), {a}, [a](Tape& t, std::size_t self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad_acc(a);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

Var layer_norm(Var a, Var gamma, Var beta, double eps) {
  Tape& t = tape_of(a, gamma);
  const Matrix& x = a.value();
  const Matrix& gv = gamma.value();
  const Matrix& bv = beta.value();
  if (gv.rows() != 1 || gv.cols() != x.cols() || !gv.same_shape(bv)) {
    throw DimensionError("layer_norm: gain/bias must be 1x" + std::to_string(x.cols()));
  }
  Matrix xhat = layer_norm_rows(x, eps);
  Matrix inv_std(x.rows(), 1);
  const double n = static_cast<double>(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (double v : x.row(r)) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : x.row(r)) var += (v - mean) * (v - mean);
    inv_std(r, 0) = 1.0 / std::sqrt(var / n + eps);
  }
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = gv(0, c) * xhat(r, c) + bv(0, c);

  return t.push(std::move(out), {a, gamma, beta},
                [a, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                    Tape& t, std::size_t self) {
                  const Matrix& g = t.grad(self);
                  const Matrix& gv = gamma.value();
                  const std::size_t rows = g.rows(), cols = g.cols();
                  if (t.needs_grad(gamma) || t.needs_grad(beta)) {
                    Matrix& gg = t.grad_acc(gamma);
                    Matrix& gb = t.grad_acc(beta);
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t c = 0; c < cols; ++c) {
                        gg(0, c) += g(r, c) * xhat(r, c);
                        gb(0, c) += g(r, c);
                      }
                    }
                  }
                  if (t.needs_grad(a)) {
                    Matrix& ga = t.grad_acc(a);
                    const double n = static_cast<double>(cols);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double mean_d = 0.0, mean_dx = 0.0;
                      for (std::size_t c = 0; c < cols; ++c) {
                        const double d = g(r, c) * gv(0, c);
                        mean_d += d;
                        mean_dx += d * xhat(r, c);
                      }
                      mean_d /= n;
                      mean_dx /= n;
                      for (std::size_t c = 0; c < cols; ++c) {
                        const double d = g(r, c) * gv(0, c);
                        ga(r, c) += inv_std(r, 0) * (d - mean_d - xhat(r, c) * mean_dx);
                      }
                    }
                  }
                });
}

Var gelu(Var a) {
  Matrix out = a.value();
  for (double& v : out.data()) v = l2c::gelu(v);
  return a.tape().push(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& x = a.value();
    Matrix& ga = t.grad_acc(a);
    auto gd = g.data();
    auto xd = x.data();
    auto od = ga.data();
    for (std::size_t i = 0; i < gd.size(); ++i) od[i] += gd[i] * gelu_grad(xd[i]);
  });
}

Var l2_normalize_rows(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  Matrix norms(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (double v : x.row(r)) s += v * v;
    const double nrm = std::sqrt(s);
    if (!(nrm > 0.0)) {
      throw NumericalError("l2_normalize_rows: zero-norm row " + std::to_string(r));
    }
    norms(r, 0) = nrm;
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r, c) / nrm;
  }
  return a.tape().push(std::move(out), {a}, [a, norms = std::move(norms)](Tape& t, std::size_t self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad_acc(a);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += y(r, c) * g(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c)
        ga(r, c) += (g(r, c) - y(r, c) * dot) / norms(r, 0);
    }
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape().push(Matrix(1, 1, s), {a}, [a](Tape& t, std::size_t self) {
    const double g = t.grad(self)(0, 0);
    for (double& v : t.grad_acc(a).data()) v += g;
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ValidationError("concat_rows: no inputs");
  Tape& t = parts.front().tape();
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (&p.tape() != &t) throw ValidationError("concat_rows: mixed tapes");
    if (p.cols() != cols) {
      throw DimensionError("concat_rows: expected width " + std::to_string(cols) + ", got " +
                           std::to_string(p.cols()));
    }
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::size_t at = 0;
  for (const Var& p : parts) {
    auto src = p.value().data();
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(at * cols));
    at += p.rows();
  }
  return t.push(std::move(out), parts, [inputs = std::vector<Var>(parts.begin(), parts.end()), cols](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    std::size_t at = 0;
    for (const Var& p : inputs) {
      const std::size_t n = p.rows() * cols;
      if (t.needs_grad(p)) {
        auto dst = t.grad_acc(p).data();
        auto src = g.data().subspan(at * cols, n);
        for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
      }
      at += p.rows();
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ValidationError("concat_cols: no inputs");
  Tape& t = parts.front().tape();
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: expected height " + std::to_string(rows) + ", got " +
                           std::to_string(p.rows()));
    }
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::size_t at = 0;
  for (const Var& p : parts) {
    const Matrix& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) out(r, at + c) = v(r, c);
    at += v.cols();
  }
  return t.push(std::move(out), parts, [inputs = std::vector<Var>(parts.begin(), parts.end())](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    std::size_t at = 0;
    for (const Var& p : inputs) {
      const std::size_t w = p.cols();
      if (t.needs_grad(p)) {
        Matrix& gp = t.grad_acc(p);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < w; ++c) gp(r, c) += g(r, at + c);
      }
      at += w;
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Matrix& x = a.value();
  if (begin + count > x.rows() || count == 0) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of " + std::to_string(x.rows()) +
                         " rows");
  }
  const auto first = x.data().begin() + static_cast<std::ptrdiff_t>(begin * x.cols());
  Matrix out(count, x.cols(),
             std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * x.cols())));
  return a.tape().push(std::move(out), {a}, [a, begin](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    auto dst = t.grad_acc(a).data().subspan(begin * g.cols(), g.size());
    auto src = g.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Matrix& x = a.value();
  if (begin + count > x.cols() || count == 0) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of " + std::to_string(x.cols()) +
                         " columns");
  }
  Matrix out(x.rows(), count);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = x(r, begin + c);
  return a.tape().push(std::move(out), {a}, [a, begin](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad_acc(a);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) ga(r, begin + c) += g(r, c);
  });
}

}  // namespace ad
}  // namespace l2c
