#include "l2c/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "l2c/errors.hpp"

namespace l2c {
namespace {

void require_product(const Matrix& a, const Matrix& b, std::size_t inner_a, std::size_t inner_b,
                     std::size_t rows, std::size_t cols, const Matrix& out, std::string_view op) {
  if (inner_a != inner_b) {
    throw DimensionError(std::string(op) + ": cannot multiply " + a.shape_string() + " by " +
                         b.shape_string());
  }
  if (out.rows() != rows || out.cols() != cols) {
    throw DimensionError(std::string(op) + ": output is " + out.shape_string() + ", expected " +
                         shape_string(rows, cols));
  }
}

}  // namespace

void matmul_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  require_product(a, b, a.cols(), b.rows(), a.rows(), b.cols(), out, "matmul");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = po + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  require_product(a, b, a.cols(), b.cols(), a.rows(), b.rows(), out, "matmul_nt");
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = pa + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = pb + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      po[i * m + j] += s;
    }
  }
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  require_product(a, b, a.rows(), b.rows(), a.cols(), b.cols(), out, "matmul_tn");
  const std::size_t n = a.cols(), k = a.rows(), m = b.cols();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = pa + p * n;
    const double* brow = pb + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* orow = po + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

void add_acc(const Matrix& a, Matrix& out, double s) {
  require_same_shape(a, out, "add_acc");
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += s * src[i];
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  matmul_acc(a, b, out);
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.rows());
  matmul_nt_acc(a, b, out);
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  Matrix out(a.cols(), b.cols());
  matmul_tn_acc(a, b, out);
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix out = a;
  add_acc(b, out);
  return out;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "sub");
  Matrix out = a;
  add_acc(b, out, -1.0);
  return out;
}

Matrix scale(const Matrix& a, double s) {
  Matrix out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

Matrix softmax(const Matrix& x, Axis axis) {
  require_finite(x, "softmax input");
  if (axis == Axis::kCols) return transpose(softmax(transpose(x), Axis::kRows));
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    auto o = out.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] - mx);
      total += o[c];
    }
    for (double& v : o) v /= total;
  }
  return out;
}

Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v,
                 std::optional<double> scale_opt) {
  if (q.cols() != k.cols()) {
    throw DimensionError("attention: Q is " + q.shape_string() + " and K is " +
                         k.shape_string() + "; column counts must match");
  }
  if (k.rows() != v.rows()) {
    throw DimensionError("attention: K is " + k.shape_string() + " and V is " +
                         v.shape_string() + "; row counts must match");
  }
  const double s = scale_opt.value_or(1.0 / std::sqrt(static_cast<double>(q.cols())));
  if (!(s > 0.0)) throw ValidationError("attention: scale must be positive");
  return matmul(softmax(scale(matmul_nt(q, k), s), Axis::kRows), v);
}

Matrix layer_norm_rows(const Matrix& x, double eps) {
  Matrix out(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    auto o = out.row(r);
    for (std::size_t c = 0; c < in.size(); ++c) o[c] = (in[c] - mean) * inv;
  }
  return out;
}

namespace {
constexpr double kGeluK = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC = 0.044715;
}  // namespace

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluK * (x + kGeluC * x * x * x)));
}

double gelu_grad(double x) {
  const double th = std::tanh(kGeluK * (x + kGeluC * x * x * x));
  return 0.5 * (1.0 + th) +
         0.5 * x * (1.0 - th * th) * kGeluK * (1.0 + 3.0 * kGeluC * x * x);
}

void require_finite(const Matrix& x, std::string_view what) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) {
      if (!std::isfinite(x(r, c))) {
        throw NumericalError(std::string(what) + ": non-finite value at index (" +
                             std::to_string(r) + ", " + std::to_string(c) + ")");
      }
    }
  }
}

void require_same_shape(const Matrix& a, const Matrix& b, std::string_view what) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": expected " + a.shape_string() + ", got " +
                         b.shape_string());
  }
}

}  // namespace l2c
