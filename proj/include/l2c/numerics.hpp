#pragma once

#include <optional>
#include <string_view>

#include "l2c/matrix.hpp"

namespace l2c {

enum class Axis {
  kRows,  // normalize each row (reduce across columns)
  kCols,  // normalize each column (reduce across rows)
};

// Plain dense kernels. All are pure functions of their inputs.

Matrix matmul(const Matrix& a, const Matrix& b);     // a * b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);

// Accumulating variants used by backward passes: out += ...
void matmul_acc(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out);
void add_acc(const Matrix& a, Matrix& out, double s = 1.0);

/// Max-subtracted softmax. `axis` selects which slices sum to one.
Matrix softmax(const Matrix& x, Axis axis = Axis::kRows);

/// softmax(scale * Q K^T) V, softmax over keys. Default scale is 1/sqrt(d).
Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v,
                 std::optional<double> scale = std::nullopt);

/// Per-row standardization (no affine); `eps` is added to the variance.
Matrix layer_norm_rows(const Matrix& x, double eps = 1e-5);

double gelu(double x);
double gelu_grad(double x);

/// Throws NumericalError naming the first non-finite element.
void require_finite(const Matrix& x, std::string_view what);

void require_same_shape(const Matrix& a, const Matrix& b, std::string_view what);

}  // namespace l2c
