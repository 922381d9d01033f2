#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "l2c/autodiff.hpp"

namespace l2c {

/// Scalar objective. When `with_grad` is true it must also accumulate the
/// analytic gradient into every parameter's `grad` (which the caller zeroes).
using LossFn = std::function<double(bool with_grad)>;

/// Norm-wise comparison for one parameter tensor:
/// ||a - n|| / max(||a||, ||n||, 1e-12).
struct TensorGradError {
  std::string name;
  double rel_error = 0.0;
  double grad_norm = 0.0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;  // worst element
  double max_tensor_rel_error = 0.0;
  std::vector<TensorGradError> tensors;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t elements_checked = 0;
};

/// Compares analytic gradients against central differences over every element
/// of every parameter. Relative error per element is
/// |a - n| / max(|a|, |n|, 1e-12); each tensor is also compared norm-wise.
/// Parameter values are restored on return.
GradCheckResult grad_check(const LossFn& loss, std::span<Parameter* const> params, double eps);

/// Adapts a tape-building function into a LossFn: records and back-propagates
/// when gradients are requested, evaluates on a non-recording tape otherwise.
LossFn tape_loss(std::function<Var(Tape&)> build);

}  // namespace l2c
