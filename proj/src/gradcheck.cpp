#include "l2c/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "l2c/errors.hpp"

namespace l2c {

GradCheckResult grad_check(const LossFn& loss, std::span<Parameter* const> params, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw ValidationError("grad_check: eps must lie in [1e-7, 1e-3]");
  }
  for (Parameter* p : params) p->zero_grad();
  const double base = loss(true);
  if (!std::isfinite(base)) throw NumericalError("grad_check: loss is non-finite at the base point");

  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    auto values = p.value.data();
    double diff_sq = 0.0, a_sq = 0.0, n_sq = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double plus = loss(false);
      values[i] = saved - eps;
      const double minus = loss(false);
      values[i] = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw NumericalError("grad_check: loss non-finite when perturbing " + p.name + "[" +
                             std::to_string(i) + "]");
      }
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[k].data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
      const double rel = std::abs(a - numeric) / denom;
      diff_sq += (a - numeric) * (a - numeric);
      a_sq += a * a;
      n_sq += numeric * numeric;
      ++result.elements_checked;
      if (rel > result.max_rel_error || result.worst_parameter.empty()) {
        result.max_rel_error = rel;
        result.worst_parameter = p.name;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
    const double norm = std::sqrt(a_sq);
    const double tensor_rel = std::sqrt(diff_sq) / std::max({norm, std::sqrt(n_sq), 1e-12});
    result.tensors.push_back({p.name, tensor_rel, norm});
    result.max_tensor_rel_error = std::max(result.max_tensor_rel_error, tensor_rel);
  }
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->grad = analytic[k];
  return result;
}

LossFn tape_loss(std::function<Var(Tape&)> build) {
  return [build = std::move(build)](bool with_grad) {
    Tape tape(with_grad);
    Var loss = build(tape);
    if (with_grad) tape.backward(loss);
    return loss.value()(0, 0);
  };
}

}  // namespace l2c
