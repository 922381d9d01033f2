#include <doctest.h>

#include <cmath>
#include <functional>

#include "l2c/autodiff.hpp"
#include "l2c/errors.hpp"
#include "l2c/gradcheck.hpp"
#include "support.hpp"

using namespace l2c;
using namespace l2c::testing;

namespace {

// Scalar probe sum(f(x) * R) with a fixed random R, so every output element
// contributes to the gradient with a distinct weight.
double check_op(std::vector<Parameter*> params, const std::function<Var(Tape&)>& f, Rng& rng) {
  Matrix weights;
  {
    Tape probe(false);
    const Matrix& out = f(probe).value();
    weights = random_matrix(out.rows(), out.cols(), rng);
  }
  auto loss = tape_loss([&](Tape& t) {
    Var y = f(t);
    Var w = t.constant(weights);
    Var prod = t.push(Matrix(1, 1, [&] {
      double s = 0.0;
      for (std::size_t i = 0; i < weights.data().size(); ++i) s += y.value().data()[i] * weights.data()[i];
      return s;
    }()), {y}, [y, weights](Tape& tape, std::size_t self) {
      add_acc(weights, tape.grad_acc(y), tape.grad(self)(0, 0));
    });
    (void)w;
    return prod;
  });
  return grad_check(loss, params, 1e-5).max_rel_error;
}

}  // namespace

TEST_CASE("every primitive passes a finite-difference check") {
  Rng rng(21);
  Parameter a("a", random_matrix(3, 4, rng));
  Parameter b("b", random_matrix(4, 2, rng));
  Parameter c("c", random_matrix(3, 4, rng));
  Parameter bias("bias", random_matrix(1, 4, rng));
  Parameter w("w", random_matrix(3, 1, rng));
  Parameter gain("gain", random_matrix(1, 4, rng));

  CHECK(check_op({&a, &b}, [&](Tape& t) { return ad::matmul(t.param(a), t.param(b)); }, rng) < 1e-6);
  CHECK(check_op({&a, &c}, [&](Tape& t) { return ad::matmul_nt(t.param(a), t.param(c)); }, rng) < 1e-6);
  CHECK(check_op({&a}, [&](Tape& t) { return ad::transpose(t.param(a)); }, rng) < 1e-6);
  CHECK(check_op({&a, &c}, [&](Tape& t) { return ad::sub(ad::add(t.param(a), t.param(c)), ad::scale(t.param(c), 3.0)); }, rng) < 1e-6);
  CHECK(check_op({&a}, [&](Tape& t) { return ad::affine(t.param(a), -2.0, 1.0); }, rng) < 1e-6);
  CHECK(check_op({&a, &bias}, [&](Tape& t) { return ad::add_row(t.param(a), t.param(bias)); }, rng) < 1e-6);
  CHECK(check_op({&a, &w}, [&](Tape& t) { return ad::scale_rows(t.param(a), t.param(w)); }, rng) < 1e-6);
  CHECK(check_op({&a}, [&](Tape& t) { return ad::softmax(t.param(a), Axis::kRows); }, rng) < 1e-6);
  CHECK(check_op({&a}, [&](Tape& t) { return ad::softmax(t.param(a), Axis::kCols); }, rng) < 1e-6);
  CHECK(check_op({&a, &gain, &bias}, [&](Tape& t) { return ad::layer_norm(t.param(a), t.param(gain), t.param(bias)); }, rng) < 1e-6);
  CHECK(check_op({&a}, [&](Tape& t) { return ad::gelu(t.param(a)); }, rng) < 1e-6);
  CHECK(check_op({&a}, [&](Tape& t) { return ad::l2_normalize_rows(t.param(a)); }, rng) < 1e-6);
  CHECK(check_op({&a}, [&](Tape& t) { return ad::sum(t.param(a)); }, rng) < 1e-6);
  CHECK(check_op({&a, &c}, [&](Tape& t) {
    const Var parts[] = {t.param(a), t.param(c), t.param(a)};
    return ad::concat_rows(parts);
  }, rng) < 1e-6);
  CHECK(check_op({&a, &c}, [&](Tape& t) {
    const Var parts[] = {t.param(c), t.param(a)};
    return ad::concat_cols(parts);
  }, rng) < 1e-6);
  CHECK(check_op({&a}, [&](Tape& t) { return ad::slice_rows(t.param(a), 1, 2); }, rng) < 1e-6);
  CHECK(check_op({&a}, [&](Tape& t) { return ad::slice_cols(t.param(a), 1, 2); }, rng) < 1e-6);
}

TEST_CASE("a parameter used twice accumulates both contributions") {
  Parameter p("p", Matrix{{2.0}});
  Tape t;
  Var x = t.param(p);
  Var y = ad::matmul(x, x);  // p^2
  p.zero_grad();
  t.backward(ad::add(y, x));  // p^2 + p
  CHECK(p.grad(0, 0) == 5.0);
}

TEST_CASE("non-recording tape keeps values but no gradients") {
  Parameter p("p", Matrix{{1.0, 2.0}});
  Tape t(false);
  Var y = ad::sum(ad::scale(t.param(p), 2.0));
  CHECK(y.value()(0, 0) == 6.0);
  CHECK_FALSE(t.needs_grad(y));
  CHECK_THROWS_AS(t.backward(y), ContractViolation);
}

TEST_CASE("backward rejects non-scalar losses") {
  Parameter p("p", Matrix(2, 2, 1.0));
  Tape t;
  CHECK_THROWS_AS(t.backward(t.param(p)), DimensionError);
}

TEST_CASE("grad_check flags a wrong analytic gradient") {
  Parameter p("p", Matrix{{0.7, -0.3}});
  LossFn wrong = [&](bool with_grad) {
    const double x = p.value(0, 0), y = p.value(0, 1);
    if (with_grad) {
      p.grad(0, 0) += 2.0 * x;
      p.grad(0, 1) += 3.0 * y;  // true derivative is 2y
    }
    return x * x + y * y;
  };
  Parameter* params[] = {&p};
  const GradCheckResult r = grad_check(wrong, params, 1e-5);
  CHECK(r.max_rel_error > 0.1);
  CHECK(r.worst_parameter == "p");
  CHECK(r.worst_index == 1);
  CHECK_THROWS_AS(grad_check(wrong, params, 1e-2), ValidationError);
}

TEST_CASE("grad_check names the element whose perturbation breaks the loss") {
  Parameter p("weights", Matrix{{1.0, 1e-6}});
  LossFn loss = [&](bool with_grad) {
    const double x = p.value(0, 1);
    if (with_grad) p.grad(0, 1) += 0.5 / std::sqrt(x);
    return std::sqrt(x) + p.value(0, 0);
  };
  Parameter* params[] = {&p};
  try {
    grad_check(loss, params, 1e-5);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("weights[1]") != std::string::npos);
  }
}
