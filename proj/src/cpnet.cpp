#include "l2c/cpnet.hpp"

#include <cmath>

#include "l2c/errors.hpp"
#include "l2c/numerics.hpp"

namespace l2c {
namespace {

void check_pair(const Matrix& cp_out, const Matrix& frozen_out, const char* what) {
  if (!cp_out.same_shape(frozen_out)) {
    throw DimensionError(std::string(what) + ": shapes " + cp_out.shape_string() + " and " +
                         frozen_out.shape_string() + " differ");
  }
}

}  // namespace

CPNet::CPNet(std::size_t depth, BlockShape shape, Rng& rng) : shape_(shape) {
  for (std::size_t b = 0; b < depth; ++b) {
    blocks_.emplace_back("cpnet.block" + std::to_string(b), shape, rng);
  }
}

Var CPNet::forward(Tape& tape, Var tokens) {
  if (tokens.cols() != shape_.width) {
    throw DimensionError("cpnet expects width " + std::to_string(shape_.width) + ", got " +
                         std::to_string(tokens.cols()));
  }
  for (TransformerBlock& b : blocks_) tokens = b.forward(tape, tokens);
  return tokens;
}

Matrix CPNet::forward(const Matrix& tokens) {
  Tape tape(false);
  return forward(tape, tape.constant_ref(tokens)).value();
}

std::vector<Parameter*> CPNet::parameters() {
  std::vector<Parameter*> out;
  for (TransformerBlock& b : blocks_)
    for (Parameter* p : b.parameters()) out.push_back(p);
  return out;
}

std::vector<const Parameter*> CPNet::parameters() const {
  std::vector<const Parameter*> out;
  for (const TransformerBlock& b : blocks_)
    for (const Parameter* p : b.parameters()) out.push_back(p);
  return out;
}

RevertAttention revert_attention(const Matrix& cp_out, const Matrix& frozen_out) {
  check_pair(cp_out, frozen_out, "revert_attention");
  const double s = 1.0 / std::sqrt(static_cast<double>(cp_out.cols()));
  Matrix gate = softmax(scale(matmul_nt(cp_out, frozen_out), s), Axis::kRows);
  for (double& v : gate.data()) v = 1.0 - v;
  Matrix cp_rt = matmul(gate, cp_out);
  return {std::move(gate), std::move(cp_rt)};
}

Matrix complement(const Matrix& frozen_out, const Matrix& cp_rt) {
  check_pair(cp_rt, frozen_out, "complement");
  return add(frozen_out, cp_rt);
}

namespace ad {

Var revert_attention(Var cp_out, Var frozen_out) {
  check_pair(cp_out.value(), frozen_out.value(), "revert_attention");
  const double s = 1.0 / std::sqrt(static_cast<double>(cp_out.cols()));
  Var gate = affine(softmax(scale(matmul_nt(cp_out, frozen_out), s), Axis::kRows), -1.0, 1.0);
  return matmul(gate, cp_out);
}

Var complement(Var frozen_out, Var cp_rt) {
  check_pair(cp_rt.value(), frozen_out.value(), "complement");
  return add(frozen_out, cp_rt);
}

}  // namespace ad
}  // namespace l2c
