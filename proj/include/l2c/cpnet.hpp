#pragma once

#include <cstddef>
#include <vector>

#include "l2c/autodiff.hpp"
#include "l2c/random.hpp"
#include "l2c/transformer.hpp"

namespace l2c {

/// Trainable complement network: a plain stack of transformer blocks with no
/// positional encoding. Depth 0 is the identity.
class CPNet {
 public:
  CPNet() = default;
  CPNet(std::size_t depth, BlockShape shape, Rng& rng);

  Var forward(Tape& tape, Var tokens);
  Matrix forward(const Matrix& tokens);

  std::size_t depth() const { return blocks_.size(); }
  std::size_t width() const { return shape_.width; }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

 private:
  BlockShape shape_;
  std::vector<TransformerBlock> blocks_;
};

struct RevertAttention {
  Matrix gate;    // A, (l+1) x (l+1)
  Matrix cp_rt;   // A * cp_out
};

/// A = 1 - softmax(cp_out * frozen_out^T / sqrt(d)) with the softmax over the
/// frozen (key) tokens, and cp_rt = A * cp_out. Parameter-free.
RevertAttention revert_attention(const Matrix& cp_out, const Matrix& frozen_out);

/// Element-wise frozen_out + cp_rt.
Matrix complement(const Matrix& frozen_out, const Matrix& cp_rt);

namespace ad {
Var revert_attention(Var cp_out, Var frozen_out);
Var complement(Var frozen_out, Var cp_rt);
}  // namespace ad

}  // namespace l2c
