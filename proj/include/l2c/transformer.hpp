#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "l2c/autodiff.hpp"
#include "l2c/random.hpp"

namespace l2c {

struct BlockShape {
  std::size_t width = 32;
  std::size_t heads = 1;
  std::size_t ffn_hidden = 64;
};

/// Scaled dot-product attention split over `heads` column groups, each head
/// using scale 1/sqrt(width / heads). No projections.
Var multi_head_attention(Var q, Var k, Var v, std::size_t heads);

/// Pre-norm transformer encoder block:
///   h = x + Wo * MHA(LN1(x))
///   y = h + FFN(LN2(h)),  FFN = W2 * gelu(W1 * . + b1) + b2
class TransformerBlock {
 public:
  TransformerBlock(const std::string& prefix, BlockShape shape, Rng& rng);

  Var forward(Tape& tape, Var x);

  const BlockShape& shape() const { return shape_; }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

 private:
  BlockShape shape_;
  Parameter ln1_gain_, ln1_bias_;
  Parameter wq_, wk_, wv_, wo_;
  Parameter ln2_gain_, ln2_bias_;
  Parameter w1_, b1_, w2_, b2_;
};

/// Pre-norm cross-attention block: queries attend over a separate context.
///   h = q + Wo * MHA(LNq(q) Wq, LNc(c) Wk, LNc(c) Wv)
///   y = h + FFN(LN2(h))
class CrossAttentionBlock {
 public:
  CrossAttentionBlock(const std::string& prefix, BlockShape shape, Rng& rng);

  Var forward(Tape& tape, Var query, Var context);

  const BlockShape& shape() const { return shape_; }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

 private:
  BlockShape shape_;
  Parameter lnq_gain_, lnq_bias_, lnc_gain_, lnc_bias_;
  Parameter wq_, wk_, wv_, wo_;
  Parameter ln2_gain_, ln2_bias_;
  Parameter w1_, b1_, w2_, b2_;
};

}  // namespace l2c
