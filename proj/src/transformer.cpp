#include "l2c/transformer.hpp"

#include <cmath>

#include "l2c/errors.hpp"

namespace l2c {
namespace {

Parameter weight(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  return Parameter(name, random_normal(in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng));
}

Parameter ones(const std::string& name, std::size_t n) { return Parameter(name, Matrix(1, n, 1.0)); }
Parameter zeros(const std::string& name, std::size_t n) { return Parameter(name, Matrix(1, n)); }

void check_shape(const BlockShape& s) {
  if (s.width == 0 || s.heads == 0 || s.width % s.heads != 0) {
    throw ValidationError("block width " + std::to_string(s.width) +
                          " must be a positive multiple of the head count " +
                          std::to_string(s.heads));
  }
  if (s.ffn_hidden == 0) throw ValidationError("feed-forward width must be positive");
}

Var feed_forward(Tape& t, Var h, Parameter& gain, Parameter& bias, Parameter& w1, Parameter& b1,
                 Parameter& w2, Parameter& b2) {
  Var n = ad::layer_norm(h, t.param(gain), t.param(bias));
  Var hidden = ad::gelu(ad::add_row(ad::matmul(n, t.param(w1)), t.param(b1)));
  Var out = ad::add_row(ad::matmul(hidden, t.param(w2)), t.param(b2));
  return ad::add(h, out);
}

}  // namespace

Var multi_head_attention(Var q, Var k, Var v, std::size_t heads) {
  const std::size_t width = q.cols();
  if (k.cols() != width || v.cols() != width) {
    throw DimensionError("attention: Q/K/V widths " + std::to_string(q.cols()) + "/" +
                         std::to_string(k.cols()) + "/" + std::to_string(v.cols()) + " differ");
  }
  if (k.rows() != v.rows()) {
    throw DimensionError("attention: K has " + std::to_string(k.rows()) + " rows but V has " +
                         std::to_string(v.rows()));
  }
  const std::size_t head_dim = width / heads;
  const double s = 1.0 / std::sqrt(static_cast<double>(head_dim));
  if (heads == 1) return ad::matmul(ad::softmax(ad::scale(ad::matmul_nt(q, k), s)), v);
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = ad::slice_cols(q, h * head_dim, head_dim);
    Var kh = ad::slice_cols(k, h * head_dim, head_dim);
    Var vh = ad::slice_cols(v, h * head_dim, head_dim);
    outs.push_back(ad::matmul(ad::softmax(ad::scale(ad::matmul_nt(qh, kh), s)), vh));
  }
  return ad::concat_cols(outs);
}

TransformerBlock::TransformerBlock(const std::string& p, BlockShape shape, Rng& rng)
    : shape_(shape) {
  check_shape(shape);
  const std::size_t d = shape.width;
  ln1_gain_ = ones(p + ".ln1.gain", d);
  ln1_bias_ = zeros(p + ".ln1.bias", d);
  wq_ = weight(p + ".attn.wq", d, d, rng);
  wk_ = weight(p + ".attn.wk", d, d, rng);
  wv_ = weight(p + ".attn.wv", d, d, rng);
  wo_ = weight(p + ".attn.wo", d, d, rng);
  ln2_gain_ = ones(p + ".ln2.gain", d);
  ln2_bias_ = zeros(p + ".ln2.bias", d);
  w1_ = weight(p + ".ffn.w1", d, shape.ffn_hidden, rng);
  b1_ = zeros(p + ".ffn.b1", shape.ffn_hidden);
  w2_ = weight(p + ".ffn.w2", shape.ffn_hidden, d, rng);
  b2_ = zeros(p + ".ffn.b2", d);
}

Var TransformerBlock::forward(Tape& t, Var x) {
  if (x.cols() != shape_.width) {
    throw DimensionError("transformer block expects width " + std::to_string(shape_.width) +
                         ", got " + std::to_string(x.cols()));
  }
  Var n = ad::layer_norm(x, t.param(ln1_gain_), t.param(ln1_bias_));
  Var attn = multi_head_attention(ad::matmul(n, t.param(wq_)), ad::matmul(n, t.param(wk_)),
                                  ad::matmul(n, t.param(wv_)), shape_.heads);
  Var h = ad::add(x, ad::matmul(attn, t.param(wo_)));
  return feed_forward(t, h, ln2_gain_, ln2_bias_, w1_, b1_, w2_, b2_);
}

std::vector<Parameter*> TransformerBlock::parameters() {
  return {&ln1_gain_, &ln1_bias_, &wq_, &wk_, &wv_, &wo_,
          &ln2_gain_, &ln2_bias_, &w1_, &b1_, &w2_, &b2_};
}

std::vector<const Parameter*> TransformerBlock::parameters() const {
  return {&ln1_gain_, &ln1_bias_, &wq_, &wk_, &wv_, &wo_,
          &ln2_gain_, &ln2_bias_, &w1_, &b1_, &w2_, &b2_};
}

CrossAttentionBlock::CrossAttentionBlock(const std::string& p, BlockShape shape, Rng& rng)
    : shape_(shape) {
  check_shape(shape);
  const std::size_t d = shape.width;
  lnq_gain_ = ones(p + ".lnq.gain", d);
  lnq_bias_ = zeros(p + ".lnq.bias", d);
  lnc_gain_ = ones(p + ".lnc.gain", d);
  lnc_bias_ = zeros(p + ".lnc.bias", d);
  wq_ = weight(p + ".attn.wq", d, d, rng);
  wk_ = weight(p + ".attn.wk", d, d, rng);
  wv_ = weight(p + ".attn.wv", d, d, rng);
  wo_ = weight(p + ".attn.wo", d, d, rng);
  ln2_gain_ = ones(p + ".ln2.gain", d);
  ln2_bias_ = zeros(p + ".ln2.bias", d);
  w1_ = weight(p + ".ffn.w1", d, shape.ffn_hidden, rng);
  b1_ = zeros(p + ".ffn.b1", shape.ffn_hidden);
  w2_ = weight(p + ".ffn.w2", shape.ffn_hidden, d, rng);
  b2_ = zeros(p + ".ffn.b2", d);
}

Var CrossAttentionBlock::forward(Tape& t, Var query, Var context) {
  if (query.cols() != shape_.width || context.cols() != shape_.width) {
    throw DimensionError("cross-attention expects width " + std::to_string(shape_.width) +
                         ", got query " + std::to_string(query.cols()) + " and context " +
                         std::to_string(context.cols()));
  }
  Var nq = ad::layer_norm(query, t.param(lnq_gain_), t.param(lnq_bias_));
  Var nc = ad::layer_norm(context, t.param(lnc_gain_), t.param(lnc_bias_));
  Var attn = multi_head_attention(ad::matmul(nq, t.param(wq_)), ad::matmul(nc, t.param(wk_)),
                                  ad::matmul(nc, t.param(wv_)), shape_.heads);
  Var h = ad::add(query, ad::matmul(attn, t.param(wo_)));
  return feed_forward(t, h, ln2_gain_, ln2_bias_, w1_, b1_, w2_, b2_);
}

std::vector<Parameter*> CrossAttentionBlock::parameters() {
  return {&lnq_gain_, &lnq_bias_, &lnc_gain_, &lnc_bias_, &wq_, &wk_, &wv_, &wo_,
          &ln2_gain_, &ln2_bias_, &w1_, &b1_, &w2_, &b2_};
}

std::vector<const Parameter*> CrossAttentionBlock::parameters() const {
  return {&lnq_gain_, &lnq_bias_, &lnc_gain_, &lnc_bias_, &wq_, &wk_, &wv_, &wo_,
          &ln2_gain_, &ln2_bias_, &w1_, &b1_, &w2_, &b2_};
}

}  // namespace l2c
