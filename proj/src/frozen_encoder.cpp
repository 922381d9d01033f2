#include "l2c/frozen_encoder.hpp"

#include <cmath>

#include "l2c/errors.hpp"
#include "l2c/numerics.hpp"
#include "l2c/random.hpp"

namespace l2c {

json EncoderConfig::to_json() const {
  return {{"patches", patches}, {"patch_dim", patch_dim}, {"width", width}, {"depth", depth},
          {"heads", heads},     {"ffn_hidden", ffn_hidden}, {"seed", seed}};
}

EncoderConfig EncoderConfig::from_json(const json& j) {
  EncoderConfig c;
  c.patches = j.value("patches", c.patches);
  c.patch_dim = j.value("patch_dim", c.patch_dim);
  c.width = j.value("width", c.width);
  c.depth = j.value("depth", c.depth);
  c.heads = j.value("heads", c.heads);
  c.ffn_hidden = j.value("ffn_hidden", c.ffn_hidden);
  c.seed = j.value("seed", c.seed);
  return c;
}

FrozenEncoder::FrozenEncoder(const EncoderConfig& cfg) : cfg_(cfg) {
  if (cfg.patches == 0 || cfg.patch_dim == 0 || cfg.width == 0) {
    throw ValidationError("encoder config needs positive patches, patch_dim and width");
  }
  Rng rng(derive_seed(cfg.seed, 0xE1C0DE));
  projection_ = random_normal(cfg.patch_dim, cfg.width,
                              1.0 / std::sqrt(static_cast<double>(cfg.patch_dim)), rng);
  cls_ = random_normal(1, cfg.width, 1.0, rng);
  const BlockShape shape{cfg.width, cfg.heads, cfg.ffn_hidden};
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    blocks_.emplace_back("encoder.block" + std::to_string(b), shape, rng);
  }
}

void FrozenEncoder::check_grid(const Matrix& grid) const {
  if (grid.rows() != cfg_.patches || grid.cols() != cfg_.patch_dim) {
    throw DimensionError("image grid is " + grid.shape_string() + ", encoder expects " +
                         shape_string(cfg_.patches, cfg_.patch_dim));
  }
}

Matrix FrozenEncoder::embed_patches(const Matrix& grid) const {
  check_grid(grid);
  return matmul(grid, projection_);
}

TokenSequence FrozenEncoder::embed_patches(const SyntheticImage& img) const {
  return {embed_patches(img.grid), false};
}

Matrix FrozenEncoder::input_tokens(const Matrix& grid) const {
  const Matrix e = embed_patches(grid);
  Matrix out(e.rows() + 1, e.cols());
  for (std::size_t c = 0; c < e.cols(); ++c) out(0, c) = cls_(0, c);
  for (std::size_t r = 0; r < e.rows(); ++r)
    for (std::size_t c = 0; c < e.cols(); ++c) out(r + 1, c) = e(r, c);
  return out;
}

Matrix FrozenEncoder::encode(const Matrix& grid) const {
  Tape tape(false);
  Var x = tape.constant(input_tokens(grid));
  for (TransformerBlock& b : blocks_) x = b.forward(tape, x);
  Matrix out = layer_norm_rows(x.value());
  require_finite(out, "frozen encoder output");
  return out;
}

TokenSequence FrozenEncoder::encode(const SyntheticImage& img) const {
  return {encode(img.grid), true};
}

std::vector<Matrix> FrozenEncoder::weights() const {
  std::vector<Matrix> out{projection_, cls_};
  for (const TransformerBlock& b : blocks_)
    for (const Parameter* p : b.parameters()) out.push_back(p->value);
  return out;
}

}  // namespace l2c
