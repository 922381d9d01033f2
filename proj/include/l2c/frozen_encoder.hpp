#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "l2c/embedding_store.hpp"
#include "l2c/matrix.hpp"
#include "l2c/transformer.hpp"

namespace l2c {

/// One synthetic "image": l raw feature patches of width f.
struct SyntheticImage {
  Matrix grid;       // l x f
  int domain = -1;
  int label = -1;    // -1 when unlabeled
  double target = 0.0;
};

/// Token matrix with an optional leading CLS row.
struct TokenSequence {
  Matrix tokens;
  bool has_cls = false;
};

struct EncoderConfig {
  std::size_t patches = 9;      // l
  std::size_t patch_dim = 16;   // f
  std::size_t width = 32;       // d
  std::size_t depth = 2;
  std::size_t heads = 1;
  std::size_t ffn_hidden = 64;
  std::uint64_t seed = 7;

  json to_json() const;
  static EncoderConfig from_json(const json& j);
};

/// Seed-fixed stand-in for a pretrained image encoder. Weights are generated
/// from the config at construction and never change afterwards.
class FrozenEncoder {
 public:
  explicit FrozenEncoder(const EncoderConfig& cfg);

  const EncoderConfig& config() const { return cfg_; }

  /// patches * Wp, l x d, no CLS. The projection has no bias.
  TokenSequence embed_patches(const SyntheticImage& img) const;
  Matrix embed_patches(const Matrix& grid) const;

  /// [CLS; patches * Wp], the shared input of the frozen and complement branches.
  Matrix input_tokens(const Matrix& grid) const;

  /// Frozen stack over the input tokens, (l+1) x d with CLS in row 0.
  TokenSequence encode(const SyntheticImage& img) const;
  Matrix encode(const Matrix& grid) const;

  const Matrix& projection() const { return projection_; }
  const Matrix& cls_token() const { return cls_; }
  /// Snapshot of every frozen weight, used to prove nothing mutated them.
  std::vector<Matrix> weights() const;

 private:
  void check_grid(const Matrix& grid) const;

  EncoderConfig cfg_;
  Matrix projection_;  // f x d
  Matrix cls_;         // 1 x d
  mutable std::vector<TransformerBlock> blocks_;
};

}  // namespace l2c
