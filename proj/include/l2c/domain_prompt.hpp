#pragma once

#include <cstddef>
#include <span>

#include "l2c/autodiff.hpp"
#include "l2c/cpnet.hpp"
#include "l2c/random.hpp"

namespace l2c {

inline constexpr double kPromptInitStd = 0.02;

/// Learnable key/value cache of source-domain knowledge (L x d each).
/// After drop() the weights are released and any access throws ContractViolation.
class DomainCache {
 public:
  DomainCache() = default;
  DomainCache(std::size_t size, std::size_t width, Rng& rng);

  Parameter& keys();
  Parameter& values();
  const Parameter& keys() const;
  const Parameter& values() const;

  std::size_t size() const { return size_; }
  std::size_t width() const { return width_; }

  void drop();
  bool dropped() const { return dropped_; }
  /// Number of K/V accessor calls so far, including rejected ones.
  std::size_t access_count() const { return accesses_; }

 private:
  void check_live() const;

  std::size_t size_ = 0;
  std::size_t width_ = 0;
  Parameter keys_{"cache.K", Matrix()};
  Parameter values_{"cache.V", Matrix()};
  bool dropped_ = false;
  mutable std::size_t accesses_ = 0;
};

/// Interleaves every support image's patch embeddings (l x d each) into one
/// (b*l) x d sequence, prepends the domain token D and runs the complement
/// network over it. Returns the output row at D's position (1 x d).
Var aggregate_domain_token(Tape& tape, CPNet& cpnet, Parameter& domain_token,
                           std::span<const Matrix* const> support_embeddings);

/// w = softmax over the L entries of K * D~^T, then row i of V scaled by w_i.
Var query_cache(Tape& tape, DomainCache& cache, Var d_tilde);
Matrix query_cache(const Matrix& keys, const Matrix& values, const Matrix& d_tilde);

/// [queried; D~], (L+1) x d with D~ last.
Var assemble_prompt(Var queried, Var d_tilde);
Matrix assemble_prompt(const Matrix& queried, const Matrix& d_tilde);

}  // namespace l2c
