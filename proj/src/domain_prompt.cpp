#include "l2c/domain_prompt.hpp"

#include "l2c/errors.hpp"
#include "l2c/numerics.hpp"

namespace l2c {
namespace {

void check_width(const Matrix& a, const Matrix& b, const char* what) {
  if (a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": widths differ (" + a.shape_string() + " vs " +
                         b.shape_string() + ")");
  }
}

void check_token(const Matrix& d_tilde, const char* what) {
  if (d_tilde.rows() != 1) {
    throw DimensionError(std::string(what) + ": domain token must be 1 x d, got " +
                         d_tilde.shape_string());
  }
}

}  // namespace

DomainCache::DomainCache(std::size_t size, std::size_t width, Rng& rng)
    : size_(size), width_(width) {
  if (size == 0) throw ValidationError("domain cache size L must be at least 1");
  keys_.value = random_normal(size, width, kPromptInitStd, rng);
  keys_.grad = Matrix(size, width);
  values_.value = random_normal(size, width, kPromptInitStd, rng);
  values_.grad = Matrix(size, width);
}

void DomainCache::check_live() const {
  ++accesses_;
  if (dropped_) throw ContractViolation("domain cache accessed after it was dropped");
}

Parameter& DomainCache::keys() {
  check_live();
  return keys_;
}
Parameter& DomainCache::values() {
  check_live();
  return values_;
}
const Parameter& DomainCache::keys() const {
  check_live();
  return keys_;
}
const Parameter& DomainCache::values() const {
  check_live();
  return values_;
}

void DomainCache::drop() {
  keys_ = Parameter("cache.K", Matrix());
  values_ = Parameter("cache.V", Matrix());
  dropped_ = true;
}

Var aggregate_domain_token(Tape& tape, CPNet& cpnet, Parameter& domain_token,
                           std::span<const Matrix* const> support_embeddings) {
  if (support_embeddings.empty()) throw ValidationError("support set is empty");
  std::size_t rows = 0;
  const std::size_t d = domain_token.value.cols();
  for (const Matrix* m : support_embeddings) {
    check_width(*m, domain_token.value, "aggregate_domain_token");
    rows += m->rows();
  }
  Matrix seq(rows, d);
  std::size_t r = 0;
  for (const Matrix* m : support_embeddings) {
    std::copy(m->data().begin(), m->data().end(), seq.data().begin() + r * d);
    r += m->rows();
  }
  const Var parts[] = {tape.param(domain_token), tape.constant(std::move(seq))};
  Var out = cpnet.forward(tape, ad::concat_rows(parts));
  return ad::slice_rows(out, 0, 1);
}

Var query_cache(Tape& tape, DomainCache& cache, Var d_tilde) {
  check_token(d_tilde.value(), "query_cache");
  check_width(cache.keys().value, d_tilde.value(), "query_cache");
  Var w = ad::softmax(ad::matmul_nt(tape.param(cache.keys()), d_tilde), Axis::kCols);
  return ad::scale_rows(tape.param(cache.values()), w);
}

Matrix query_cache(const Matrix& keys, const Matrix& values, const Matrix& d_tilde) {
  check_token(d_tilde, "query_cache");
  check_width(keys, d_tilde, "query_cache");
  require_same_shape(keys, values, "query_cache K/V");
  const Matrix w = softmax(matmul_nt(keys, d_tilde), Axis::kCols);
  Matrix out = values;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t c = 0; c < out.cols(); ++c) out(i, c) *= w(i, 0);
  return out;
}

Var assemble_prompt(Var queried, Var d_tilde) {
  check_token(d_tilde.value(), "assemble_prompt");
  check_width(queried.value(), d_tilde.value(), "assemble_prompt");
  const Var parts[] = {queried, d_tilde};
  return ad::concat_rows(parts);
}

Matrix assemble_prompt(const Matrix& queried, const Matrix& d_tilde) {
  check_token(d_tilde, "assemble_prompt");
  check_width(queried, d_tilde, "assemble_prompt");
  Matrix out(queried.rows() + 1, queried.cols());
  std::copy(queried.data().begin(), queried.data().end(), out.data().begin());
  std::copy(d_tilde.data().begin(), d_tilde.data().end(),
            out.data().begin() + queried.rows() * queried.cols());
  return out;
}

}  // namespace l2c
