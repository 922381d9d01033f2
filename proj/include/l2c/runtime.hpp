#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "l2c/embedding_store.hpp"
#include "l2c/model.hpp"

namespace l2c {

inline constexpr std::size_t kDefaultSupportSize = 16;

/// Domain prompt and image context from unlabeled support grids. Forward
/// only; reads the cache. The checkpoint digest is left empty.
PromptFile compute_prompt(L2CModel& model, std::span<const Matrix* const> support);

/// A model bound to one domain prompt with its K/V cache dropped.
class AdaptedModel {
 public:
  /// Binds an already computed prompt; the cache is dropped before anything else.
  AdaptedModel(L2CModel model, const PromptFile& prompt);

  /// 1 x C cosine logits (1 x 1 prediction for regression).
  Matrix infer(const Matrix& grid);
  /// B x C, one independent row per image.
  Matrix infer_batch(std::span<const Matrix* const> grids);

  const Matrix& prompt() const { return state_.prompt; }
  const Matrix& image_context() const { return state_.context; }
  const L2CModel& model() const { return model_; }
  bool cache_dropped() const { return model_.cache().dropped(); }
  std::size_t cache_accesses() const { return model_.cache().access_count(); }

 private:
  L2CModel model_;
  L2CModel::PromptState state_;
};

/// Loads the checkpoint, computes the prompt from `support`, drops the cache.
AdaptedModel adapt(const Checkpoint& ckpt, std::span<const Matrix* const> support);

/// `count` distinct indices in [0, n), uniformly at random from `seed`.
std::vector<std::size_t> choose_support(std::size_t n, std::size_t count, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Metrics

/// Index of the largest entry of each row; ties go to the lowest index.
std::vector<int> argmax_rows(const Matrix& logits);
double accuracy(std::span<const int> predicted, std::span<const int> truth);
/// Unweighted mean of per-class F1 over classes present in truth or predictions.
double macro_f1(std::span<const int> predicted, std::span<const int> truth);
/// Minimum per-group accuracy.
double worst_case_accuracy(std::span<const int> predicted, std::span<const int> truth,
                           std::span<const int> groups);
double pearson(std::span<const double> x, std::span<const double> y);

struct MetricReport {
  std::map<std::string, double> metrics;
  std::map<int, std::map<std::string, double>> per_domain;
  std::size_t samples = 0;

  json to_json() const;
  std::string per_domain_csv() const;
};

/// Scores every image with the adapted model. Requires a non-empty set.
MetricReport evaluate(AdaptedModel& model, std::span<const SyntheticImage* const> images);

}  // namespace l2c
