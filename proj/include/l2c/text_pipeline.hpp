#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "l2c/autodiff.hpp"
#include "l2c/embedding_store.hpp"
#include "l2c/matrix.hpp"

namespace l2c {

/// How inter-class dispersion of text prototypes is scored.
///   kUniformity: lower is more dispersed.
///   kAtfd:       higher is more dispersed.
enum class DispersionCriterion { kUniformity, kAtfd };

std::string to_string(DispersionCriterion c);
DispersionCriterion parse_criterion(const std::string& s);

inline constexpr double kDefaultUniformityT = 2.0;

/// Mean over the C(C-1)/2 unordered class pairs of exp(-t * ||T_i - T_j||^2).
/// Requires C >= 2 and t > 0. Result lies in (0, 1].
double uniformity_loss(const Matrix& prototypes, double t = kDefaultUniformityT);

/// Sum over ordered pairs i != j of exp(-t * ||T_i - T_j||^2). Diagnostic only;
/// selection and training use the mean form above.
double uniformity_pairwise_sum(const Matrix& prototypes, double t = kDefaultUniformityT);

/// Average Euclidean distance of the class rows to their centroid. C >= 2.
double atfd(const Matrix& prototypes);

/// Criterion value for one prototype matrix.
double dispersion(const Matrix& prototypes, DispersionCriterion c, double t = kDefaultUniformityT);

/// True when `candidate` strictly improves over `current` under `c`.
bool strictly_better(double candidate, double current, DispersionCriterion c);

struct TextPrototypes {
  enum class Provenance { kRawEnsemble, kRefined };

  Matrix matrix;  // C x d
  Provenance provenance = Provenance::kRawEnsemble;
  std::vector<std::size_t> selected_template_indices;  // original bundle indices, in acceptance order
  std::vector<double> criterion_trace;                 // criterion after each accepted template
};

/// Greedy template selection. Templates are ordered from most to least
/// dispersed (ties by original index), the best one seeds the ensemble, and
/// each following template is kept only if averaging it in strictly improves
/// the criterion. Returns the average of the kept templates.
TextPrototypes greedy_ensemble(const EmbeddingBundle& bundle, DispersionCriterion c,
                               double t = kDefaultUniformityT);

/// Plain average of every template (the no-selection baseline).
TextPrototypes average_all_templates(const EmbeddingBundle& bundle);

/// Learnable residual refinement  T~ = Mc * T * Md + T.
/// Mc starts at zero and Md at identity, so refinement starts as the identity map.
struct RefinementParams {
  RefinementParams() = default;
  RefinementParams(std::size_t classes, std::size_t dim);

  Parameter class_mix;    // Mc, C x C
  Parameter feature_mix;  // Md, d x d

  std::vector<Parameter*> parameters() { return {&class_mix, &feature_mix}; }
};

TextPrototypes refine(const TextPrototypes& raw, const RefinementParams& params);
Var refine(Tape& tape, Var raw, RefinementParams& params);

/// lambda * uniformity(T) for the uniformity criterion, -lambda * atfd(T) for ATFD.
double uniformity_regularizer(const Matrix& refined, DispersionCriterion c, double lambda,
                              double t = kDefaultUniformityT);

namespace ad {
Var uniformity_loss(Var prototypes, double t = kDefaultUniformityT);
Var atfd(Var prototypes);
Var uniformity_regularizer(Var refined, DispersionCriterion c, double lambda,
                           double t = kDefaultUniformityT);
}  // namespace ad

/// Prototype file: binary payload at `path` plus `path`.json holding the
/// selection report (indices, criterion, trace, provenance).
void save_prototypes(const TextPrototypes& protos, const fs::path& path, json extra = {});
TextPrototypes load_prototypes(const fs::path& path);

}  // namespace l2c
