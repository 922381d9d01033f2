#pragma once

#include <cstdint>
#include <vector>

#include "l2c/gradcheck.hpp"
#include "l2c/model.hpp"
#include "l2c/trainer.hpp"

namespace l2c {

/// A tiny model with one fixed episode: l=4, f=6, d=8, C=3, L=2 by default.
struct ToyEpisode {
  L2CModel model;
  std::vector<EncodedImage> support;
  std::vector<EncodedImage> query;
  std::vector<int> labels;
  std::vector<double> targets;

  std::vector<const EncodedImage*> support_ptrs() const;
  std::vector<const EncodedImage*> query_ptrs() const;
  /// Total episode loss over the model's current parameters.
  LossFn loss();
  /// The same images as a one-domain training set plus the episode indexing it.
  std::pair<TrainingSet, Episode> as_training_set() const;
};

ModelConfig toy_config(Task task = Task::kClassification);

/// Builds the model from `seed` with random inputs. With `perturb`, every
/// learnable is moved away from its structured init (zero M_c, identity M_d,
/// unit gains) so no gradient vanishes by construction.
ToyEpisode make_toy_episode(std::uint64_t seed, ModelConfig cfg = toy_config(),
                            std::size_t support = 2, std::size_t query = 3, bool perturb = true);

/// Central-difference check of the full episode loss over every learnable.
GradCheckResult check_episode_gradients(ToyEpisode& episode, double eps = 1e-5);

}  // namespace l2c
