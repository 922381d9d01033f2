#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "l2c/model.hpp"
#include "l2c/random.hpp"
#include "l2c/synthbench.hpp"

namespace l2c {

/// kEpisodic draws support and query from one source domain; kErm pools all
/// source images and ignores domain ids.
enum class Sampling { kEpisodic, kErm };

std::string to_string(Sampling s);
Sampling parse_sampling(const std::string& s);

struct TrainConfig {
  double lr = 2.5e-3;
  std::size_t epochs = 20;
  std::size_t support = 12;  // b_s
  std::size_t query = 52;    // b_q
  double momentum = 0.0;
  Sampling sampling = Sampling::kEpisodic;
  std::size_t max_steps = 0;  // 0 leaves the epoch-derived count alone
  std::uint64_t seed = 0;

  json to_json() const;
  static TrainConfig from_json(const json& j);
};

/// Source images with their frozen encodings precomputed.
struct TrainingSet {
  std::vector<EncodedImage> images;
  std::vector<int> labels;
  std::vector<int> domains;
  std::vector<double> targets;
  std::map<int, std::vector<std::size_t>> by_domain;

  std::size_t size() const { return images.size(); }
};

TrainingSet make_training_set(const L2CModel& model, const std::vector<SyntheticImage>& images);

struct Episode {
  int domain = -1;  // -1 for domain-agnostic batches
  std::vector<std::size_t> support;
  std::vector<std::size_t> query;
};

/// Uniform domain (with replacement), then disjoint support/query drawn
/// without replacement inside it.
Episode sample_episode(const TrainingSet& data, std::size_t support, std::size_t query, Rng& rng);
/// Domain-agnostic batch of support + query images from the pooled set.
Episode sample_pooled(const TrainingSet& data, std::size_t support, std::size_t query, Rng& rng);

/// lr0 * (1 + cos(pi * step / (total - 1))) / 2.
double cosine_lr(double lr0, std::size_t step, std::size_t total);

struct CurveRow {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double uniformity = 0.0;
};

std::string curve_csv(const std::vector<CurveRow>& rows);

class Trainer {
 public:
  Trainer(L2CModel& model, const TrainingSet& data, const TrainConfig& cfg);

  std::size_t total_steps() const { return total_steps_; }
  std::size_t steps_per_epoch() const { return steps_per_epoch_; }

  Episode next_episode();
  /// One forward/backward pass and SGD update on every trainable parameter.
  /// Throws NumericalError describing the episode if the loss is not finite.
  CurveRow train_step(const Episode& episode, double lr);
  /// Runs every scheduled step; `on_step` sees each curve row as it is produced.
  std::vector<CurveRow> fit(const std::function<void(const CurveRow&)>& on_step = {});

 private:
  L2CModel& model_;
  const TrainingSet& data_;
  TrainConfig cfg_;
  Rng rng_;
  std::size_t steps_per_epoch_ = 0;
  std::size_t total_steps_ = 0;
  std::size_t step_ = 0;
  std::map<const Parameter*, Matrix> velocity_;
};

}  // namespace l2c
