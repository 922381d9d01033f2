#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "l2c/embedding_store.hpp"
#include "l2c/frozen_encoder.hpp"
#include "l2c/model.hpp"

namespace l2c {

struct SynthConfig {
  std::size_t domains = 6;
  std::size_t target_domains = 2;  // the last `target_domains` ids are held out
  std::size_t classes = 8;
  std::size_t patches = 9;         // l
  std::size_t patch_dim = 16;      // f
  std::size_t width = 32;          // d, width of the synthetic text embeddings
  std::size_t per_cell = 64;       // samples per (domain, class)
  std::size_t templates = 8;       // P
  double sigma_dom = 1.0;          // strength of the per-domain affine style
  double mix_ratio = 1.0;          // mixing strength relative to the bias, both scaled by sigma_dom
  std::size_t style_rank = 0;      // styles combine this many shared axes; 0 draws each freely
  double sigma_cls = 1.0;          // spread of the class means
  double noise = 1.0;              // per-sample noise scale
  Task task = Task::kClassification;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t source_domains() const { return domains - target_domains; }
  json to_json() const;
  static SynthConfig from_json(const json& j);
};

struct SynthDataset {
  SynthConfig config;
  std::vector<SyntheticImage> train;   // source domains only
  std::vector<SyntheticImage> target;  // held-out domains only
  EmbeddingBundle bundle;

  /// Images of one domain, from whichever split holds it.
  std::vector<const SyntheticImage*> domain_images(int domain) const;
  bool is_target(int domain) const;
};

/// Regression target assigned to a class: evenly spaced in [-0.8, 0.8].
double regression_target(std::size_t cls, std::size_t classes);

SynthDataset generate(const SynthConfig& cfg);

/// Nearest-class-mean accuracy in observed space, using the true per-domain
/// transform of the class means. Ties go to the lower class id.
double oracle_accuracy(const SynthDataset& data, int domain);

void save_dataset(const SynthDataset& data, const fs::path& dir);
/// Writes the dataset files into an existing (e.g. staged) directory.
void write_dataset_files(const SynthDataset& data, const fs::path& dir);
SynthDataset load_dataset(const fs::path& dir);

/// Encoder config matching a dataset's geometry.
EncoderConfig encoder_config_for(const SynthConfig& cfg, std::uint64_t encoder_seed = 7);

}  // namespace l2c
