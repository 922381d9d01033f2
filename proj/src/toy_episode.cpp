#include "l2c/toy_episode.hpp"

#include "l2c/numerics.hpp"
#include "l2c/random.hpp"

namespace l2c {

std::vector<const EncodedImage*> ToyEpisode::support_ptrs() const {
  std::vector<const EncodedImage*> out;
  for (const EncodedImage& e : support) out.push_back(&e);
  return out;
}

std::vector<const EncodedImage*> ToyEpisode::query_ptrs() const {
  std::vector<const EncodedImage*> out;
  for (const EncodedImage& e : query) out.push_back(&e);
  return out;
}

LossFn ToyEpisode::loss() {
  return tape_loss([this](Tape& t) {
    return model.episode_loss(t, support_ptrs(), query_ptrs(), labels, targets).total;
  });
}

std::pair<TrainingSet, Episode> ToyEpisode::as_training_set() const {
  TrainingSet set;
  Episode episode{0, {}, {}};
  for (const EncodedImage& e : support) {
    episode.support.push_back(set.images.size());
    set.images.push_back(e);
    set.labels.push_back(0);
    set.targets.push_back(0.0);
  }
  for (std::size_t i = 0; i < query.size(); ++i) {
    episode.query.push_back(set.images.size());
    set.images.push_back(query[i]);
    set.labels.push_back(labels[i]);
    set.targets.push_back(targets[i]);
  }
  set.domains.assign(set.images.size(), 0);
  for (std::size_t i = 0; i < set.images.size(); ++i) set.by_domain[0].push_back(i);
  return {std::move(set), std::move(episode)};
}

ModelConfig toy_config(Task task) {
  ModelConfig cfg;
  cfg.encoder.patches = 4;
  cfg.encoder.patch_dim = 6;
  cfg.encoder.width = 8;
  cfg.encoder.ffn_hidden = 16;
  cfg.cp_depth = 2;
  cfg.ffn_hidden = 16;
  cfg.cache_size = 2;
  cfg.task = task;
  return cfg;
}

ToyEpisode make_toy_episode(std::uint64_t seed, ModelConfig cfg, std::size_t support,
                            std::size_t query, bool perturb) {
  Rng rng(derive_seed(seed, 0x70F));
  const std::size_t classes = cfg.task == Task::kRegression ? 1 : 3;
  TextPrototypes text;
  text.matrix = random_normal(classes, cfg.encoder.width, 1.0, rng);
  cfg.seed = seed;
  ToyEpisode ep{L2CModel(cfg, text), {}, {}, {}, {}};
  if (perturb) {
    for (Parameter* p : ep.model.learnable_parameters()) {
      const double s = p->value.rows() == 1 ? 0.3 : 0.2;
      add_acc(random_normal(p->value.rows(), p->value.cols(), s, rng), p->value);
    }
  }
  const std::size_t l = cfg.encoder.patches, f = cfg.encoder.patch_dim;
  for (std::size_t i = 0; i < support; ++i) ep.support.push_back(ep.model.encode(random_normal(l, f, 1.0, rng)));
  std::normal_distribution<double> target(0.0, 0.5);
  for (std::size_t i = 0; i < query; ++i) {
    ep.query.push_back(ep.model.encode(random_normal(l, f, 1.0, rng)));
    ep.labels.push_back(static_cast<int>(i % classes));
    ep.targets.push_back(target(rng));
  }
  return ep;
}

GradCheckResult check_episode_gradients(ToyEpisode& episode, double eps) {
  const std::vector<Parameter*> params = episode.model.trainable_parameters();
  return grad_check(episode.loss(), params, eps);
}

}  // namespace l2c
