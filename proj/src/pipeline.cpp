#include "l2c/pipeline.hpp"

#include "l2c/errors.hpp"

namespace l2c {

ModelConfig model_config_for(const SynthConfig& data, const ModelConfig& base) {
  ModelConfig cfg = base;
  const std::uint64_t encoder_seed = base.encoder.seed;
  cfg.encoder = encoder_config_for(data, encoder_seed);
  cfg.encoder.depth = base.encoder.depth;
  cfg.encoder.heads = base.encoder.heads;
  cfg.encoder.ffn_hidden = base.encoder.ffn_hidden;
  cfg.task = data.task;
  return cfg;
}

L2CModel init_model(const SynthDataset& data, const ModelConfig& cfg) {
  return L2CModel(cfg, initial_text(data.bundle, cfg));
}

FitOutput fit(const SynthDataset& data, const ModelConfig& model_cfg, const TrainConfig& train_cfg) {
  L2CModel model = init_model(data, model_cfg);
  const TrainingSet set = make_training_set(model, data.train);
  Trainer trainer(model, set, train_cfg);
  FitOutput out;
  out.curve = trainer.fit();
  out.checkpoint = model.to_checkpoint();
  out.checkpoint.config["train"] = train_cfg.to_json();
  return out;
}

std::vector<const Matrix*> domain_grids(const SynthDataset& data, int domain) {
  std::vector<const Matrix*> out;
  for (const SyntheticImage* img : data.domain_images(domain)) out.push_back(&img->grid);
  return out;
}

MetricReport evaluate_domain(const Checkpoint& ckpt, const SynthDataset& data, int eval_domain,
                             int prompt_domain, std::size_t support, std::uint64_t seed) {
  const std::vector<const Matrix*> pool = domain_grids(data, prompt_domain);
  if (pool.empty()) throw ValidationError("domain " + std::to_string(prompt_domain) + " has no images");
  std::vector<const Matrix*> chosen;
  for (std::size_t i : choose_support(pool.size(), support, seed)) chosen.push_back(pool[i]);
  AdaptedModel adapted = adapt(ckpt, chosen);
  const auto images = data.domain_images(eval_domain);
  return evaluate(adapted, images);
}

}  // namespace l2c
