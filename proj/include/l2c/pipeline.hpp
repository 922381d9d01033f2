#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "l2c/model.hpp"
#include "l2c/runtime.hpp"
#include "l2c/synthbench.hpp"
#include "l2c/trainer.hpp"

namespace l2c {

/// Model config whose geometry matches the dataset.
ModelConfig model_config_for(const SynthConfig& data, const ModelConfig& base = {});

L2CModel init_model(const SynthDataset& data, const ModelConfig& cfg);

struct FitOutput {
  Checkpoint checkpoint;
  std::vector<CurveRow> curve;
};

FitOutput fit(const SynthDataset& data, const ModelConfig& model_cfg, const TrainConfig& train_cfg);

/// Grids of a domain's images in dataset order.
std::vector<const Matrix*> domain_grids(const SynthDataset& data, int domain);

/// Adapts with `support` images of `prompt_domain` (chosen from `seed`) and
/// evaluates on every image of `eval_domain`.
MetricReport evaluate_domain(const Checkpoint& ckpt, const SynthDataset& data, int eval_domain,
                             int prompt_domain, std::size_t support, std::uint64_t seed);

}  // namespace l2c
