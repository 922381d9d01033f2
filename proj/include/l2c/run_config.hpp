#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "l2c/embedding_store.hpp"
#include "l2c/model.hpp"
#include "l2c/runtime.hpp"
#include "l2c/synthbench.hpp"
#include "l2c/trainer.hpp"

namespace l2c {

/// Everything a command needs besides its artifact paths.
struct RunConfig {
  std::uint64_t seed = 0;
  SynthConfig synth;
  ModelConfig model;
  TrainConfig train;
  std::size_t support = kDefaultSupportSize;

  json to_json() const;
  static RunConfig from_json(const json& j);
};

/// Defaults, then `file` (if any), then each `key.path=value` override. A value
/// is parsed as JSON and taken as a plain string when that fails. Section
/// seeds not given explicitly follow the top-level seed, which itself falls
/// back to `env_seed` (the L2C_SEED variable) and then 0.
RunConfig resolve_run_config(const std::optional<fs::path>& file,
                             const std::vector<std::string>& overrides,
                             const std::optional<std::string>& env_seed);

/// Applies one `a.b.c=value` override to `j`.
void apply_override(json& j, const std::string& assignment);

}  // namespace l2c
