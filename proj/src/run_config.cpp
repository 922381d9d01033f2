#include "l2c/run_config.hpp"

#include "l2c/errors.hpp"

namespace l2c {
namespace {

constexpr const char* kSections[] = {"synth", "model", "train"};

std::uint64_t parse_seed(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used != s.size() || s.front() == '-') throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(std::string(what) + " must be a non-negative integer, got '" + s + "'");
  }
}

void reject_unknown(const json& user, const json& known, const std::string& path) {
  for (const auto& [key, value] : user.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!known.contains(key)) throw ValidationError("unknown run config key '" + where + "'");
    if (value.is_object() && known.at(key).is_object()) reject_unknown(value, known.at(key), where);
  }
}

}  // namespace

json RunConfig::to_json() const {
  return {{"seed", seed},
          {"synth", synth.to_json()},
          {"model", model.to_json()},
          {"train", train.to_json()},
          {"support", support}};
}

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("run config must be a JSON object");
  reject_unknown(j, RunConfig{}.to_json(), "");
  RunConfig cfg;
  try {
    cfg.seed = j.value("seed", cfg.seed);
    cfg.support = j.value("support", cfg.support);
    if (j.contains("synth")) cfg.synth = SynthConfig::from_json(j.at("synth"));
    if (j.contains("model")) cfg.model = ModelConfig::from_json(j.at("model"));
    if (j.contains("train")) cfg.train = TrainConfig::from_json(j.at("train"));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("run config: ") + e.what());
  }
  if (cfg.support == 0) throw ValidationError("support must be positive");
  cfg.synth.validate();
  return cfg;
}

void apply_override(json& j, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValidationError("override '" + assignment + "' is not of the form key.path=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ValidationError("override key '" + key + "' has an empty component");
    if (!node->is_object()) {
      if (!node->is_null()) throw ValidationError("override key '" + key + "' descends into a non-object");
      *node = json::object();
    }
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

RunConfig resolve_run_config(const std::optional<fs::path>& file,
                             const std::vector<std::string>& overrides,
                             const std::optional<std::string>& env_seed) {
  json user = json::object();
  if (file) user = read_json(*file);
  if (!user.is_object()) throw ValidationError("run config file must hold a JSON object");
  for (const std::string& o : overrides) apply_override(user, o);

  std::uint64_t seed = 0;
  if (user.contains("seed")) {
    if (!user["seed"].is_number_unsigned()) throw ValidationError("seed must be a non-negative integer");
    seed = user["seed"].get<std::uint64_t>();
  } else if (env_seed && !env_seed->empty()) {
    seed = parse_seed(*env_seed, "L2C_SEED");
  }
  user["seed"] = seed;
  for (const char* section : kSections) {
    json& s = user[section];
    if (s.is_null()) s = json::object();
    if (!s.is_object()) throw ValidationError(std::string(section) + " must be a JSON object");
    if (!s.contains("seed")) s["seed"] = seed;
  }

  json resolved = RunConfig{}.to_json();
  reject_unknown(user, resolved, "");
  resolved.merge_patch(user);
  return RunConfig::from_json(resolved);
}

}  // namespace l2c
