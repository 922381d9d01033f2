#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "l2c/errors.hpp"
#include "l2c/pipeline.hpp"
#include "l2c/run_config.hpp"
#include "l2c/text_pipeline.hpp"
#include "l2c/toy_episode.hpp"

using namespace l2c;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;
constexpr double kGradTolerance = 1e-4;

struct ConfigFlags {
  std::string file;
  std::vector<std::string> overrides;

  RunConfig resolve() const {
    const char* env = std::getenv("L2C_SEED");
    return resolve_run_config(file.empty() ? std::nullopt : std::optional<fs::path>(file), overrides,
                              env ? std::optional<std::string>(env) : std::nullopt);
  }
};

void add_config_flags(CLI::App* cmd, ConfigFlags& flags) {
  cmd->add_option("--config", flags.file, "JSON run config")->check(CLI::ExistingFile);
  cmd->add_option("--set", flags.overrides, "key.path=value override (repeatable)");
}

void write_text(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::span<const char>(text.data(), text.size()));
}

void write_run_config(const fs::path& dir, const RunConfig& run) {
  write_json(dir / "run_config.json", run.to_json());
}

int report_error(const char* kind, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << "\n";
  return code;
}

// ---------------------------------------------------------------------------

struct EnsembleArgs {
  std::string bundle;
  std::string criterion = "uniformity";
  double t = kDefaultUniformityT;
  std::string out;
};

void cmd_ensemble(const EnsembleArgs& a) {
  const EmbeddingBundle bundle = load_bundle(a.bundle);
  const DispersionCriterion criterion = parse_criterion(a.criterion);
  const TextPrototypes protos = greedy_ensemble(bundle, criterion, a.t);
  const json resolved{{"bundle", a.bundle}, {"criterion", to_string(criterion)}, {"t", a.t}};
  save_prototypes(protos, a.out, {{"config", resolved}});
  write_json(fs::path(a.out + ".report.json"),
             {{"config", resolved},
              {"templates", bundle.template_count()},
              {"selected_template_indices", protos.selected_template_indices},
              {"criterion_trace", protos.criterion_trace},
              {"final_dispersion", protos.criterion_trace.back()}});
}

void cmd_synth(const RunConfig& run, const std::string& out) {
  const SynthDataset data = generate(run.synth);
  StagedDirectory staged(out);
  write_dataset_files(data, staged.path());
  write_run_config(staged.path(), run);
  staged.commit();
}

void cmd_train(const RunConfig& run, const std::string& data_dir, const std::string& out) {
  const SynthDataset data = load_dataset(data_dir);
  const FitOutput fitted = fit(data, model_config_for(data.config, run.model), run.train);
  StagedDirectory staged(out);
  write_checkpoint_files(fitted.checkpoint, staged.path());
  write_text(staged.path() / "curve.csv", curve_csv(fitted.curve));
  write_run_config(staged.path(), run);
  staged.commit();
}

void cmd_adapt(const RunConfig& run, const std::string& ckpt_dir, const std::string& data_dir,
               int domain, std::size_t support, const std::string& out) {
  const Checkpoint ckpt = load_checkpoint(ckpt_dir);
  const SynthDataset data = load_dataset(data_dir);
  const std::vector<const Matrix*> pool = domain_grids(data, domain);
  if (pool.empty()) throw ValidationError("domain " + std::to_string(domain) + " has no images");
  const std::vector<std::size_t> picked = choose_support(pool.size(), support, run.seed);
  std::vector<const Matrix*> chosen;
  for (std::size_t i : picked) chosen.push_back(pool[i]);

  L2CModel model = L2CModel::from_checkpoint(ckpt);
  PromptFile prompt = compute_prompt(model, chosen);
  prompt.checkpoint_sha256 = checkpoint_digest(ckpt);
  prompt.extra = {{"domain", domain}, {"support_indices", picked}, {"seed", run.seed}};
  StagedDirectory staged(out);
  write_prompt_files(prompt, staged.path());
  write_run_config(staged.path(), run);
  staged.commit();
}

void cmd_eval(const RunConfig& run, const std::string& ckpt_dir, const std::string& prompt_dir,
              const std::string& data_dir, int domain, const std::string& out) {
  const PromptFile prompt = load_prompt(prompt_dir);
  const Checkpoint ckpt = load_checkpoint(ckpt_dir);
  const std::string digest = checkpoint_digest(ckpt);
  if (prompt.checkpoint_sha256 != digest) {
    throw ValidationError("prompt was computed from checkpoint " + prompt.checkpoint_sha256 +
                          " but " + ckpt_dir + " is " + digest);
  }
  const SynthDataset data = load_dataset(data_dir);
  const auto images = data.domain_images(domain);
  if (images.empty()) throw ValidationError("domain " + std::to_string(domain) + " has no images");
  AdaptedModel adapted(L2CModel::from_checkpoint(ckpt), prompt);
  const MetricReport report = evaluate(adapted, images);
  json j = report.to_json();
  j["domain"] = domain;
  j["checkpoint_sha256"] = digest;
  j["config"] = run.to_json();
  write_json(out, j);
}

int cmd_gradcheck(const RunConfig& run, double eps, bool perturb, const std::string& task,
                  const std::string& out) {
  ModelConfig cfg = toy_config(parse_task(task));
  cfg.seed = run.model.seed;
  ToyEpisode episode = make_toy_episode(run.seed, cfg, 2, 3, perturb);
  const GradCheckResult r = check_episode_gradients(episode, eps);
  json tensors = json::array();
  for (const TensorGradError& t : r.tensors)
    tensors.push_back({{"name", t.name}, {"rel_error", t.rel_error}, {"grad_norm", t.grad_norm}});
  const bool pass = r.max_tensor_rel_error < kGradTolerance;
  write_json(out, {{"eps", eps},
                   {"perturbed", perturb},
                   {"task", task},
                   {"max_rel_error", r.max_tensor_rel_error},
                   {"max_element_rel_error", r.max_rel_error},
                   {"tolerance", kGradTolerance},
                   {"pass", pass},
                   {"tensors", tensors},
                   {"config", run.to_json()}});
  std::cout << "max_rel_error " << r.max_tensor_rel_error << (pass ? " PASS" : " FAIL") << "\n";
  return pass ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot test-time domain adaptation toolkit"};
  app.require_subcommand(1);

  EnsembleArgs ens;
  CLI::App* ensemble = app.add_subcommand("ensemble", "Greedy text-template ensemble");
  ensemble->add_option("--bundle", ens.bundle, "embedding bundle directory")->required();
  ensemble->add_option("--criterion", ens.criterion, "uniformity|atfd")
      ->check(CLI::IsMember({"uniformity", "atfd"}));
  ensemble->add_option("--t", ens.t, "uniformity temperature");
  ensemble->add_option("--out", ens.out, "prototype file")->required();

  ConfigFlags synth_cfg, train_cfg, adapt_cfg, eval_cfg, grad_cfg;
  std::string out, data_dir, ckpt_dir, prompt_dir, task = "classification";
  int domain = 0;
  std::optional<std::size_t> support;
  double eps = 1e-5;
  bool perturb = false;

  CLI::App* synth = app.add_subcommand("synth", "Generate the synthetic benchmark");
  add_config_flags(synth, synth_cfg);
  synth->add_option("--out", out, "dataset directory")->required();

  CLI::App* train = app.add_subcommand("train", "Episodic training on source domains");
  add_config_flags(train, train_cfg);
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--out", out, "checkpoint directory")->required();

  CLI::App* adapt_cmd = app.add_subcommand("adapt", "Compute a domain prompt from unlabeled support");
  add_config_flags(adapt_cmd, adapt_cfg);
  adapt_cmd->add_option("--ckpt", ckpt_dir, "checkpoint directory")->required();
  adapt_cmd->add_option("--data", data_dir, "dataset directory")->required();
  adapt_cmd->add_option("--domain", domain, "domain id")->required();
  adapt_cmd->add_option("--support", support, "support images (default from config)");
  adapt_cmd->add_option("--out", out, "prompt directory")->required();

  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate an adapted model on one domain");
  add_config_flags(eval_cmd, eval_cfg);
  eval_cmd->add_option("--ckpt", ckpt_dir, "checkpoint directory")->required();
  eval_cmd->add_option("--prompt", prompt_dir, "prompt directory")->required();
  eval_cmd->add_option("--data", data_dir, "dataset directory")->required();
  eval_cmd->add_option("--domain", domain, "domain id")->required();
  eval_cmd->add_option("--out", out, "metric JSON file")->required();

  CLI::App* grad = app.add_subcommand("gradcheck", "Finite-difference check of the episode loss");
  add_config_flags(grad, grad_cfg);
  grad->add_option("--out", out, "report JSON file")->required();
  grad->add_option("--eps", eps, "central-difference step");
  grad->add_option("--task", task, "classification|regression")
      ->check(CLI::IsMember({"classification", "regression"}));
  grad->add_flag("--perturb", perturb, "move parameters off their structured init first");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*ensemble) {
      cmd_ensemble(ens);
    } else if (*synth) {
      cmd_synth(synth_cfg.resolve(), out);
    } else if (*train) {
      cmd_train(train_cfg.resolve(), data_dir, out);
    } else if (*adapt_cmd) {
      const RunConfig run = adapt_cfg.resolve();
      cmd_adapt(run, ckpt_dir, data_dir, domain, support.value_or(run.support), out);
    } else if (*eval_cmd) {
      cmd_eval(eval_cfg.resolve(), ckpt_dir, prompt_dir, data_dir, domain, out);
    } else if (*grad) {
      return cmd_gradcheck(grad_cfg.resolve(), eps, perturb, task, out);
    }
  } catch (const ValidationError& e) {
    return report_error("validation", e.what(), kExitValidation);
  } catch (const NumericalError& e) {
    return report_error("numerical", e.what(), kExitNumerical);
  } catch (const std::exception& e) {
    return report_error("failure", e.what(), kExitValidation);
  }
  return kExitOk;
}
