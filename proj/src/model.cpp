#include "l2c/model.hpp"

#include <cmath>

#include "l2c/errors.hpp"
#include "l2c/numerics.hpp"

namespace l2c {

std::string to_string(Task t) { return t == Task::kClassification ? "classification" : "regression"; }

Task parse_task(const std::string& s) {
  if (s == "classification") return Task::kClassification;
  if (s == "regression") return Task::kRegression;
  throw ValidationError("unknown task '" + s + "' (expected classification|regression)");
}

json Ablation::to_json() const {
  return {{"revert_attention", revert_attention}, {"daf", daf}, {"refine", refine},
          {"greedy", greedy}, {"uniformity", uniformity}};
}

Ablation Ablation::from_json(const json& j) {
  Ablation a;
  a.revert_attention = j.value("revert_attention", a.revert_attention);
  a.daf = j.value("daf", a.daf);
  a.refine = j.value("refine", a.refine);
  a.greedy = j.value("greedy", a.greedy);
  a.uniformity = j.value("uniformity", a.uniformity);
  return a;
}

json ModelConfig::to_json() const {
  return {{"encoder", encoder.to_json()},
          {"cp_depth", cp_depth},
          {"heads", heads},
          {"ffn_hidden", ffn_hidden},
          {"cache_size", cache_size},
          {"logit_scale", logit_scale},
          {"task", to_string(task)},
          {"criterion", to_string(criterion)},
          {"uniformity_t", uniformity_t},
          {"lambda", lambda},
          {"ablation", ablation.to_json()},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  if (j.contains("encoder")) c.encoder = EncoderConfig::from_json(j.at("encoder"));
  c.cp_depth = j.value("cp_depth", c.cp_depth);
  c.heads = j.value("heads", c.heads);
  c.ffn_hidden = j.value("ffn_hidden", c.ffn_hidden);
  c.cache_size = j.value("cache_size", c.cache_size);
  c.logit_scale = j.value("logit_scale", c.logit_scale);
  c.task = parse_task(j.value("task", to_string(c.task)));
  c.criterion = parse_criterion(j.value("criterion", to_string(c.criterion)));
  c.uniformity_t = j.value("uniformity_t", c.uniformity_t);
  c.lambda = j.value("lambda", c.lambda);
  if (j.contains("ablation")) c.ablation = Ablation::from_json(j.at("ablation"));
  c.seed = j.value("seed", c.seed);
  return c;
}

TextPrototypes initial_text(const EmbeddingBundle& bundle, const ModelConfig& cfg) {
  if (!cfg.ablation.greedy || bundle.class_count() < 2) return average_all_templates(bundle);
  return greedy_ensemble(bundle, cfg.criterion, cfg.uniformity_t);
}

L2CModel::L2CModel(const ModelConfig& cfg, const TextPrototypes& text)
    : cfg_(cfg), encoder_(cfg.encoder), text_(text) {
  const std::size_t d = cfg.encoder.width;
  if (text.matrix.cols() != d || text.matrix.rows() == 0) {
    throw DimensionError("text prototypes are " + text.matrix.shape_string() +
                         ", model width is " + std::to_string(d));
  }
  if (cfg.task == Task::kRegression && text.matrix.rows() != 1) {
    throw ValidationError("regression needs exactly one text prototype row");
  }
  if (!(cfg.logit_scale > 0.0)) throw ValidationError("logit_scale must be positive");
  const BlockShape shape{d, cfg.heads, cfg.ffn_hidden};
  Rng cp_rng(derive_seed(cfg.seed, 1));
  cpnet_ = CPNet(cfg.cp_depth, shape, cp_rng);
  Rng cache_rng(derive_seed(cfg.seed, 2));
  cache_ = DomainCache(cfg.cache_size, d, cache_rng);
  Rng token_rng(derive_seed(cfg.seed, 3));
  domain_token_ = Parameter("domain_token", random_normal(1, d, kPromptInitStd, token_rng));
  Rng daf_rng(derive_seed(cfg.seed, 4));
  daf_ = DAF(shape, daf_rng);
  refine_ = RefinementParams(text.matrix.rows(), d);
}

Checkpoint L2CModel::to_checkpoint() const {
  Checkpoint ck;
  ck.config = {{"model", cfg_.to_json()},
               {"text",
                {{"selected_template_indices", text_.selected_template_indices},
                 {"criterion_trace", text_.criterion_trace}}}};
  for (const Parameter* p : learnable_parameters()) ck.blobs.emplace(p->name, p->value);
  ck.blobs.emplace("text.t_gre", text_.matrix);
  return ck;
}

L2CModel L2CModel::from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.config.contains("model")) throw FormatError("checkpoint config lacks a model section");
  const ModelConfig cfg = ModelConfig::from_json(ckpt.config.at("model"));
  auto blob = [&](const std::string& name) -> const Matrix& {
    auto it = ckpt.blobs.find(name);
    if (it == ckpt.blobs.end()) throw FormatError("checkpoint is missing blob '" + name + "'");
    return it->second;
  };
  TextPrototypes text;
  text.matrix = blob("text.t_gre");
  if (ckpt.config.contains("text")) {
    const json& t = ckpt.config.at("text");
    text.selected_template_indices =
        t.value("selected_template_indices", std::vector<std::size_t>{});
    text.criterion_trace = t.value("criterion_trace", std::vector<double>{});
  }
  L2CModel model(cfg, text);
  for (Parameter* p : model.learnable_parameters()) {
    const Matrix& m = blob(p->name);
    if (!m.same_shape(p->value)) {
      throw ShapeMismatchError("blob '" + p->name + "' is " + m.shape_string() + ", expected " +
                               p->value.shape_string());
    }
    p->value = m;
    p->zero_grad();
  }
  return model;
}

EncodedImage L2CModel::encode(const Matrix& grid) const {
  return {encoder_.input_tokens(grid), encoder_.encode(grid), encoder_.embed_patches(grid)};
}

Var L2CModel::complemented(Tape& tape, const EncodedImage& img) {
  Var frozen = tape.constant_ref(img.frozen);
  Var cp = cpnet_.forward(tape, tape.constant_ref(img.input));
  Var extra = cfg_.ablation.revert_attention ? ad::revert_attention(cp, frozen) : cp;
  return ad::complement(frozen, extra);
}

Var L2CModel::text_features(Tape& tape) {
  Var raw = tape.constant_ref(text_.matrix);
  return cfg_.ablation.refine ? refine(tape, raw, refine_) : raw;
}

Var L2CModel::domain_prompt(Tape& tape, std::span<const EncodedImage* const> support) {
  std::vector<const Matrix*> patches;
  patches.reserve(support.size());
  for (const EncodedImage* e : support) patches.push_back(&e->patches);
  Var d_tilde = aggregate_domain_token(tape, cpnet_, domain_token_, patches);
  return assemble_prompt(query_cache(tape, cache_, d_tilde), d_tilde);
}

Var L2CModel::image_context(Tape& tape, std::span<const EncodedImage* const> support) {
  if (support.empty()) throw ValidationError("image context needs at least one support image");
  Var sum = complemented(tape, *support[0]);
  for (std::size_t i = 1; i < support.size(); ++i) sum = ad::add(sum, complemented(tape, *support[i]));
  return ad::scale(sum, 1.0 / static_cast<double>(support.size()));
}

L2CModel::Features L2CModel::features(Tape& tape, Var prompt, Var context,
                                      std::span<const EncodedImage* const> images) {
  Features f;
  f.text = text_features(tape);
  std::vector<Var> rows;
  rows.reserve(images.size());
  if (!cfg_.ablation.daf) {
    for (const EncodedImage* e : images) rows.push_back(ad::slice_rows(complemented(tape, *e), 0, 1));
    f.image = ad::l2_normalize_rows(ad::concat_rows(rows));
    f.prototypes = ad::l2_normalize_rows(f.text);
    return f;
  }
  Var prompt_text = daf_.project_text(tape, prompt, f.text);
  for (const EncodedImage* e : images) rows.push_back(daf_.image_feature(tape, prompt_text, complemented(tape, *e)));
  f.image = ad::concat_rows(rows);
  f.prototypes = daf_.prototypes(tape, daf_.project_image(tape, prompt, context), f.text);
  return f;
}

L2CModel::EpisodeLoss L2CModel::episode_loss(Tape& tape,
                                             std::span<const EncodedImage* const> support,
                                             std::span<const EncodedImage* const> query,
                                             std::span<const int> labels,
                                             std::span<const double> targets) {
  if (query.empty()) throw ValidationError("episode has an empty query set");
  Var prompt, context;
  if (cfg_.ablation.daf) {
    prompt = domain_prompt(tape, support);
    context = image_context(tape, support);
  }
  Features f = features(tape, prompt, context, query);

  EpisodeLoss out;
  if (class_count() >= 2) out.uniformity = uniformity_loss(f.text.value(), cfg_.uniformity_t);

  if (cfg_.task == Task::kRegression) {
    if (targets.size() != query.size()) {
      throw DimensionError("regression episode has " + std::to_string(query.size()) +
                           " queries but " + std::to_string(targets.size()) + " targets");
    }
    std::vector<Var> rows(query.size(), f.prototypes);
    Var preds = ad::row_dot(f.image, ad::concat_rows(rows));
    out.total = ad::mse(preds, Matrix(targets.size(), 1, std::vector<double>(targets.begin(), targets.end())));
    out.task_loss = out.total.value()(0, 0);
    return out;
  }

  if (labels.size() != query.size()) {
    throw DimensionError("episode has " + std::to_string(query.size()) + " queries but " +
                         std::to_string(labels.size()) + " labels");
  }
  std::vector<Var> paired;
  paired.reserve(query.size());
  for (std::size_t i = 0; i < query.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= class_count()) {
      throw ValidationError("label " + std::to_string(labels[i]) + " out of range for " +
                            std::to_string(class_count()) + " classes");
    }
    paired.push_back(ad::slice_rows(f.prototypes, static_cast<std::size_t>(labels[i]), 1));
  }
  Var sims = ad::scale(ad::matmul_nt(f.image, ad::concat_rows(paired)), cfg_.logit_scale);
  Var clip = ad::clip_loss(sims);
  out.task_loss = clip.value()(0, 0);
  out.total = clip;
  if (cfg_.ablation.uniformity && cfg_.lambda > 0.0 && class_count() >= 2) {
    out.total = ad::add(clip, ad::uniformity_regularizer(f.text, cfg_.criterion, cfg_.lambda,
                                                         cfg_.uniformity_t));
  }
  return out;
}

L2CModel::PromptState L2CModel::prepare_prompt(const Matrix& prompt, const Matrix& context) {
  Tape tape(false);
  PromptState s;
  s.prompt = prompt;
  s.context = context;
  Var text = text_features(tape);
  if (!cfg_.ablation.daf) {
    s.prototypes = ad::l2_normalize_rows(text).value();
    return s;
  }
  if (prompt.cols() != width() || prompt.rows() != cfg_.cache_size + 1) {
    throw DimensionError("domain prompt is " + prompt.shape_string() + ", expected " +
                         shape_string(cfg_.cache_size + 1, width()));
  }
  if (context.cols() != width() || context.rows() != cfg_.encoder.patches + 1) {
    throw DimensionError("image context is " + context.shape_string() + ", expected " +
                         shape_string(cfg_.encoder.patches + 1, width()));
  }
  Var dp = tape.constant_ref(prompt);
  s.prompt_text = daf_.project_text(tape, dp, text).value();
  s.prototypes = daf_.prototypes(tape, daf_.project_image(tape, dp, tape.constant_ref(context)), text).value();
  return s;
}

Matrix L2CModel::logits(const PromptState& state, const EncodedImage& img) {
  Tape tape(false);
  Var complemented_img = complemented(tape, img);
  Var feat = cfg_.ablation.daf
                 ? daf_.image_feature(tape, tape.constant_ref(state.prompt_text), complemented_img)
                 : ad::l2_normalize_rows(ad::slice_rows(complemented_img, 0, 1));
  return matmul_nt(feat.value(), state.prototypes);
}

std::vector<Parameter*> L2CModel::learnable_parameters() {
  std::vector<Parameter*> out = cpnet_.parameters();
  out.push_back(&cache_.keys());
  out.push_back(&cache_.values());
  out.push_back(&domain_token_);
  for (Parameter* p : daf_.parameters()) out.push_back(p);
  for (Parameter* p : refine_.parameters()) out.push_back(p);
  return out;
}

std::vector<const Parameter*> L2CModel::learnable_parameters() const {
  std::vector<const Parameter*> out = cpnet_.parameters();
  out.push_back(&cache_.keys());
  out.push_back(&cache_.values());
  out.push_back(&domain_token_);
  for (const Parameter* p : daf_.parameters()) out.push_back(p);
  out.push_back(&refine_.class_mix);
  out.push_back(&refine_.feature_mix);
  return out;
}

std::vector<Parameter*> L2CModel::trainable_parameters() {
  std::vector<Parameter*> out = cpnet_.parameters();
  if (cfg_.ablation.daf) {
    out.push_back(&cache_.keys());
    out.push_back(&cache_.values());
    out.push_back(&domain_token_);
    for (Parameter* p : daf_.parameters()) out.push_back(p);
  }
  if (cfg_.ablation.refine) {
    for (Parameter* p : refine_.parameters()) out.push_back(p);
  }
  return out;
}

}  // namespace l2c
