#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "l2c/cpnet.hpp"
#include "l2c/daf.hpp"
#include "l2c/domain_prompt.hpp"
#include "l2c/embedding_store.hpp"
#include "l2c/frozen_encoder.hpp"
#include "l2c/text_pipeline.hpp"

namespace l2c {

enum class Task { kClassification, kRegression };

std::string to_string(Task t);
Task parse_task(const std::string& s);

/// Component switches used to reproduce the ablation variants.
struct Ablation {
  bool revert_attention = true;
  bool daf = true;
  bool refine = true;
  bool greedy = true;
  bool uniformity = true;

  json to_json() const;
  static Ablation from_json(const json& j);
};

struct ModelConfig {
  EncoderConfig encoder;
  std::size_t cp_depth = 2;
  std::size_t heads = 1;
  std::size_t ffn_hidden = 64;
  std::size_t cache_size = 5;  // L
  double logit_scale = 10.0;
  Task task = Task::kClassification;
  DispersionCriterion criterion = DispersionCriterion::kUniformity;
  double uniformity_t = kDefaultUniformityT;
  double lambda = 0.1;
  Ablation ablation;
  std::uint64_t seed = 0;

  json to_json() const;
  static ModelConfig from_json(const json& j);
};

/// Frozen-encoder products of one image, computed once and reused.
struct EncodedImage {
  Matrix input;    // [CLS; patch embeddings], (l+1) x d
  Matrix frozen;   // frozen encoder output, (l+1) x d
  Matrix patches;  // patch embeddings, l x d
};

/// Builds the text prototypes a model starts from: greedy selection, or the
/// plain template average when selection is ablated or there is one class.
TextPrototypes initial_text(const EmbeddingBundle& bundle, const ModelConfig& cfg);

class L2CModel {
 public:
  L2CModel(const ModelConfig& cfg, const TextPrototypes& text);

  static L2CModel from_checkpoint(const Checkpoint& ckpt);
  Checkpoint to_checkpoint() const;

  const ModelConfig& config() const { return cfg_; }
  const FrozenEncoder& encoder() const { return encoder_; }
  const TextPrototypes& raw_text() const { return text_; }
  std::size_t class_count() const { return text_.matrix.rows(); }
  std::size_t width() const { return cfg_.encoder.width; }

  EncodedImage encode(const Matrix& grid) const;

  /// I + CP_rt (or I + CP when revert attention is ablated).
  Var complemented(Tape& tape, const EncodedImage& img);
  /// Refined text features (raw prototypes when refinement is ablated).
  Var text_features(Tape& tape);
  /// Domain prompt from unlabeled support images, (L+1) x d.
  Var domain_prompt(Tape& tape, std::span<const EncodedImage* const> support);
  /// Mean complemented token sequence of the support images, (l+1) x d.
  Var image_context(Tape& tape, std::span<const EncodedImage* const> support);

  struct Features {
    Var image;       // B x d, unit rows
    Var prototypes;  // C x d, unit rows
    Var text;        // refined text, C x d
  };
  /// Adapted features of `images`. `prompt` and `context` are ignored when
  /// fusion is ablated.
  Features features(Tape& tape, Var prompt, Var context,
                    std::span<const EncodedImage* const> images);

  struct EpisodeLoss {
    Var total;
    double task_loss = 0.0;
    double uniformity = 0.0;  // uniformity of the refined text (diagnostic)
  };
  EpisodeLoss episode_loss(Tape& tape, std::span<const EncodedImage* const> support,
                           std::span<const EncodedImage* const> query, std::span<const int> labels,
                           std::span<const double> targets);

  /// Everything inference needs from one domain, computed once.
  struct PromptState {
    Matrix prompt;       // DP
    Matrix context;      // support-mean image tokens
    Matrix prompt_text;  // DP_T
    Matrix prototypes;   // adapted class prototypes, unit rows
  };
  PromptState prepare_prompt(const Matrix& prompt, const Matrix& context);
  /// Per-image logits (1 x C).
  Matrix logits(const PromptState& state, const EncodedImage& img);

  std::vector<Parameter*> trainable_parameters();
  std::vector<Parameter*> learnable_parameters();
  std::vector<const Parameter*> learnable_parameters() const;

  DomainCache& cache() { return cache_; }
  const DomainCache& cache() const { return cache_; }
  Parameter& domain_token() { return domain_token_; }
  CPNet& cpnet() { return cpnet_; }
  DAF& daf() { return daf_; }
  RefinementParams& refinement() { return refine_; }

 private:
  ModelConfig cfg_;
  FrozenEncoder encoder_;
  TextPrototypes text_;
  CPNet cpnet_;
  DomainCache cache_;
  Parameter domain_token_;
  DAF daf_;
  RefinementParams refine_;
};

}  // namespace l2c
