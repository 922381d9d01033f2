#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "l2c/autodiff.hpp"
#include "l2c/random.hpp"
#include "l2c/transformer.hpp"

namespace l2c {

/// Domain-aware fusion: four cross-attention blocks.
///   stage 1: DP_T = CA(q=DP, ctx=text),   DP_I = CA(q=DP, ctx=image context)
///   stage 2: image feature = CLS row of CA(q=image, ctx=DP_T)
///            prototypes    = CA(q=text, ctx=DP_I)
/// Stage-2 outputs are L2-normalized. The image context is the mean token
/// sequence of the domain's support images, so one prototype set serves every
/// image of the domain.
class DAF {
 public:
  DAF() = default;
  DAF(BlockShape shape, Rng& rng);

  Var project_text(Tape& tape, Var prompt, Var text);
  Var project_image(Tape& tape, Var prompt, Var image);

  /// Normalized 1 x d CLS feature. Only the CLS query row is evaluated; query
  /// rows of a cross-attention block do not interact.
  Var image_feature(Tape& tape, Var prompt_text, Var image);
  /// Full (l+1) x d image-query branch output, unnormalized.
  Var image_branch(Tape& tape, Var prompt_text, Var image);
  /// Normalized C x d adapted class prototypes.
  Var prototypes(Tape& tape, Var prompt_image, Var text);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

 private:
  std::vector<CrossAttentionBlock> blocks_;  // prompt-text, prompt-image, image-query, text-query
};

struct ProjectedPrompt {
  Matrix prompt_text;   // DP_T
  Matrix prompt_image;  // DP_I
};

/// Fused features for a batch of images sharing one domain prompt.
struct AdaptedFeatures {
  Matrix image_features;    // B x d, unit rows
  Matrix class_prototypes;  // C x d, unit rows
};

/// `image` is the (l+1) x d image context the prompt is conditioned on.
ProjectedPrompt project_prompt(DAF& daf, const Matrix& prompt, const Matrix& text,
                               const Matrix& image);
/// Fuses each (l+1) x d token sequence in `images` with DP_T and the text with DP_I.
AdaptedFeatures cross_fuse(DAF& daf, const ProjectedPrompt& projected,
                           std::span<const Matrix* const> images, const Matrix& text);

/// B x C cosine similarities of image features against class prototypes.
Matrix logits(const AdaptedFeatures& feats);

/// Symmetric InfoNCE summed over both directions and all B pairs, on a B x B
/// similarity matrix whose diagonal holds the positive pairs.
double clip_loss(const Matrix& similarities);
/// Builds S_ij = scale * I_i . T_j with T_j = prototypes[label_j].
Matrix pair_similarities(const AdaptedFeatures& feats, std::span<const int> labels,
                         double logit_scale = 1.0);
double clip_loss(const AdaptedFeatures& feats, std::span<const int> labels,
                 double logit_scale = 1.0);

/// Mean squared error of pred_i = I_i . P[0] against targets. C must be 1.
double regression_loss(const AdaptedFeatures& feats, std::span<const double> targets);

double total_loss(double clip, double regularizer);

namespace ad {
Var clip_loss(Var similarities);
Var mse(Var predictions, const Matrix& targets);
/// Row-wise dot products of two equally shaped matrices, R x 1.
Var row_dot(Var a, Var b);
}  // namespace ad

}  // namespace l2c
