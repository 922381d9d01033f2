#include "l2c/daf.hpp"

#include <algorithm>
#include <cmath>

#include "l2c/errors.hpp"
#include "l2c/numerics.hpp"

namespace l2c {

DAF::DAF(BlockShape shape, Rng& rng) {
  for (const char* name : {"daf.prompt_text", "daf.prompt_image", "daf.image_query", "daf.text_query"}) {
    blocks_.emplace_back(name, shape, rng);
  }
}

Var DAF::project_text(Tape& tape, Var prompt, Var text) { return blocks_[0].forward(tape, prompt, text); }

Var DAF::project_image(Tape& tape, Var prompt, Var image) { return blocks_[1].forward(tape, prompt, image); }

Var DAF::image_branch(Tape& tape, Var prompt_text, Var image) {
  return blocks_[2].forward(tape, image, prompt_text);
}

Var DAF::image_feature(Tape& tape, Var prompt_text, Var image) {
  if (image.rows() < 2) throw DimensionError("image tokens must include a CLS row and patches");
  Var cls = ad::slice_rows(image, 0, 1);
  return ad::l2_normalize_rows(blocks_[2].forward(tape, cls, prompt_text));
}

Var DAF::prototypes(Tape& tape, Var prompt_image, Var text) {
  return ad::l2_normalize_rows(blocks_[3].forward(tape, text, prompt_image));
}

std::vector<Parameter*> DAF::parameters() {
  std::vector<Parameter*> out;
  for (CrossAttentionBlock& b : blocks_)
    for (Parameter* p : b.parameters()) out.push_back(p);
  return out;
}

std::vector<const Parameter*> DAF::parameters() const {
  std::vector<const Parameter*> out;
  for (const CrossAttentionBlock& b : blocks_)
    for (const Parameter* p : b.parameters()) out.push_back(p);
  return out;
}

ProjectedPrompt project_prompt(DAF& daf, const Matrix& prompt, const Matrix& text,
                               const Matrix& image) {
  Tape tape(false);
  Var dp = tape.constant_ref(prompt);
  return {daf.project_text(tape, dp, tape.constant_ref(text)).value(),
          daf.project_image(tape, dp, tape.constant_ref(image)).value()};
}

AdaptedFeatures cross_fuse(DAF& daf, const ProjectedPrompt& projected,
                           std::span<const Matrix* const> images, const Matrix& text) {
  Tape tape(false);
  Var prompt_text = tape.constant_ref(projected.prompt_text);
  AdaptedFeatures out;
  out.image_features = Matrix(images.size(), projected.prompt_text.cols());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Matrix f = daf.image_feature(tape, prompt_text, tape.constant_ref(*images[i])).value();
    std::copy(f.data().begin(), f.data().end(), out.image_features.row(i).begin());
  }
  out.class_prototypes =
      daf.prototypes(tape, tape.constant_ref(projected.prompt_image), tape.constant_ref(text)).value();
  return out;
}

Matrix logits(const AdaptedFeatures& feats) {
  if (feats.image_features.cols() != feats.class_prototypes.cols()) {
    throw DimensionError("logits: image features are " + feats.image_features.shape_string() +
                         " but prototypes are " + feats.class_prototypes.shape_string());
  }
  return matmul_nt(feats.image_features, feats.class_prototypes);
}

double clip_loss(const Matrix& s) {
  if (s.rows() == 0 || s.rows() != s.cols()) {
    throw DimensionError("clip_loss needs a square non-empty similarity matrix, got " + s.shape_string());
  }
  require_finite(s, "clip_loss similarities");
  const Matrix row = softmax(s, Axis::kRows);
  const Matrix col = softmax(s, Axis::kCols);
  double loss = 0.0;
  for (std::size_t i = 0; i < s.rows(); ++i) loss -= std::log(row(i, i)) + std::log(col(i, i));
  return loss;
}

Matrix pair_similarities(const AdaptedFeatures& feats, std::span<const int> labels,
                         double logit_scale) {
  const Matrix& img = feats.image_features;
  const Matrix& p = feats.class_prototypes;
  const std::size_t b = img.rows();
  if (labels.size() != b) {
    throw DimensionError("pair_similarities: " + std::to_string(b) + " images but " +
                         std::to_string(labels.size()) + " labels");
  }
  Matrix paired(b, p.cols());
  for (std::size_t j = 0; j < b; ++j) {
    if (labels[j] < 0 || static_cast<std::size_t>(labels[j]) >= p.rows()) {
      throw ValidationError("label " + std::to_string(labels[j]) + " out of range for " +
                            std::to_string(p.rows()) + " classes");
    }
    std::copy(p.row(labels[j]).begin(), p.row(labels[j]).end(), paired.row(j).begin());
  }
  Matrix s = matmul_nt(img, paired);
  for (double& v : s.data()) v *= logit_scale;
  return s;
}

double clip_loss(const AdaptedFeatures& feats, std::span<const int> labels, double logit_scale) {
  return clip_loss(pair_similarities(feats, labels, logit_scale));
}

double regression_loss(const AdaptedFeatures& feats, std::span<const double> targets) {
  const Matrix& img = feats.image_features;
  const Matrix& p = feats.class_prototypes;
  if (targets.size() != img.rows()) {
    throw DimensionError("regression_loss: " + std::to_string(img.rows()) + " images but " +
                         std::to_string(targets.size()) + " targets");
  }
  if (targets.empty()) throw ValidationError("regression_loss needs at least one target");
  if (p.rows() != 1) {
    throw ValidationError("regression needs exactly one prototype row, got " + std::to_string(p.rows()));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < img.rows(); ++i) {
    double pred = 0.0;
    for (std::size_t k = 0; k < img.cols(); ++k) pred += img(i, k) * p(0, k);
    total += (pred - targets[i]) * (pred - targets[i]);
  }
  return total / static_cast<double>(targets.size());
}

double total_loss(double clip, double regularizer) { return clip + regularizer; }

namespace ad {

Var clip_loss(Var similarities) {
  const Matrix& s = similarities.value();
  const double value = l2c::clip_loss(s);
  return similarities.tape().push(
      Matrix(1, 1, value), {similarities}, [similarities](Tape& tape, std::size_t self) {
        const Matrix& s = similarities.value();
        const double g = tape.grad(self)(0, 0);
        const Matrix row = softmax(s, Axis::kRows);
        const Matrix col = softmax(s, Axis::kCols);
        Matrix& gs = tape.grad_acc(similarities);
        for (std::size_t i = 0; i < s.rows(); ++i)
          for (std::size_t j = 0; j < s.cols(); ++j)
            gs(i, j) += g * (row(i, j) + col(i, j) - (i == j ? 2.0 : 0.0));
      });
}

Var mse(Var predictions, const Matrix& targets) {
  require_same_shape(predictions.value(), targets, "mse");
  const Matrix& p = predictions.value();
  const double n = static_cast<double>(p.rows() * p.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < p.data().size(); ++i) {
    const double diff = p.data()[i] - targets.data()[i];
    total += diff * diff;
  }
  return predictions.tape().push(
      Matrix(1, 1, total / n), {predictions}, [predictions, targets, n](Tape& tape, std::size_t self) {
        const double g = tape.grad(self)(0, 0);
        const Matrix& p = predictions.value();
        Matrix& gp = tape.grad_acc(predictions);
        for (std::size_t i = 0; i < p.data().size(); ++i)
          gp.data()[i] += g * 2.0 * (p.data()[i] - targets.data()[i]) / n;
      });
}

Var row_dot(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "row_dot");
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  Matrix out(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, 0) += x(r, c) * y(r, c);
  return a.tape().push(std::move(out), {a, b}, [a, b](Tape& tape, std::size_t self) {
    const Matrix& g = tape.grad(self);
    const Matrix& x = a.value();
    const Matrix& y = b.value();
    if (tape.needs_grad(a)) {
      Matrix& ga = tape.grad_acc(a);
      for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) ga(r, c) += g(r, 0) * y(r, c);
    }
    if (tape.needs_grad(b)) {
      Matrix& gb = tape.grad_acc(b);
      for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) gb(r, c) += g(r, 0) * x(r, c);
    }
  });
}

}  // namespace ad
}  // namespace l2c
