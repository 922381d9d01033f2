#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "l2c/errors.hpp"
#include "l2c/gradcheck.hpp"
#include "l2c/numerics.hpp"
#include "l2c/toy_episode.hpp"
#include "support.hpp"

using namespace l2c;
using namespace l2c::testing;

TEST_CASE("full episode gradient matches central differences") {
  for (std::uint64_t seed : {1, 2}) {
    ToyEpisode ep = make_toy_episode(seed);
    const auto params = ep.model.learnable_parameters();
    const GradCheckResult r = grad_check(ep.loss(), params, 1e-5);
    INFO("worst element " << r.worst_parameter << "[" << r.worst_index << "] analytic "
                          << r.worst_analytic << " numeric " << r.worst_numeric);
    CHECK(r.max_tensor_rel_error < 1e-4);
    CHECK(r.max_rel_error < 1e-3);
    CHECK(r.tensors.size() == params.size());
    for (const TensorGradError& t : r.tensors) {
      INFO(t.name);
      CHECK(t.grad_norm > 0.0);
    }
  }
}

TEST_CASE("regression and ablated variants also pass the gradient check") {
  ModelConfig reg = toy_config(Task::kRegression);
  ModelConfig no_rt = toy_config();
  no_rt.ablation.revert_attention = false;
  ModelConfig atfd = toy_config();
  atfd.criterion = DispersionCriterion::kAtfd;
  ModelConfig no_daf = toy_config();
  no_daf.ablation.daf = false;
  for (const ModelConfig& cfg : {reg, no_rt, atfd, no_daf}) {
    ToyEpisode ep = make_toy_episode(3, cfg);
    const auto params = ep.model.trainable_parameters();
    CHECK(grad_check(ep.loss(), params, 1e-5).max_tensor_rel_error < 1e-4);
  }
}

TEST_CASE("ablation switches decide what trains") {
  auto names = [](L2CModel& m) {
    std::size_t n = 0;
    for (Parameter* p : m.trainable_parameters()) n += p->name.rfind("daf.", 0) == 0 || p->name == "cache.K";
    return n;
  };
  ToyEpisode full = make_toy_episode(4);
  CHECK(names(full.model) > 0);
  ModelConfig cfg = toy_config();
  cfg.ablation.daf = false;
  cfg.ablation.refine = false;
  ToyEpisode bare = make_toy_episode(4, cfg);
  CHECK(names(bare.model) == 0);
  for (Parameter* p : bare.model.trainable_parameters()) CHECK(p->name.rfind("cpnet.", 0) == 0);
}

TEST_CASE("checkpoint round trip reproduces the model") {
  ToyEpisode ep = make_toy_episode(5);
  const Checkpoint ck = ep.model.to_checkpoint();
  L2CModel back = L2CModel::from_checkpoint(ck);
  CHECK(checkpoint_digest(back.to_checkpoint()) == checkpoint_digest(ck));
  Tape a(false), b(false);
  const double la = ep.model.episode_loss(a, ep.support_ptrs(), ep.query_ptrs(), ep.labels, ep.targets).total.value()(0, 0);
  const double lb = back.episode_loss(b, ep.support_ptrs(), ep.query_ptrs(), ep.labels, ep.targets).total.value()(0, 0);
  CHECK(la == lb);

  Checkpoint missing = ck;
  missing.blobs.erase("cache.V");
  CHECK_THROWS_AS(L2CModel::from_checkpoint(missing), FormatError);
  Checkpoint wrong = ck;
  wrong.blobs["domain_token"] = Matrix(1, 5);
  CHECK_THROWS_AS(L2CModel::from_checkpoint(wrong), ShapeMismatchError);
}

TEST_CASE("inference path agrees with the training forward pass") {
  ToyEpisode ep = make_toy_episode(6);
  Tape t(false);
  const Var prompt = ep.model.domain_prompt(t, ep.support_ptrs());
  const Var context = ep.model.image_context(t, ep.support_ptrs());
  const auto f = ep.model.features(t, prompt, context, ep.query_ptrs());
  const Matrix batch = matmul_nt(f.image.value(), f.prototypes.value());
  const L2CModel::PromptState state = ep.model.prepare_prompt(prompt.value(), context.value());
  for (std::size_t i = 0; i < ep.query.size(); ++i) {
    const Matrix row = ep.model.logits(state, ep.query[i]);
    for (std::size_t c = 0; c < row.cols(); ++c) CHECK(std::abs(row(0, c) - batch(i, c)) < 1e-12);
  }
  CHECK_THROWS_AS(ep.model.prepare_prompt(Matrix(2, 8), context.value()), DimensionError);
}

TEST_CASE("support order does not change the prompt") {
  ToyEpisode ep = make_toy_episode(7, toy_config(), 4, 1);
  auto fwd = ep.support_ptrs();
  std::vector<const EncodedImage*> rev(fwd.rbegin(), fwd.rend());
  Tape t(false);
  CHECK(max_abs_diff(ep.model.domain_prompt(t, fwd).value(), ep.model.domain_prompt(t, rev).value()) < 1e-9);
  CHECK(max_abs_diff(ep.model.image_context(t, fwd).value(), ep.model.image_context(t, rev).value()) < 1e-12);
}

TEST_CASE("model construction rejects inconsistent inputs") {
  TextPrototypes text;
  text.matrix = Matrix(3, 5);
  CHECK_THROWS_AS(L2CModel(toy_config(), text), DimensionError);
  text.matrix = Matrix(3, 8);
  CHECK_THROWS_AS(L2CModel(toy_config(Task::kRegression), text), ValidationError);
  ModelConfig cfg = toy_config();
  cfg.logit_scale = 0.0;
  CHECK_THROWS_AS(L2CModel(cfg, text), ValidationError);
}
