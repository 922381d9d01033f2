#include "l2c/trainer.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "l2c/errors.hpp"
#include "l2c/numerics.hpp"

namespace l2c {
namespace {

std::vector<std::size_t> draw_without_replacement(const std::vector<std::size_t>& pool,
                                                  std::size_t count, Rng& rng) {
  std::vector<std::size_t> v = pool;
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, v.size() - 1);
    std::swap(v[i], v[pick(rng)]);
  }
  v.resize(count);
  return v;
}

Episode split(int domain, std::vector<std::size_t> drawn, std::size_t support) {
  Episode e;
  e.domain = domain;
  e.support.assign(drawn.begin(), drawn.begin() + static_cast<std::ptrdiff_t>(support));
  e.query.assign(drawn.begin() + static_cast<std::ptrdiff_t>(support), drawn.end());
  return e;
}

std::string describe(const Episode& e) {
  std::ostringstream os;
  os << "domain " << e.domain << ", support [";
  for (std::size_t i = 0; i < e.support.size(); ++i) os << (i ? "," : "") << e.support[i];
  os << "], query [";
  for (std::size_t i = 0; i < e.query.size(); ++i) os << (i ? "," : "") << e.query[i];
  os << "]";
  return os.str();
}

}  // namespace

std::string to_string(Sampling s) { return s == Sampling::kEpisodic ? "episodic" : "erm"; }

Sampling parse_sampling(const std::string& s) {
  if (s == "episodic") return Sampling::kEpisodic;
  if (s == "erm") return Sampling::kErm;
  throw ValidationError("unknown sampling '" + s + "' (expected episodic|erm)");
}

json TrainConfig::to_json() const {
  return {{"lr", lr},
          {"epochs", epochs},
          {"support", support},
          {"query", query},
          {"momentum", momentum},
          {"sampling", to_string(sampling)},
          {"max_steps", max_steps},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.epochs = j.value("epochs", c.epochs);
  c.support = j.value("support", c.support);
  c.query = j.value("query", c.query);
  c.momentum = j.value("momentum", c.momentum);
  c.sampling = parse_sampling(j.value("sampling", to_string(c.sampling)));
  c.max_steps = j.value("max_steps", c.max_steps);
  c.seed = j.value("seed", c.seed);
  return c;
}

TrainingSet make_training_set(const L2CModel& model, const std::vector<SyntheticImage>& images) {
  TrainingSet set;
  set.images.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const SyntheticImage& img = images[i];
    set.images.push_back(model.encode(img.grid));
    set.labels.push_back(img.label);
    set.domains.push_back(img.domain);
    set.targets.push_back(img.target);
    set.by_domain[img.domain].push_back(i);
  }
  return set;
}

Episode sample_episode(const TrainingSet& data, std::size_t support, std::size_t query, Rng& rng) {
  if (data.by_domain.empty()) throw ValidationError("training set has no domains");
  std::uniform_int_distribution<std::size_t> pick(0, data.by_domain.size() - 1);
  auto it = std::next(data.by_domain.begin(), static_cast<std::ptrdiff_t>(pick(rng)));
  const auto& [domain, pool] = *it;
  if (pool.size() < support + query) {
    throw ValidationError("domain " + std::to_string(domain) + " has " + std::to_string(pool.size()) +
                          " images, episode needs " + std::to_string(support + query));
  }
  return split(domain, draw_without_replacement(pool, support + query, rng), support);
}

Episode sample_pooled(const TrainingSet& data, std::size_t support, std::size_t query, Rng& rng) {
  if (data.size() < support + query) {
    throw ValidationError("training set has " + std::to_string(data.size()) +
                          " images, batch needs " + std::to_string(support + query));
  }
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return split(-1, draw_without_replacement(all, support + query, rng), support);
}

double cosine_lr(double lr0, std::size_t step, std::size_t total) {
  if (total <= 1) return lr0;
  const double progress = static_cast<double>(step) / static_cast<double>(total - 1);
  return lr0 * (1.0 + std::cos(std::numbers::pi * progress)) / 2.0;
}

std::string curve_csv(const std::vector<CurveRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "step,loss,lr,uniformity\n";
  for (const CurveRow& r : rows) os << r.step << ',' << r.loss << ',' << r.lr << ',' << r.uniformity << '\n';
  return os.str();
}

Trainer::Trainer(L2CModel& model, const TrainingSet& data, const TrainConfig& cfg)
    : model_(model), data_(data), cfg_(cfg), rng_(derive_seed(cfg.seed, 0x7EA1)) {
  if (cfg.support == 0 || cfg.query == 0) throw ValidationError("support and query sizes must be positive");
  if (!(cfg.lr >= 0.0)) throw ValidationError("learning rate must be non-negative");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) throw ValidationError("momentum must lie in [0, 1)");
  const std::size_t batch = cfg.support + cfg.query;
  steps_per_epoch_ = (data.size() + batch - 1) / batch;
  total_steps_ = cfg.epochs * steps_per_epoch_;
  if (cfg.max_steps > 0) total_steps_ = std::min(total_steps_, cfg.max_steps);
}

Episode Trainer::next_episode() {
  return cfg_.sampling == Sampling::kEpisodic ? sample_episode(data_, cfg_.support, cfg_.query, rng_)
                                              : sample_pooled(data_, cfg_.support, cfg_.query, rng_);
}

CurveRow Trainer::train_step(const Episode& episode, double lr) {
  std::vector<const EncodedImage*> support, query;
  std::vector<int> labels;
  std::vector<double> targets;
  for (std::size_t i : episode.support) support.push_back(&data_.images.at(i));
  for (std::size_t i : episode.query) {
    query.push_back(&data_.images.at(i));
    labels.push_back(data_.labels[i]);
    targets.push_back(data_.targets[i]);
  }

  const std::vector<Parameter*> params = model_.trainable_parameters();
  for (Parameter* p : params) p->zero_grad();
  Tape tape;
  L2CModel::EpisodeLoss loss;
  try {
    loss = model_.episode_loss(tape, support, query, labels, targets);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string(e.what()) + " at step " + std::to_string(step_) + " on " +
                         describe(episode));
  }
  const double value = loss.total.value()(0, 0);
  if (!std::isfinite(value)) {
    throw NumericalError("non-finite loss at step " + std::to_string(step_) + " on " + describe(episode));
  }
  tape.backward(loss.total);

  for (Parameter* p : params) {
    if (cfg_.momentum > 0.0) {
      Matrix& v = velocity_.try_emplace(p, p->value.rows(), p->value.cols()).first->second;
      for (std::size_t i = 0; i < v.data().size(); ++i) v.data()[i] = cfg_.momentum * v.data()[i] + p->grad.data()[i];
      add_acc(v, p->value, -lr);
    } else {
      add_acc(p->grad, p->value, -lr);
    }
  }
  return {step_, value, lr, loss.uniformity};
}

std::vector<CurveRow> Trainer::fit(const std::function<void(const CurveRow&)>& on_step) {
  std::vector<CurveRow> rows;
  rows.reserve(total_steps_);
  for (step_ = 0; step_ < total_steps_; ++step_) {
    const Episode e = next_episode();
    rows.push_back(train_step(e, cosine_lr(cfg_.lr, step_, total_steps_)));
    if (on_step) on_step(rows.back());
  }
  return rows;
}

}  // namespace l2c
