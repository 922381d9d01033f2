#include "l2c/runtime.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "l2c/errors.hpp"
#include "l2c/numerics.hpp"
#include "l2c/random.hpp"

namespace l2c {

PromptFile compute_prompt(L2CModel& model, std::span<const Matrix* const> support) {
  if (support.empty()) throw ValidationError("adaptation needs at least one support image");
  std::vector<EncodedImage> encoded;
  encoded.reserve(support.size());
  for (const Matrix* g : support) encoded.push_back(model.encode(*g));
  std::vector<const EncodedImage*> ptrs;
  for (const EncodedImage& e : encoded) ptrs.push_back(&e);
  Tape tape(false);
  PromptFile out;
  out.prompt = model.domain_prompt(tape, ptrs).value();
  out.image_context = model.image_context(tape, ptrs).value();
  require_finite(out.prompt, "domain prompt");
  require_finite(out.image_context, "image context");
  return out;
}

AdaptedModel::AdaptedModel(L2CModel model, const PromptFile& prompt) : model_(std::move(model)) {
  model_.cache().drop();
  state_ = model_.prepare_prompt(prompt.prompt, prompt.image_context);
}

Matrix AdaptedModel::infer(const Matrix& grid) { return model_.logits(state_, model_.encode(grid)); }

Matrix AdaptedModel::infer_batch(std::span<const Matrix* const> grids) {
  Matrix out;
  for (std::size_t i = 0; i < grids.size(); ++i) {
    const Matrix row = infer(*grids[i]);
    if (i == 0) out = Matrix(grids.size(), row.cols());
    std::copy(row.data().begin(), row.data().end(), out.row(i).begin());
  }
  return out;
}

AdaptedModel adapt(const Checkpoint& ckpt, std::span<const Matrix* const> support) {
  L2CModel model = L2CModel::from_checkpoint(ckpt);
  PromptFile prompt = compute_prompt(model, support);
  prompt.checkpoint_sha256 = checkpoint_digest(ckpt);
  return AdaptedModel(std::move(model), prompt);
}

std::vector<std::size_t> choose_support(std::size_t n, std::size_t count, std::uint64_t seed) {
  if (count == 0) throw ValidationError("support size must be positive");
  if (count > n) {
    throw ValidationError("support size " + std::to_string(count) + " exceeds the " +
                          std::to_string(n) + " available images");
  }
  Rng rng(derive_seed(seed, 0x5u));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(count);
  return idx;
}

std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> out(logits.rows(), 0);
  for (std::size_t r = 0; r < logits.rows(); ++r)
    for (std::size_t c = 1; c < logits.cols(); ++c)
      if (logits(r, c) > logits(r, static_cast<std::size_t>(out[r]))) out[r] = static_cast<int>(c);
  return out;
}

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size() || truth.empty()) {
    throw ValidationError("accuracy needs equally sized, non-empty prediction and label lists");
  }
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

double macro_f1(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size() || truth.empty()) {
    throw ValidationError("macro_f1 needs equally sized, non-empty prediction and label lists");
  }
  std::set<int> classes(truth.begin(), truth.end());
  classes.insert(predicted.begin(), predicted.end());
  double total = 0.0;
  for (int c : classes) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (predicted[i] == c && truth[i] == c) ++tp;
      else if (predicted[i] == c) ++fp;
      else if (truth[i] == c) ++fn;
    }
    const double denom = static_cast<double>(2 * tp + fp + fn);
    total += denom > 0.0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
  }
  return total / static_cast<double>(classes.size());
}

double worst_case_accuracy(std::span<const int> predicted, std::span<const int> truth,
                           std::span<const int> groups) {
  if (groups.size() != truth.size()) throw ValidationError("one group id per sample is required");
  std::map<int, std::pair<std::size_t, std::size_t>> tally;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    auto& [hit, n] = tally[groups[i]];
    hit += predicted[i] == truth[i];
    ++n;
  }
  if (tally.empty()) throw ValidationError("worst_case_accuracy on an empty set");
  double worst = 1.0;
  for (const auto& [g, t] : tally) {
    worst = std::min(worst, static_cast<double>(t.first) / static_cast<double>(t.second));
  }
  return worst;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ValidationError("pearson needs two equally sized lists of at least 2 values");
  }
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

json MetricReport::to_json() const {
  json j = {{"samples", samples}, {"metrics", metrics}};
  json d = json::object();
  for (const auto& [domain, m] : per_domain) d[std::to_string(domain)] = m;
  j["per_domain"] = d;
  return j;
}

std::string MetricReport::per_domain_csv() const {
  std::set<std::string> names;
  for (const auto& [domain, m] : per_domain)
    for (const auto& [k, v] : m) names.insert(k);
  std::ostringstream os;
  os.precision(17);
  os << "domain";
  for (const std::string& n : names) os << ',' << n;
  os << '\n';
  for (const auto& [domain, m] : per_domain) {
    os << domain;
    for (const std::string& n : names) {
      auto it = m.find(n);
      os << ',';
      if (it != m.end()) os << it->second;
    }
    os << '\n';
  }
  return os.str();
}

MetricReport evaluate(AdaptedModel& model, std::span<const SyntheticImage* const> images) {
  if (images.empty()) throw ValidationError("evaluation set is empty");
  MetricReport report;
  report.samples = images.size();
  std::vector<int> groups;
  for (const SyntheticImage* img : images) groups.push_back(img->domain);

  if (model.model().config().task == Task::kRegression) {
    std::vector<double> pred, truth;
    std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_domain;
    for (const SyntheticImage* img : images) {
      const double p = model.infer(img->grid)(0, 0);
      pred.push_back(p);
      truth.push_back(img->target);
      by_domain[img->domain].first.push_back(p);
      by_domain[img->domain].second.push_back(img->target);
    }
    double mse = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) mse += (pred[i] - truth[i]) * (pred[i] - truth[i]);
    report.metrics["mse"] = mse / static_cast<double>(pred.size());
    report.metrics["pearson"] = pred.size() >= 2 ? pearson(pred, truth) : 0.0;
    for (const auto& [d, pt] : by_domain) {
      report.per_domain[d]["count"] = static_cast<double>(pt.first.size());
      report.per_domain[d]["pearson"] = pt.first.size() >= 2 ? pearson(pt.first, pt.second) : 0.0;
    }
    return report;
  }

  std::vector<int> pred, truth;
  for (const SyntheticImage* img : images) {
    if (img->label < 0) throw ValidationError("evaluation image without a label");
    pred.push_back(argmax_rows(model.infer(img->grid))[0]);
    truth.push_back(img->label);
  }
  report.metrics["accuracy"] = accuracy(pred, truth);
  report.metrics["macro_f1"] = macro_f1(pred, truth);
  report.metrics["worst_case_accuracy"] = worst_case_accuracy(pred, truth, groups);
  std::map<int, std::pair<std::vector<int>, std::vector<int>>> by_domain;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    by_domain[groups[i]].first.push_back(pred[i]);
    by_domain[groups[i]].second.push_back(truth[i]);
  }
  for (const auto& [d, pt] : by_domain) {
    report.per_domain[d]["count"] = static_cast<double>(pt.first.size());
    report.per_domain[d]["accuracy"] = accuracy(pt.first, pt.second);
    report.per_domain[d]["macro_f1"] = macro_f1(pt.first, pt.second);
  }
  return report;
}

}  // namespace l2c
