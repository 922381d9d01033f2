#include "l2c/text_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "l2c/errors.hpp"
#include "l2c/numerics.hpp"

namespace l2c {
namespace {

void require_classes(const Matrix& t, const char* what) {
  if (t.rows() < 2) {
    throw ValidationError(std::string(what) + " needs at least 2 classes, got " +
                          std::to_string(t.rows()));
  }
}

double squared_distance(const Matrix& t, std::size_t i, std::size_t j) {
  double s = 0.0;
  for (std::size_t c = 0; c < t.cols(); ++c) {
    const double diff = t(i, c) - t(j, c);
    s += diff * diff;
  }
  return s;
}

Matrix average(const std::vector<const Matrix*>& parts) {
  Matrix out(parts.front()->rows(), parts.front()->cols());
  for (const Matrix* m : parts) add_acc(*m, out);
  for (double& v : out.data()) v /= static_cast<double>(parts.size());
  return out;
}

// Running mean, so identical rows give a centroid equal to them bit-exactly.
Matrix row_centroid(const Matrix& t) {
  Matrix c(1, t.cols());
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t k = 0; k < t.cols(); ++k) c(0, k) += (t(r, k) - c(0, k)) / static_cast<double>(r + 1);
  return c;
}

}  // namespace

std::string to_string(DispersionCriterion c) {
  return c == DispersionCriterion::kUniformity ? "uniformity" : "atfd";
}

DispersionCriterion parse_criterion(const std::string& s) {
  if (s == "uniformity") return DispersionCriterion::kUniformity;
  if (s == "atfd") return DispersionCriterion::kAtfd;
  throw ValidationError("unknown criterion '" + s + "' (expected uniformity|atfd)");
}

double uniformity_loss(const Matrix& t, double temperature) {
  require_classes(t, "uniformity_loss");
  if (!(temperature > 0.0)) throw ValidationError("uniformity_loss: t must be positive");
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    for (std::size_t j = i + 1; j < t.rows(); ++j) {
      total += std::exp(-temperature * squared_distance(t, i, j));
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

double uniformity_pairwise_sum(const Matrix& t, double temperature) {
  require_classes(t, "uniformity_pairwise_sum");
  double total = 0.0;
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.rows(); ++j)
      if (i != j) total += std::exp(-temperature * squared_distance(t, i, j));
  return total;
}

double atfd(const Matrix& t) {
  require_classes(t, "atfd");
  const Matrix c = row_centroid(t);
  double total = 0.0;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < t.cols(); ++k) s += (t(r, k) - c(0, k)) * (t(r, k) - c(0, k));
    total += std::sqrt(s);
  }
  return total / static_cast<double>(t.rows());
}

double dispersion(const Matrix& t, DispersionCriterion c, double temperature) {
  return c == DispersionCriterion::kUniformity ? uniformity_loss(t, temperature) : atfd(t);
}

bool strictly_better(double candidate, double current, DispersionCriterion c) {
  return c == DispersionCriterion::kUniformity ? candidate < current : candidate > current;
}

TextPrototypes greedy_ensemble(const EmbeddingBundle& bundle, DispersionCriterion c,
                               double temperature) {
  bundle.validate();
  if (bundle.class_count() < 2) throw ValidationError("greedy_ensemble needs C >= 2");
  const std::size_t p_count = bundle.template_count();

  std::vector<double> score(p_count);
  for (std::size_t p = 0; p < p_count; ++p) score[p] = dispersion(bundle.embeddings[p], c, temperature);

  std::vector<std::size_t> order(p_count);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return strictly_better(score[a], score[b], c);
  });

  TextPrototypes out;
  std::vector<const Matrix*> kept{&bundle.embeddings[order[0]]};
  out.selected_template_indices.push_back(order[0]);
  double current = score[order[0]];
  out.criterion_trace.push_back(current);

  for (std::size_t k = 1; k < p_count; ++k) {
    kept.push_back(&bundle.embeddings[order[k]]);
    const double candidate = dispersion(average(kept), c, temperature);
    if (strictly_better(candidate, current, c)) {
      current = candidate;
      out.selected_template_indices.push_back(order[k]);
      out.criterion_trace.push_back(current);
    } else {
      kept.pop_back();
    }
  }
  out.matrix = average(kept);
  return out;
}

TextPrototypes average_all_templates(const EmbeddingBundle& bundle) {
  bundle.validate();
  std::vector<const Matrix*> all;
  TextPrototypes out;
  for (std::size_t p = 0; p < bundle.template_count(); ++p) {
    all.push_back(&bundle.embeddings[p]);
    out.selected_template_indices.push_back(p);
  }
  out.matrix = average(all);
  return out;
}

RefinementParams::RefinementParams(std::size_t classes, std::size_t dim)
    : class_mix("refine.M_c", Matrix(classes, classes)),
      feature_mix("refine.M_d", Matrix::identity(dim)) {}

TextPrototypes refine(const TextPrototypes& raw, const RefinementParams& params) {
  const Matrix& t = raw.matrix;
  if (params.class_mix.value.rows() != t.rows() || params.class_mix.value.cols() != t.rows() ||
      params.feature_mix.value.rows() != t.cols() || params.feature_mix.value.cols() != t.cols()) {
    throw DimensionError("refine: prototypes are " + t.shape_string() + " but M_c is " +
                         params.class_mix.value.shape_string() + " and M_d is " +
                         params.feature_mix.value.shape_string());
  }
  TextPrototypes out = raw;
  out.matrix = add(matmul(matmul(params.class_mix.value, t), params.feature_mix.value), t);
  out.provenance = TextPrototypes::Provenance::kRefined;
  return out;
}

Var refine(Tape& tape, Var raw, RefinementParams& params) {
  const Matrix& t = raw.value();
  if (params.class_mix.value.rows() != t.rows() || params.feature_mix.value.rows() != t.cols()) {
    throw DimensionError("refine: prototypes are " + t.shape_string() + " but M_c is " +
                         params.class_mix.value.shape_string() + " and M_d is " +
                         params.feature_mix.value.shape_string());
  }
  Var mixed = ad::matmul(ad::matmul(tape.param(params.class_mix), raw), tape.param(params.feature_mix));
  return ad::add(mixed, raw);
}

double uniformity_regularizer(const Matrix& refined, DispersionCriterion c, double lambda,
                              double temperature) {
  if (lambda < 0.0) throw ValidationError("uniformity_regularizer: lambda must be >= 0");
  if (lambda == 0.0) return 0.0;
  return c == DispersionCriterion::kUniformity ? lambda * uniformity_loss(refined, temperature)
                                               : -lambda * atfd(refined);
}

namespace ad {

Var uniformity_loss(Var prototypes, double temperature) {
  const Matrix& t = prototypes.value();
  const double value = l2c::uniformity_loss(t, temperature);
  return prototypes.tape().push(
      Matrix(1, 1, value), {prototypes}, [prototypes, temperature](Tape& tape, std::size_t self) {
        const Matrix& t = prototypes.value();
        const double g = tape.grad(self)(0, 0);
        const std::size_t n = t.rows();
        const double pairs = static_cast<double>(n * (n - 1) / 2);
        Matrix& gt = tape.grad_acc(prototypes);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = i + 1; j < n; ++j) {
            const double e = std::exp(-temperature * squared_distance(t, i, j));
            const double coef = g * e * (-2.0 * temperature) / pairs;
            for (std::size_t k = 0; k < t.cols(); ++k) {
              const double diff = t(i, k) - t(j, k);
              gt(i, k) += coef * diff;
              gt(j, k) -= coef * diff;
            }
          }
        }
      });
}

Var atfd(Var prototypes) {
  const double value = l2c::atfd(prototypes.value());
  return prototypes.tape().push(Matrix(1, 1, value), {prototypes}, [prototypes](Tape& tape, std::size_t self) {
    const Matrix& t = prototypes.value();
    const double g = tape.grad(self)(0, 0);
    const std::size_t n = t.rows(), d = t.cols();
    const Matrix c = row_centroid(t);
    Matrix unit(n, d);
    Matrix mean_unit(1, d);
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += (t(r, k) - c(0, k)) * (t(r, k) - c(0, k));
      const double nrm = std::sqrt(s);
      if (nrm == 0.0) continue;  // subgradient 0 at the centroid
      for (std::size_t k = 0; k < d; ++k) {
        unit(r, k) = (t(r, k) - c(0, k)) / nrm;
        mean_unit(0, k) += unit(r, k) / static_cast<double>(n);
      }
    }
    Matrix& gt = tape.grad_acc(prototypes);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = 0; k < d; ++k)
        gt(r, k) += g * (unit(r, k) - mean_unit(0, k)) / static_cast<double>(n);
  });
}

Var uniformity_regularizer(Var refined, DispersionCriterion c, double lambda, double temperature) {
  if (lambda < 0.0) throw ValidationError("uniformity_regularizer: lambda must be >= 0");
  return c == DispersionCriterion::kUniformity ? scale(uniformity_loss(refined, temperature), lambda)
                                               : scale(atfd(refined), -lambda);
}

}  // namespace ad

void save_prototypes(const TextPrototypes& protos, const fs::path& path, json extra) {
  json meta = extra.is_object() ? std::move(extra) : json::object();
  meta["kind"] = "text-prototypes";
  meta["provenance"] =
      protos.provenance == TextPrototypes::Provenance::kRefined ? "refined" : "raw-ensemble";
  meta["selected_template_indices"] = protos.selected_template_indices;
  meta["criterion_trace"] = protos.criterion_trace;
  save_matrix_with_sidecar(protos.matrix, path, std::move(meta), Dtype::kF64);
}

TextPrototypes load_prototypes(const fs::path& path) {
  auto [m, meta] = load_matrix_with_sidecar(path);
  TextPrototypes out;
  out.matrix = std::move(m);
  out.provenance = meta.value("provenance", std::string()) == "refined"
                       ? TextPrototypes::Provenance::kRefined
                       : TextPrototypes::Provenance::kRawEnsemble;
  out.selected_template_indices =
      meta.value("selected_template_indices", std::vector<std::size_t>{});
  out.criterion_trace = meta.value("criterion_trace", std::vector<double>{});
  return out;
}

}  // namespace l2c
