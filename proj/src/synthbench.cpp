#include "l2c/synthbench.hpp"

#include <cmath>
#include <limits>
#include <set>

#include "l2c/errors.hpp"
#include "l2c/numerics.hpp"
#include "l2c/random.hpp"
#include "l2c/text_pipeline.hpp"

namespace l2c {
namespace {

constexpr int kDatasetVersion = 1;

struct Generator {
  std::vector<Matrix> class_means;  // C of l x f
  std::vector<Matrix> mix;          // domains of f x f
  std::vector<Matrix> bias;         // domains of 1 x f
};

Generator make_generator(const SynthConfig& cfg) {
  Generator g;
  Rng cls_rng(derive_seed(cfg.seed, 1));
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    g.class_means.push_back(random_normal(cfg.patches, cfg.patch_dim, cfg.sigma_cls, cls_rng));
  }
  const double inv_sqrt_f = 1.0 / std::sqrt(static_cast<double>(cfg.patch_dim));
  std::vector<Matrix> mix_axes, bias_axes;
  Rng axis_rng(derive_seed(cfg.seed, 3));
  for (std::size_t j = 0; j < cfg.style_rank; ++j) {
    mix_axes.push_back(random_normal(cfg.patch_dim, cfg.patch_dim, inv_sqrt_f, axis_rng));
    bias_axes.push_back(random_normal(1, cfg.patch_dim, 1.0, axis_rng));
  }
  for (std::size_t k = 0; k < cfg.domains; ++k) {
    Rng rng(derive_seed(cfg.seed, 100 + k));
    Matrix a = Matrix::identity(cfg.patch_dim);
    Matrix bias(1, cfg.patch_dim);
    if (cfg.style_rank == 0) {
      add_acc(random_normal(cfg.patch_dim, cfg.patch_dim, cfg.mix_ratio * cfg.sigma_dom * inv_sqrt_f, rng), a);
      bias = random_normal(1, cfg.patch_dim, cfg.sigma_dom, rng);
    } else {
      std::normal_distribution<double> coef(0.0, cfg.sigma_dom);
      for (std::size_t j = 0; j < cfg.style_rank; ++j) {
        add_acc(scale(mix_axes[j], cfg.mix_ratio * coef(rng)), a);
        add_acc(scale(bias_axes[j], coef(rng)), bias);
      }
    }
    g.mix.push_back(std::move(a));
    g.bias.push_back(std::move(bias));
  }
  return g;
}

Matrix apply_style(const Matrix& x, const Matrix& mix, const Matrix& bias) {
  Matrix out = matmul(x, mix);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bias(0, c);
  return out;
}

void round_to_f32(Matrix& m) {
  for (double& v : m.data()) v = static_cast<double>(static_cast<float>(v));
}

void normalize_rows(Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double s = 0.0;
    for (double v : m.row(r)) s += v * v;
    s = std::sqrt(s);
    for (double& v : m.row(r)) v /= s;
  }
}

EmbeddingBundle make_bundle(const SynthConfig& cfg) {
  const std::size_t classes = cfg.task == Task::kRegression ? 1 : cfg.classes;
  Rng rng(derive_seed(cfg.seed, 2));
  const Matrix base = random_normal(classes, cfg.width, 1.0, rng);
  const Matrix common = random_normal(1, cfg.width, 1.0, rng);
  EmbeddingBundle b;
  b.dim = cfg.width;
  b.dtype = Dtype::kF32;
  for (std::size_t c = 0; c < classes; ++c) b.classes.push_back("class_" + std::to_string(c));
  std::set<double> seen;
  for (std::size_t p = 0; p < cfg.templates; ++p) {
    b.templates.push_back("template_" + std::to_string(p));
    // Each template shrinks the classes toward a shared direction by its own
    // amount, so dispersion differs from template to template.
    const double shrink = 0.9 * static_cast<double>(p) / static_cast<double>(std::max<std::size_t>(cfg.templates, 2));
    Matrix t;
    for (int attempt = 0;; ++attempt) {
      const Matrix jitter = random_normal(classes, cfg.width, 0.3, rng);
      t = Matrix(classes, cfg.width);
      for (std::size_t c = 0; c < classes; ++c)
        for (std::size_t k = 0; k < cfg.width; ++k)
          t(c, k) = (1.0 - shrink) * base(c, k) + 4.0 * shrink * common(0, k) + jitter(c, k);
      normalize_rows(t);
      round_to_f32(t);
      if (classes < 2) break;
      const double u = uniformity_loss(t);
      if (seen.insert(u).second) break;
      if (attempt > 100) throw NumericalError("could not draw templates with distinct uniformity");
    }
    b.embeddings.push_back(std::move(t));
  }
  return b;
}

void write_split(const std::vector<SyntheticImage>& images, const SynthConfig& cfg,
                 const fs::path& dir, const std::string& name) {
  std::vector<double> grid;
  std::vector<double> meta;
  grid.reserve(images.size() * cfg.patches * cfg.patch_dim);
  for (const SyntheticImage& img : images) {
    grid.insert(grid.end(), img.grid.data().begin(), img.grid.data().end());
    meta.push_back(img.domain);
    meta.push_back(img.label);
    meta.push_back(img.target);
  }
  write_values(dir / (name + "_images.bin"), grid, Dtype::kF32);
  write_values(dir / (name + "_meta.bin"), meta, Dtype::kF64);
}

std::vector<SyntheticImage> read_split(const SynthConfig& cfg, const fs::path& dir,
                                       const std::string& name, std::size_t count) {
  const std::size_t cell = cfg.patches * cfg.patch_dim;
  const std::vector<double> grid = read_values(dir / (name + "_images.bin"), count * cell, Dtype::kF32);
  const std::vector<double> meta = read_values(dir / (name + "_meta.bin"), count * 3, Dtype::kF64);
  std::vector<SyntheticImage> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    out[i].grid = Matrix(cfg.patches, cfg.patch_dim,
                         std::vector<double>(grid.begin() + i * cell, grid.begin() + (i + 1) * cell));
    out[i].domain = static_cast<int>(meta[3 * i]);
    out[i].label = static_cast<int>(meta[3 * i + 1]);
    out[i].target = meta[3 * i + 2];
  }
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  if (classes < 2) throw ValidationError("synthetic config needs at least 2 classes");
  if (domains < 2) throw ValidationError("synthetic config needs at least 2 domains");
  if (target_domains < 1 || target_domains >= domains) {
    throw ValidationError("need at least one held-out target domain and one source domain");
  }
  if (patches == 0 || patch_dim == 0 || width == 0) throw ValidationError("dimensions must be positive");
  if (per_cell == 0) throw ValidationError("per_cell must be positive");
  if (templates == 0) throw ValidationError("need at least one template");
  if (sigma_dom < 0.0 || mix_ratio < 0.0 || sigma_cls < 0.0 || noise < 0.0) {
    throw ValidationError("sigma_dom, mix_ratio, sigma_cls and noise must be non-negative");
  }
}

json SynthConfig::to_json() const {
  return {{"domains", domains},     {"target_domains", target_domains},
          {"classes", classes},     {"patches", patches},
          {"patch_dim", patch_dim}, {"width", width},
          {"per_cell", per_cell},   {"templates", templates},
          {"sigma_dom", sigma_dom}, {"mix_ratio", mix_ratio},
          {"style_rank", style_rank},
          {"sigma_cls", sigma_cls},
          {"noise", noise},         {"task", to_string(task)},
          {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const json& j) {
  SynthConfig c;
  c.domains = j.value("domains", c.domains);
  c.target_domains = j.value("target_domains", c.target_domains);
  c.classes = j.value("classes", c.classes);
  c.patches = j.value("patches", c.patches);
  c.patch_dim = j.value("patch_dim", c.patch_dim);
  c.width = j.value("width", c.width);
  c.per_cell = j.value("per_cell", c.per_cell);
  c.templates = j.value("templates", c.templates);
  c.sigma_dom = j.value("sigma_dom", c.sigma_dom);
  c.mix_ratio = j.value("mix_ratio", c.mix_ratio);
  c.style_rank = j.value("style_rank", c.style_rank);
  c.sigma_cls = j.value("sigma_cls", c.sigma_cls);
  c.noise = j.value("noise", c.noise);
  c.task = parse_task(j.value("task", to_string(c.task)));
  c.seed = j.value("seed", c.seed);
  return c;
}

std::vector<const SyntheticImage*> SynthDataset::domain_images(int domain) const {
  std::vector<const SyntheticImage*> out;
  for (const auto* split : {&train, &target})
    for (const SyntheticImage& img : *split)
      if (img.domain == domain) out.push_back(&img);
  return out;
}

bool SynthDataset::is_target(int domain) const {
  return domain >= static_cast<int>(config.source_domains()) &&
         domain < static_cast<int>(config.domains);
}

double regression_target(std::size_t cls, std::size_t classes) {
  if (classes < 2) return 0.0;
  return -0.8 + 1.6 * static_cast<double>(cls) / static_cast<double>(classes - 1);
}

SynthDataset generate(const SynthConfig& cfg) {
  cfg.validate();
  const Generator g = make_generator(cfg);
  SynthDataset data;
  data.config = cfg;
  for (std::size_t k = 0; k < cfg.domains; ++k) {
    Rng rng(derive_seed(cfg.seed, 1000 + k));
    auto& split = k < cfg.source_domains() ? data.train : data.target;
    for (std::size_t c = 0; c < cfg.classes; ++c) {
      for (std::size_t n = 0; n < cfg.per_cell; ++n) {
        Matrix x = add(g.class_means[c], scale(random_normal(cfg.patches, cfg.patch_dim, 1.0, rng), cfg.noise));
        SyntheticImage img;
        img.grid = apply_style(x, g.mix[k], g.bias[k]);
        round_to_f32(img.grid);
        img.domain = static_cast<int>(k);
        img.label = static_cast<int>(c);
        img.target = regression_target(c, cfg.classes);
        split.push_back(std::move(img));
      }
    }
  }
  data.bundle = make_bundle(cfg);
  return data;
}

double oracle_accuracy(const SynthDataset& data, int domain) {
  const SynthConfig& cfg = data.config;
  if (domain < 0 || domain >= static_cast<int>(cfg.domains)) {
    throw ValidationError("domain " + std::to_string(domain) + " does not exist");
  }
  const Generator g = make_generator(cfg);
  std::vector<Matrix> styled;
  for (const Matrix& m : g.class_means) styled.push_back(apply_style(m, g.mix[domain], g.bias[domain]));
  const auto images = data.domain_images(domain);
  if (images.empty()) throw ValidationError("domain " + std::to_string(domain) + " has no images");
  std::size_t correct = 0;
  for (const SyntheticImage* img : images) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < styled.size(); ++c) {
      double d = 0.0;
      for (std::size_t i = 0; i < img->grid.data().size(); ++i) {
        const double diff = img->grid.data()[i] - styled[c].data()[i];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    correct += best == img->label;
  }
  return static_cast<double>(correct) / static_cast<double>(images.size());
}

void save_dataset(const SynthDataset& data, const fs::path& dir) {
  StagedDirectory staged(dir);
  write_dataset_files(data, staged.path());
  staged.commit();
}

void write_dataset_files(const SynthDataset& data, const fs::path& dir) {
  write_split(data.train, data.config, dir, "train");
  write_split(data.target, data.config, dir, "target");
  save_bundle(data.bundle, dir / "bundle");
  write_json(dir / "manifest.json",
             {{"version", kDatasetVersion},
              {"format", "l2c-synth"},
              {"config", data.config.to_json()},
              {"train_count", data.train.size()},
              {"target_count", data.target.size()},
              {"source_domains", data.config.source_domains()},
              {"layout", "row-major"},
              {"image_dtype", "f32"},
              {"meta_columns", {"domain", "label", "target"}}});
}

SynthDataset load_dataset(const fs::path& dir) {
  const json manifest = read_json(dir / "manifest.json");
  if (manifest.value("version", 0) != kDatasetVersion) {
    throw VersionError("dataset version " + manifest.value("version", json(0)).dump() +
                       " is not supported");
  }
  SynthDataset data;
  data.config = SynthConfig::from_json(manifest.at("config"));
  data.config.validate();
  data.train = read_split(data.config, dir, "train", manifest.at("train_count").get<std::size_t>());
  data.target = read_split(data.config, dir, "target", manifest.at("target_count").get<std::size_t>());
  data.bundle = load_bundle(dir / "bundle");
  return data;
}

EncoderConfig encoder_config_for(const SynthConfig& cfg, std::uint64_t encoder_seed) {
  EncoderConfig e;
  e.patches = cfg.patches;
  e.patch_dim = cfg.patch_dim;
  e.width = cfg.width;
  e.seed = encoder_seed;
  return e;
}

}  // namespace l2c
