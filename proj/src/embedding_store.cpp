#include "l2c/embedding_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include <openssl/evp.h>

#include "l2c/errors.hpp"

namespace l2c {
namespace {

static_assert(std::endian::native == std::endian::little,
              "payload encoding assumes a little-endian host");

constexpr const char* kPromptBin = "prompt.bin";
constexpr const char* kPromptMeta = "prompt.json";
constexpr const char* kContextBin = "context.bin";
constexpr const char* kManifest = "manifest.json";

std::vector<char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t checked_size(const json& j, const char* key, const fs::path& where) {
  if (!j.contains(key) || !j[key].is_number_unsigned()) {
    throw FormatError(where.string() + ": missing or invalid '" + key + "'");
  }
  return j[key].get<std::size_t>();
}

void require_finite_values(std::span<const double> values, const fs::path& where) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NonFiniteValueError(where.string() + ": non-finite value at element " +
                                std::to_string(i));
    }
  }
}

}  // namespace

std::string to_string(Dtype dtype) { return dtype == Dtype::kF32 ? "f32" : "f64"; }

Dtype parse_dtype(const std::string& s) {
  if (s == "f32") return Dtype::kF32;
  if (s == "f64") return Dtype::kF64;
  throw FormatError("unknown dtype '" + s + "'");
}

std::size_t dtype_size(Dtype dtype) { return dtype == Dtype::kF32 ? 4 : 8; }

std::vector<char> encode_values(std::span<const double> values, Dtype dtype) {
  std::vector<char> bytes(values.size() * dtype_size(dtype));
  char* out = bytes.data();
  for (double v : values) {
    if (dtype == Dtype::kF32) {
      const float f = static_cast<float>(v);
      std::memcpy(out, &f, sizeof f);
      out += sizeof f;
    } else {
      std::memcpy(out, &v, sizeof v);
      out += sizeof v;
    }
  }
  return bytes;
}

std::vector<double> read_values(const fs::path& path, std::size_t count, Dtype dtype) {
  if (!fs::exists(path)) throw MissingFileError("missing data file " + path.string());
  const std::vector<char> bytes = read_bytes(path);
  const std::size_t width = dtype_size(dtype);
  if (bytes.size() != count * width) {
    const bool whole = bytes.size() % width == 0;
    throw ShapeMismatchError(path.string() + ": expected " + std::to_string(count) + " " +
                             to_string(dtype) + " values (" + std::to_string(count * width) +
                             " bytes), file has " +
                             (whole ? std::to_string(bytes.size() / width) + " values"
                                    : std::to_string(bytes.size()) + " bytes"));
  }
  std::vector<double> values(count);
  const char* in = bytes.data();
  for (std::size_t i = 0; i < count; ++i) {
    if (dtype == Dtype::kF32) {
      float f;
      std::memcpy(&f, in + i * 4, 4);
      values[i] = f;
    } else {
      std::memcpy(&values[i], in + i * 8, 8);
    }
  }
  require_finite_values(values, path);
  return values;
}

void write_values(const fs::path& path, std::span<const double> values, Dtype dtype) {
  require_finite_values(values, path);
  write_file_atomic(path, encode_values(values, dtype));
}

json read_json(const fs::path& path) {
  if (!fs::exists(path)) throw MissingFileError("missing file " + path.string());
  const std::vector<char> bytes = read_bytes(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  const std::string text = j.dump(2) + "\n";
  write_file_atomic(path, std::span<const char>(text.data(), text.size()));
}

void write_file_atomic(const fs::path& path, std::span<const char> bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

StagedDirectory::StagedDirectory(fs::path target) : target_(std::move(target)) {
  if (target_.filename().empty()) target_ = target_.parent_path();
  staging_ = target_;
  staging_ += ".staging";
  fs::remove_all(staging_);
  fs::create_directories(staging_);
}

StagedDirectory::~StagedDirectory() {
  if (!committed_) {
    std::error_code ec;
    fs::remove_all(staging_, ec);
  }
}

void StagedDirectory::commit() {
  fs::path old = target_;
  old += ".old";
  fs::remove_all(old);
  const bool had_target = fs::exists(target_);
  if (had_target) fs::rename(target_, old);
  fs::rename(staging_, target_);
  if (had_target) fs::remove_all(old);
  committed_ = true;
}

// ---------------------------------------------------------------------------

void EmbeddingBundle::validate() const {
  if (embeddings.empty()) throw ValidationError("bundle has no templates (P must be >= 1)");
  if (classes.empty()) throw ValidationError("bundle has no classes (C must be >= 1)");
  if (templates.size() != embeddings.size()) {
    throw ValidationError("bundle lists " + std::to_string(templates.size()) +
                          " template names for " + std::to_string(embeddings.size()) +
                          " embedding sets");
  }
  for (std::size_t p = 0; p < embeddings.size(); ++p) {
    const Matrix& m = embeddings[p];
    if (m.rows() != classes.size() || m.cols() != dim) {
      throw ShapeMismatchError("template " + std::to_string(p) + " embeddings are " +
                               m.shape_string() + ", expected " +
                               shape_string(classes.size(), dim));
    }
    require_finite_values(m.data(), "template " + std::to_string(p));
  }
}

EmbeddingBundle load_bundle(const fs::path& dir) {
  const fs::path manifest_path = dir / kManifest;
  const json m = read_json(manifest_path);
  if (m.value("version", -1) != 1) {
    throw VersionError(manifest_path.string() + ": unsupported bundle version");
  }
  if (m.value("layout", std::string("row-major")) != "row-major") {
    throw FormatError(manifest_path.string() + ": only row-major layout is supported");
  }
  EmbeddingBundle b;
  b.dtype = parse_dtype(m.value("dtype", std::string("f32")));
  b.dim = checked_size(m, "dim", manifest_path);
  b.classes = m.at("classes").get<std::vector<std::string>>();
  b.templates = m.at("templates").get<std::vector<std::string>>();
  const auto shape = m.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 3 || shape[0] != b.templates.size() || shape[1] != b.classes.size() ||
      shape[2] != b.dim) {
    throw ShapeMismatchError(manifest_path.string() +
                             ": shape disagrees with templates/classes/dim");
  }
  const std::size_t per = shape[1] * shape[2];
  const auto values =
      read_values(dir / m.value("data", std::string("embeddings.bin")), shape[0] * per, b.dtype);
  for (std::size_t p = 0; p < shape[0]; ++p) {
    const auto first = values.begin() + static_cast<std::ptrdiff_t>(p * per);
    b.embeddings.emplace_back(shape[1], shape[2],
                              std::vector<double>(first, first + static_cast<std::ptrdiff_t>(per)));
  }
  b.validate();
  return b;
}

void save_bundle(const EmbeddingBundle& bundle, const fs::path& dir) {
  bundle.validate();
  StagedDirectory staged(dir);
  std::vector<double> flat;
  flat.reserve(bundle.embeddings.size() * bundle.classes.size() * bundle.dim);
  for (const Matrix& m : bundle.embeddings) flat.insert(flat.end(), m.data().begin(), m.data().end());
  write_values(staged.path() / "embeddings.bin", flat, bundle.dtype);
  json m = {{"version", 1},
            {"dim", bundle.dim},
            {"classes", bundle.classes},
            {"templates", bundle.templates},
            {"dtype", to_string(bundle.dtype)},
            {"layout", "row-major"},
            {"shape", {bundle.templates.size(), bundle.classes.size(), bundle.dim}},
            {"data", "embeddings.bin"}};
  write_json(staged.path() / kManifest, m);
  staged.commit();
}

// ---------------------------------------------------------------------------

void write_checkpoint_files(const Checkpoint& ckpt, const fs::path& dir) {
  json blobs = json::array();
  for (const auto& [name, value] : ckpt.blobs) {
    const std::string file = name + ".bin";
    write_values(dir / file, value.data(), Dtype::kF64);
    blobs.push_back({{"name", name},
                     {"file", file},
                     {"shape", {value.rows(), value.cols()}},
                     {"dtype", "f64"}});
  }
  json m = {{"version", ckpt.version},
            {"format", "l2c-checkpoint"},
            {"config", ckpt.config},
            {"blobs", blobs}};
  write_json(dir / kManifest, m);
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
  StagedDirectory staged(dir);
  write_checkpoint_files(ckpt, staged.path());
  staged.commit();
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const fs::path manifest_path = dir / kManifest;
  const json m = read_json(manifest_path);
  Checkpoint ckpt;
  ckpt.version = m.value("version", -1);
  if (ckpt.version != kCheckpointVersion) {
    throw VersionError(manifest_path.string() + ": unknown checkpoint version " +
                       std::to_string(ckpt.version));
  }
  ckpt.config = m.value("config", json::object());
  for (const json& b : m.at("blobs")) {
    const std::string name = b.at("name").get<std::string>();
    const auto shape = b.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2) throw ShapeMismatchError("blob " + name + ": shape must be 2-D");
    const Dtype dtype = parse_dtype(b.value("dtype", std::string("f64")));
    auto values = read_values(dir / b.at("file").get<std::string>(), shape[0] * shape[1], dtype);
    if (!ckpt.blobs.emplace(name, Matrix(shape[0], shape[1], std::move(values))).second) {
      throw FormatError(manifest_path.string() + ": blob '" + name + "' listed twice");
    }
  }
  return ckpt;
}

std::string checkpoint_digest(const Checkpoint& ckpt) {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  auto feed = [ctx](const void* p, std::size_t n) { EVP_DigestUpdate(ctx, p, n); };
  const std::string head = std::to_string(ckpt.version) + ckpt.config.dump();
  feed(head.data(), head.size());
  for (const auto& [name, value] : ckpt.blobs) {
    const std::string tag = name + ":" + value.shape_string();
    feed(tag.data(), tag.size());
    const auto bytes = encode_values(value.data(), Dtype::kF64);
    feed(bytes.data(), bytes.size());
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[md[i] >> 4];
    out += kHex[md[i] & 15];
  }
  return out;
}

// ---------------------------------------------------------------------------

void write_prompt_files(const PromptFile& p, const fs::path& dir) {
  if (p.prompt.rows() < 2) {
    throw ValidationError("domain prompt needs at least L+1 = 2 rows, got " +
                          std::to_string(p.prompt.rows()));
  }
  write_values(dir / kPromptBin, p.prompt.data(), Dtype::kF64);
  json meta = {{"version", 1},
               {"L", p.prompt.rows() - 1},
               {"d", p.prompt.cols()},
               {"dtype", "f64"},
               {"layout", "row-major"},
               {"data", kPromptBin},
               {"checkpoint_sha256", p.checkpoint_sha256}};
  if (p.image_context.rows() > 0) {
    if (p.image_context.cols() != p.prompt.cols()) {
      throw DimensionError("image context is " + p.image_context.shape_string() + " but the prompt is " +
                           p.prompt.shape_string());
    }
    write_values(dir / kContextBin, p.image_context.data(), Dtype::kF64);
    meta["context"] = {{"rows", p.image_context.rows()}, {"data", kContextBin}};
  }
  if (!p.extra.is_null()) meta["provenance"] = p.extra;
  write_json(dir / kPromptMeta, meta);
}

void save_prompt(const PromptFile& p, const fs::path& dir) {
  StagedDirectory staged(dir);
  write_prompt_files(p, staged.path());
  staged.commit();
}

PromptFile load_prompt(const fs::path& dir) {
  const fs::path meta_path = dir / kPromptMeta;
  const json meta = read_json(meta_path);
  if (meta.value("version", -1) != 1) throw VersionError(meta_path.string() + ": unknown version");
  const std::size_t cache = checked_size(meta, "L", meta_path);
  const std::size_t d = checked_size(meta, "d", meta_path);
  const Dtype dtype = parse_dtype(meta.value("dtype", std::string("f64")));
  PromptFile p;
  p.prompt = Matrix(cache + 1, d, read_values(dir / kPromptBin, (cache + 1) * d, dtype));
  if (meta.contains("context")) {
    const std::size_t rows = checked_size(meta.at("context"), "rows", meta_path);
    p.image_context = Matrix(rows, d, read_values(dir / kContextBin, rows * d, Dtype::kF64));
  }
  p.checkpoint_sha256 = meta.value("checkpoint_sha256", std::string());
  p.extra = meta.value("provenance", json());
  return p;
}

// ---------------------------------------------------------------------------

fs::path sidecar_path(const fs::path& path) {
  fs::path s = path;
  s += ".json";
  return s;
}

void save_matrix_with_sidecar(const Matrix& m, const fs::path& path, json meta, Dtype dtype) {
  if (!meta.is_object()) meta = json::object();
  meta["version"] = 1;
  meta["rows"] = m.rows();
  meta["cols"] = m.cols();
  meta["dtype"] = to_string(dtype);
  meta["layout"] = "row-major";
  meta["data"] = path.filename().string();
  write_values(path, m.data(), dtype);
  write_json(sidecar_path(path), meta);
}

std::pair<Matrix, json> load_matrix_with_sidecar(const fs::path& path) {
  const fs::path meta_path = sidecar_path(path);
  json meta = read_json(meta_path);
  const std::size_t rows = checked_size(meta, "rows", meta_path);
  const std::size_t cols = checked_size(meta, "cols", meta_path);
  const Dtype dtype = parse_dtype(meta.value("dtype", std::string("f64")));
  Matrix m(rows, cols, read_values(path, rows * cols, dtype));
  return {std::move(m), std::move(meta)};
}

}  // namespace l2c
