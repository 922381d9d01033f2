#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "l2c/matrix.hpp"

namespace l2c {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// On-disk element type. Payloads are little-endian IEEE-754, row-major.
enum class Dtype { kF32, kF64 };

std::string to_string(Dtype dtype);
Dtype parse_dtype(const std::string& s);
std::size_t dtype_size(Dtype dtype);

// ---------------------------------------------------------------------------
// Raw payloads

/// Encodes values as little-endian bytes of the given dtype.
std::vector<char> encode_values(std::span<const double> values, Dtype dtype);

/// Reads exactly `count` values. Missing file, wrong byte length and
/// non-finite values each raise their own error type.
std::vector<double> read_values(const fs::path& path, std::size_t count, Dtype dtype);
void write_values(const fs::path& path, std::span<const double> values, Dtype dtype);

json read_json(const fs::path& path);
void write_json(const fs::path& path, const json& j);

/// Writes `bytes` to a sibling temp file then renames it over `path`.
void write_file_atomic(const fs::path& path, std::span<const char> bytes);

/// Stages a directory next to `target` and swaps it in on commit(). If never
/// committed, the staging directory is removed and `target` is untouched.
class StagedDirectory {
 public:
  explicit StagedDirectory(fs::path target);
  ~StagedDirectory();
  StagedDirectory(const StagedDirectory&) = delete;
  StagedDirectory& operator=(const StagedDirectory&) = delete;

  const fs::path& path() const { return staging_; }
  void commit();

 private:
  fs::path target_;
  fs::path staging_;
  bool committed_ = false;
};

// ---------------------------------------------------------------------------
// Embedding bundles

/// P templates x C classes x d stack of precomputed text embeddings.
struct EmbeddingBundle {
  std::vector<std::string> templates;  // P
  std::vector<std::string> classes;    // C
  std::size_t dim = 0;
  std::vector<Matrix> embeddings;      // P matrices, each C x dim
  Dtype dtype = Dtype::kF32;

  std::size_t template_count() const { return embeddings.size(); }
  std::size_t class_count() const { return classes.size(); }

  /// Throws ValidationError/NonFiniteValueError on inconsistent contents.
  void validate() const;
};

EmbeddingBundle load_bundle(const fs::path& dir);
void save_bundle(const EmbeddingBundle& bundle, const fs::path& dir);

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  int version = kCheckpointVersion;
  json config;                          // resolved model/run config snapshot
  std::map<std::string, Matrix> blobs;  // every named parameter (f64 on disk)
};

/// Atomically replaces `dir` with the checkpoint.
void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir);
/// Writes the checkpoint files into an existing (e.g. staged) directory.
void write_checkpoint_files(const Checkpoint& ckpt, const fs::path& dir);
Checkpoint load_checkpoint(const fs::path& dir);

/// Hex SHA-256 over the config and every blob's name, shape and bytes.
std::string checkpoint_digest(const Checkpoint& ckpt);

// ---------------------------------------------------------------------------
// Domain prompt files

struct PromptFile {
  Matrix prompt;                  // (L+1) x d
  Matrix image_context;           // (l+1) x d support-mean image tokens; may be empty
  std::string checkpoint_sha256;  // digest of the checkpoint that produced it
  json extra;                     // free-form provenance (domain, support size, seed)
};

/// Writes `prompt.bin` (f64), `context.bin` (f64, when present) and
/// `prompt.json` into `dir`.
void save_prompt(const PromptFile& prompt, const fs::path& dir);
void write_prompt_files(const PromptFile& prompt, const fs::path& dir);
PromptFile load_prompt(const fs::path& dir);

// ---------------------------------------------------------------------------
// Matrix + sidecar files (text prototypes and similar)

/// Writes `path` as the binary payload and `path`.json as the sidecar, which
/// receives rows/cols/dtype merged into `meta`.
void save_matrix_with_sidecar(const Matrix& m, const fs::path& path, json meta,
                              Dtype dtype = Dtype::kF64);
/// Returns the matrix and the full sidecar.
std::pair<Matrix, json> load_matrix_with_sidecar(const fs::path& path);

fs::path sidecar_path(const fs::path& path);

}  // namespace l2c
