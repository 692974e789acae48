#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace causeloc {

enum class Provenance : std::uint32_t { Measured = 0, Predicted = 1 };

const char* to_string(Provenance p);

/// Images x voxels activations, row-major float32.
struct ResponseMatrix {
  std::vector<std::string> image_ids;
  std::vector<std::string> voxel_ids;
  std::vector<float> values;
  Provenance provenance = Provenance::Predicted;

  ResponseMatrix() = default;
  ResponseMatrix(std::vector<std::string> images, std::vector<std::string> voxels,
                 Provenance prov = Provenance::Predicted);

  std::size_t n_images() const { return image_ids.size(); }
  std::size_t n_voxels() const { return voxel_ids.size(); }

  float& at(std::size_t image, std::size_t voxel) {
    return values[image * voxel_ids.size() + voxel];
  }
  float at(std::size_t image, std::size_t voxel) const {
    return values[image * voxel_ids.size() + voxel];
  }
  std::span<const float> row(std::size_t image) const {
    return {values.data() + image * voxel_ids.size(), voxel_ids.size()};
  }
  std::span<float> row(std::size_t image) {
    return {values.data() + image * voxel_ids.size(), voxel_ids.size()};
  }
  std::vector<double> column(std::size_t voxel) const;

  // Throws if dimensions disagree or a value is non-finite.
  void check() const;

  bool operator==(const ResponseMatrix&) const = default;
};

// id -> row/column position. Throws on duplicates.
std::unordered_map<std::string, std::size_t> index_of(const std::vector<std::string>& ids);

// Column subset, in the order given.
ResponseMatrix select_voxels(const ResponseMatrix& m, const std::vector<std::size_t>& columns);
ResponseMatrix select_voxels(const ResponseMatrix& m, const std::vector<bool>& mask);
// Row subset by image id, in the order given.
ResponseMatrix select_images(const ResponseMatrix& m, const std::vector<std::string>& ids);
// Stack rows of matrices that share voxel_ids.
ResponseMatrix concat_images(const std::vector<const ResponseMatrix*>& parts);

/// Unit-normalized embedding rows keyed by image id or concept string.
struct EmbeddingIndex {
  std::vector<std::string> ids;
  std::vector<float> vectors;
  std::size_t dim = 0;

  std::size_t size() const { return ids.size(); }
  std::span<const float> row(std::size_t i) const { return {vectors.data() + i * dim, dim}; }
  std::span<const float> find(const std::string& id) const;

  // Throws unless every row has norm 1 within 1e-6.
  void check_unit_norm() const;

  bool operator==(const EmbeddingIndex&) const = default;
};

// Normalizes v in place to unit length; throws on a zero vector.
void normalize_unit(std::span<float> v);

struct NormalizationStats {
  std::vector<std::string> voxel_ids;  // retained voxels
  std::vector<double> mean;
  std::vector<double> stddev;          // population (divide by N)
  std::vector<std::string> dead_voxel_ids;
};

struct NormalizedMatrix {
  ResponseMatrix matrix;
  NormalizationStats stats;
};

inline constexpr double kDeadVoxelStd = 1e-12;

// Per-voxel z-scoring across images; zero-variance voxels are dropped.
NormalizedMatrix zscore_normalize(const ResponseMatrix& m);

// Applies precomputed stats (e.g. from another matrix) to the same voxels.
ResponseMatrix apply_normalization(const ResponseMatrix& m, const NormalizationStats& stats);

// Sample Pearson correlation. Throws on length mismatch, n < 2 or a
// constant input.
double pearson(std::span<const double> x, std::span<const double> y);

struct ReliabilityMask {
  std::vector<bool> keep;
  std::vector<double> correlation;  // NaN where undefined
  std::vector<std::string> warnings;
  double threshold = 0.2;

  std::size_t n_kept() const;
};

inline constexpr double kDefaultReliabilityThreshold = 0.2;

ReliabilityMask filter_voxels_by_reliability(const ResponseMatrix& predicted,
                                             const ResponseMatrix& measured,
                                             double threshold = kDefaultReliabilityThreshold);

// Binary containers. Layout (little endian):
//   magic[4] "BCRM" | "BCEI", version u32, provenance u32,
//   n_rows u64, n_cols u64,
//   row ids then column ids, each u32 byte length + UTF-8 bytes,
//   values row-major f32.
// For BCEI the column ids are empty (n_cols = dim) and provenance is 0.
inline constexpr std::uint32_t kMatrixFormatVersion = 1;

void write_matrix(const ResponseMatrix& m, const std::string& path);
ResponseMatrix read_matrix(const std::string& path);
std::string encode_matrix(const ResponseMatrix& m);
ResponseMatrix decode_matrix(const std::string& bytes);

void write_index(const EmbeddingIndex& index, const std::string& path);
EmbeddingIndex read_index(const std::string& path);
std::string encode_index(const EmbeddingIndex& index);
EmbeddingIndex decode_index(const std::string& bytes);

}  // namespace causeloc
