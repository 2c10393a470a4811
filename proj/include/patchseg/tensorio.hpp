#pragma once

// Interchange formats: the DTF1 dense tensor container and the dataset
// manifest JSON that ties images, grids and feature files together.
//
// DTF1 layout (all integers little-endian):
//   "DTF1" | u8 dtype (1 = f32) | u8 ndim | ndim x u64 dims | payload
// The payload is row-major IEEE-754 binary32.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "patchseg/types.hpp"

namespace patchseg {

inline constexpr std::uint8_t kDtypeF32 = 1;

struct FeatureTensor {
  std::vector<std::uint64_t> shape;
  std::vector<float> data;

  // Leading dimension; rows of the 2-D view.
  std::size_t rows() const { return shape.empty() ? 0 : shape.front(); }
  // Product of the trailing dimensions.
  std::size_t cols() const;

  Eigen::Map<const RowMatrixXf> matrix() const {
    return {data.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
  }

  template <typename Derived>
  static FeatureTensor from_matrix(const Eigen::MatrixBase<Derived>& m) {
    FeatureTensor t;
    t.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
    t.data.resize(static_cast<std::size_t>(m.size()));
    Eigen::Map<RowMatrixXf>(t.data.data(), m.rows(), m.cols()) = m.template cast<float>();
    return t;
  }

  friend bool operator==(const FeatureTensor&, const FeatureTensor&) = default;
};

// Throws DataError if the shape/data invariants do not hold.
void validate_tensor(const FeatureTensor& tensor);

std::vector<std::uint8_t> encode_tensor(const FeatureTensor& tensor);
FeatureTensor decode_tensor(const std::vector<std::uint8_t>& bytes);

void write_tensor(const FeatureTensor& tensor, const std::filesystem::path& path);
FeatureTensor read_tensor(const std::filesystem::path& path);

// Reads only the header; used to cross-check manifests without loading payloads.
std::vector<std::uint64_t> read_tensor_shape(const std::filesystem::path& path);

struct ImageEntry {
  std::string image_id;
  std::string source_path;
  int height = 0;        // original image height in pixels
  int width = 0;         // original image width in pixels
  int resized_side = 0;  // T
  int patch_side = 0;    // t
  int grid_rows = 0;     // T / t
  int grid_cols = 0;     // T / t
  std::string feature_path;
  std::optional<std::string> gt_path;

  GridShape grid() const { return {grid_rows, grid_cols}; }
  int patch_count() const { return grid_rows * grid_cols; }

  friend bool operator==(const ImageEntry&, const ImageEntry&) = default;
};

struct DatasetManifest {
  std::vector<ImageEntry> images;
  // raw ground-truth id -> coarse class id; a negative coarse id marks an ignored label.
  std::map<int, int> label_merge;
  // Directory relative paths are resolved against; not serialized.
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& p) const;
  bool has_ground_truth() const;

  friend bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
    return a.images == b.images && a.label_merge == b.label_merge;
  }
};

// Checks T mod t, grid geometry and id uniqueness. With check_features the
// referenced feature files are opened and their row counts compared to the grid.
void validate_manifest(const DatasetManifest& manifest, bool check_features);

// {"<raw_id>": class_id, ...}
std::map<int, int> parse_label_merge(const nlohmann::json& merge);
// A file holding either a bare merge object or {"label_merge": {...}}.
std::map<int, int> load_label_merge(const std::filesystem::path& path);

DatasetManifest load_manifest(const std::filesystem::path& path, bool check_features = true);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

}  // namespace patchseg
