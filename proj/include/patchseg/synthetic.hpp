#pragma once

// Synthetic datasets of axis-aligned blobs with matching patch features, for
// exercising the pipeline without a feature extractor.

#include <cstdint>
#include <filesystem>

#include "patchseg/tensorio.hpp"

namespace patchseg {

struct SyntheticSpec {
  int images = 20;
  int classes = 4;  // class 0 is the background
  int height = 192;
  int width = 160;
  int resized_side = 128;
  int patch_side = 8;
  int dim = 32;
  int min_blobs = 1;
  int max_blobs = 3;
  double separation = 1.0;   // distance between any two class centers
  double noise_ratio = 0.05;  // per-coordinate noise sigma / separation
  std::uint64_t seed = 7;
  // Blob edges fall on patch boundaries (in original-image coordinates), so
  // the ground truth is representable at patch resolution.
  bool snap_to_patches = true;
};

// Class centers: the C vertices of a regular simplex embedded in R^dim with
// pairwise distance `separation`. Rows are classes.
RowMatrixXd synthetic_class_centers(const SyntheticSpec& spec);

// Writes features/<id>.dtf, gt/<id>_gt.png, images/<id>.png and manifest.json
// under `dir` and returns the manifest.
DatasetManifest write_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& dir);

}  // namespace patchseg
