#include "patchseg/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "patchseg/maskgen.hpp"
#include "patchseg/pseudolabel.hpp"

namespace patchseg {

namespace fs = std::filesystem;

namespace {

class Gaussian {
 public:
  explicit Gaussian(std::uint64_t seed) : uniform_(seed) {}

  // Box-Muller on the portable uniform source.
  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform_.next();
    const double u2 = uniform_.next();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

  SeededUniform& uniform() { return uniform_; }

 private:
  SeededUniform uniform_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

int uniform_int(SeededUniform& rng, int lo, int hi) {
  return lo + static_cast<int>(rng.next_index(static_cast<std::uint64_t>(hi - lo + 1)));
}

}  // namespace

RowMatrixXd synthetic_class_centers(const SyntheticSpec& spec) {
  if (spec.classes < 2 || spec.dim < spec.classes) {
    throw std::invalid_argument("synthetic: need 2 <= classes <= dim");
  }
  // e_c - (1/C) 1 has pairwise distance sqrt(2) and pairwise dot -1/C.
  RowMatrixXd centers = RowMatrixXd::Zero(spec.classes, spec.dim);
  for (int c = 0; c < spec.classes; ++c) {
    for (int j = 0; j < spec.classes; ++j) centers(c, j) = (c == j ? 1.0 : 0.0) - 1.0 / spec.classes;
  }
  return centers * (spec.separation / std::sqrt(2.0));
}

DatasetManifest write_synthetic_dataset(const SyntheticSpec& spec, const fs::path& dir) {
  if (spec.images < 1) throw std::invalid_argument("synthetic: need at least one image");
  if (spec.resized_side % spec.patch_side != 0) throw std::invalid_argument("synthetic: T not divisible by t");
  fs::create_directories(dir / "features");
  fs::create_directories(dir / "gt");
  fs::create_directories(dir / "images");

  const RowMatrixXd centers = synthetic_class_centers(spec);
  const double sigma = spec.noise_ratio * spec.separation;
  const int side = spec.resized_side / spec.patch_side;

  DatasetManifest manifest;
  manifest.base_dir = dir;
  for (int i = 0; i < spec.images; ++i) {
    Gaussian rng(spec.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(i));
    const int blobs = uniform_int(rng.uniform(), spec.min_blobs, spec.max_blobs);
    PseudoMask gt(spec.height, spec.width, 0);
    PseudoMask cells(side, side, 0);
    for (int b = 0; b < blobs; ++b) {
      // The first blob cycles through the foreground classes so every class occurs.
      const int cls = b == 0 ? 1 + i % (spec.classes - 1) : uniform_int(rng.uniform(), 1, spec.classes - 1);
      const auto value = static_cast<std::uint8_t>(cls);
      if (spec.snap_to_patches) {
        const int h = uniform_int(rng.uniform(), side / 4, side / 2);
        const int w = uniform_int(rng.uniform(), side / 4, side / 2);
        const int r0 = uniform_int(rng.uniform(), 0, side - h);
        const int c0 = uniform_int(rng.uniform(), 0, side - w);
        cells.labels.block(r0, c0, h, w).setConstant(value);
      } else {
        const int h = uniform_int(rng.uniform(), spec.height / 4, spec.height / 2);
        const int w = uniform_int(rng.uniform(), spec.width / 4, spec.width / 2);
        const int y0 = uniform_int(rng.uniform(), 0, spec.height - h);
        const int x0 = uniform_int(rng.uniform(), 0, spec.width - w);
        gt.labels.block(y0, x0, h, w).setConstant(value);
      }
    }
    if (spec.snap_to_patches) gt = resize_mask(cells, spec.height, spec.width);

    RowMatrixXf features(side * side, spec.dim);
    for (int r = 0; r < side; ++r) {
      for (int c = 0; c < side; ++c) {
        int cls = cells.labels(r, c);
        if (!spec.snap_to_patches) {
          // Class at the patch center, mapped back to the original resolution.
          const int cy = r * spec.patch_side + spec.patch_side / 2;
          const int cx = c * spec.patch_side + spec.patch_side / 2;
          cls = gt.labels(cy * spec.height / spec.resized_side, cx * spec.width / spec.resized_side);
        }
        for (int j = 0; j < spec.dim; ++j) {
          features(r * side + c, j) = static_cast<float>(centers(cls, j) + sigma * rng.next());
        }
      }
    }

    ImageEntry e;
    e.image_id = "synth_" + std::to_string(i);
    e.source_path = "images/" + e.image_id + ".png";
    e.height = spec.height;
    e.width = spec.width;
    e.resized_side = spec.resized_side;
    e.patch_side = spec.patch_side;
    e.grid_rows = side;
    e.grid_cols = side;
    e.feature_path = "features/" + e.image_id + ".dtf";
    e.gt_path = "gt/" + e.image_id + "_gt.png";
    write_tensor(FeatureTensor::from_matrix(features), dir / e.feature_path);
    write_mask_png(gt, dir / *e.gt_path);
    write_color_png(gt, dir / e.source_path);
    manifest.images.push_back(std::move(e));
  }
  save_manifest(manifest, dir / "manifest.json");
  return manifest;
}

}  // namespace patchseg
