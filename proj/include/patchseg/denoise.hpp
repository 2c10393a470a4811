#pragma once

#include <filesystem>
#include <span>
#include <string>

#include "patchseg/maskgen.hpp"
#include "patchseg/tensorio.hpp"
#include "patchseg/types.hpp"

namespace patchseg {

// K x H x W class probabilities, stored as a K x (H*W) matrix with one pixel per column.
struct ProbMap {
  int height = 0;
  int width = 0;
  RowMatrixXd values;

  ProbMap() = default;
  ProbMap(int classes, int h, int w, double fill = 0.0)
      : height(h), width(w), values(RowMatrixXd::Constant(classes, static_cast<Eigen::Index>(h) * w, fill)) {}

  int classes() const { return static_cast<int>(values.rows()); }
  double& at(int k, int y, int x) { return values(k, static_cast<Eigen::Index>(y) * width + x); }
  double at(int k, int y, int x) const { return values(k, static_cast<Eigen::Index>(y) * width + x); }

  // True when every pixel is a probability vector within tol.
  bool is_simplex(double tol = 1e-6) const;
};

inline constexpr double kCrossEntropyEps = 1e-12;

struct CrossEntropy {
  double loss = 0.0;
  std::int64_t labeled_pixels = 0;
  bool no_supervision() const { return labeled_pixels == 0; }
};

// Sum over labeled pixels of -ln(p[label] + eps); kUnlabeled pixels are skipped.
CrossEntropy masked_cross_entropy(const ProbMap& pred, const PseudoMask& pseudo_gt);

// d loss / d pred: -1 / (p + eps) at each labeled pixel's label, 0 elsewhere.
ProbMap masked_cross_entropy_grad(const ProbMap& pred, const PseudoMask& pseudo_gt);

inline constexpr double kDefaultDominantTheta = 0.95;

// False (drop) when one class holds at least theta of the labeled pixels, or
// when no pixel is labeled. Requires 0.5 < theta <= 1.
bool drop_dominant(const PseudoMask& mask, double theta);

struct ExportSummary {
  int kept = 0;
  int dropped = 0;
};

// Writes {"pairs":[{"image","mask"}], "num_classes", "ignore_index", "theta"}
// for every mask that survives drop_dominant.
ExportSummary export_training_set(const DatasetManifest& manifest, std::span<const PseudoMask> masks,
                                  std::span<const std::string> mask_paths, double theta, int num_classes,
                                  const std::filesystem::path& out_path);

}  // namespace patchseg
