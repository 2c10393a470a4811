#pragma once

// Unsupervised segmentation evaluation: one global Hungarian matching of
// predicted clusters to ground-truth classes, then IoU / F1 / pixel accuracy
// from the matched confusion matrix. Pixels in clusters left unmatched
// (K > C) are false negatives of their ground-truth class.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "patchseg/maskgen.hpp"
#include "patchseg/types.hpp"

namespace patchseg {

inline constexpr int kUnmatched = -1;

struct Assignment {
  std::vector<int> cluster_of_class;  // injective class -> cluster
  double total = 0.0;                 // sum of matched scores
};

// Maximum-weight injective matching of rows (classes) to columns (clusters),
// requires cols >= rows >= 1. Among optimal matchings the lexicographically
// smallest cluster_of_class is returned.
Assignment hungarian_max(const Eigen::Ref<const Eigen::MatrixXd>& score, double tie_tolerance = 1e-9);

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

struct ConfusionMatrix {
  CountMatrix counts;  // classes x clusters
  std::int64_t ignored_pixels = 0;

  ConfusionMatrix() = default;
  ConfusionMatrix(int classes, int clusters) : counts(CountMatrix::Zero(classes, clusters)) {}

  int classes() const { return static_cast<int>(counts.rows()); }
  int clusters() const { return static_cast<int>(counts.cols()); }
  std::int64_t counted() const { return counts.sum(); }

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
};

// Raw ground-truth id -> class id. Empty means identity, with 255 treated as
// an ignore label. A negative class id marks raw ids that are ignored.
using LabelMerge = std::map<int, int>;

ConfusionMatrix accumulate_confusion(const PseudoMask& pred, const PseudoMask& gt, const LabelMerge& merge,
                                     int classes, int clusters, bool drop_unlabeled);

struct ClassScore {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  double iou = 0.0;
  double f1 = 0.0;
};

struct EvalReport {
  int num_classes = 0;
  int num_clusters = 0;
  std::vector<int> cluster_of_class;
  std::vector<int> class_of_cluster;  // kUnmatched for clusters without a class
  std::vector<ClassScore> per_class;
  double miou = 0.0;
  double pixel_accuracy = 0.0;
  double mean_f1 = 0.0;
  ConfusionMatrix confusion;
};

// Scores a confusion matrix under a class -> cluster mapping. Classes with
// TP + FP + FN = 0 get IoU and F1 of 0.
EvalReport score(const ConfusionMatrix& cm, std::span<const int> cluster_of_class);

// Accumulates one dataset-level confusion matrix, matches once, and scores.
EvalReport evaluate_dataset(std::span<const PseudoMask> preds, std::span<const PseudoMask> gts, int clusters,
                            int classes, const LabelMerge& merge, bool drop_unlabeled);

nlohmann::json report_to_json(const EvalReport& report);
std::string report_to_csv(const EvalReport& report);
// SVG bar chart of per-class IoU.
std::string report_to_svg(const EvalReport& report);

}  // namespace patchseg
