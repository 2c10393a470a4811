#include "patchseg/denoise.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "patchseg/error.hpp"

namespace patchseg {

namespace {

void check_shapes(const ProbMap& pred, const PseudoMask& gt) {
  if (pred.height != gt.height() || pred.width != gt.width()) {
    throw std::invalid_argument("masked_cross_entropy: shape mismatch between prediction and pseudo mask");
  }
  if (pred.values.cols() != static_cast<Eigen::Index>(pred.height) * pred.width) {
    throw std::invalid_argument("masked_cross_entropy: malformed probability map");
  }
}

int checked_label(const ProbMap& pred, const PseudoMask& gt, int y, int x) {
  const int label = gt.labels(y, x);
  if (label != kUnlabeled && label >= pred.classes()) {
    throw std::invalid_argument("masked_cross_entropy: label " + std::to_string(label) + " >= K");
  }
  return label;
}

}  // namespace

bool ProbMap::is_simplex(double tol) const {
  if ((values.array() < 0.0).any()) return false;
  const Eigen::RowVectorXd sums = values.colwise().sum();
  return ((sums.array() - 1.0).abs() <= tol).all();
}

CrossEntropy masked_cross_entropy(const ProbMap& pred, const PseudoMask& pseudo_gt) {
  check_shapes(pred, pseudo_gt);
  CrossEntropy out;
  for (int y = 0; y < pred.height; ++y) {
    for (int x = 0; x < pred.width; ++x) {
      const int label = checked_label(pred, pseudo_gt, y, x);
      if (label == kUnlabeled) continue;
      out.loss -= std::log(pred.at(label, y, x) + kCrossEntropyEps);
      ++out.labeled_pixels;
    }
  }
  return out;
}

ProbMap masked_cross_entropy_grad(const ProbMap& pred, const PseudoMask& pseudo_gt) {
  check_shapes(pred, pseudo_gt);
  ProbMap grad(pred.classes(), pred.height, pred.width, 0.0);
  for (int y = 0; y < pred.height; ++y) {
    for (int x = 0; x < pred.width; ++x) {
      const int label = checked_label(pred, pseudo_gt, y, x);
      if (label == kUnlabeled) continue;
      grad.at(label, y, x) = -1.0 / (pred.at(label, y, x) + kCrossEntropyEps);
    }
  }
  return grad;
}

bool drop_dominant(const PseudoMask& mask, double theta) {
  if (!(theta > 0.5 && theta <= 1.0)) throw std::invalid_argument("drop_dominant: theta must be in (0.5, 1]");
  std::array<std::int64_t, 256> hist{};
  for (Eigen::Index i = 0; i < mask.labels.size(); ++i) ++hist[mask.labels.data()[i]];
  std::int64_t labeled = 0;
  std::int64_t top = 0;
  for (int v = 0; v < 256; ++v) {
    if (v == kUnlabeled) continue;
    labeled += hist[v];
    top = std::max(top, hist[v]);
  }
  if (labeled == 0) return false;
  return static_cast<double>(top) / static_cast<double>(labeled) < theta;
}

ExportSummary export_training_set(const DatasetManifest& manifest, std::span<const PseudoMask> masks,
                                  std::span<const std::string> mask_paths, double theta, int num_classes,
                                  const std::filesystem::path& out_path) {
  if (manifest.images.empty()) throw DataError("nothing to export");
  if (masks.size() != manifest.images.size() || mask_paths.size() != manifest.images.size()) {
    throw DataError("export_training_set: need one mask per manifest image");
  }
  ExportSummary summary;
  nlohmann::json pairs = nlohmann::json::array();
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (drop_dominant(masks[i], theta)) {
      pairs.push_back({{"image", manifest.images[i].source_path}, {"mask", mask_paths[i]}});
      ++summary.kept;
    } else {
      ++summary.dropped;
    }
  }
  nlohmann::json doc = {{"pairs", pairs}, {"num_classes", num_classes}, {"ignore_index", kUnlabeled}, {"theta", theta}};
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw DataError("cannot open " + out_path.string() + " for writing");
  out << doc.dump(2) << '\n';
  if (!out) throw DataError("write failed: " + out_path.string());
  return summary;
}

}  // namespace patchseg
