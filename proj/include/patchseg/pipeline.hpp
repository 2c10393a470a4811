#pragma once

// Stage orchestration shared by the command-line tool and the integration
// tests. Every stage persists its outputs under the run directory so stages
// can be re-run independently:
//
//   <out>/<run-id>/
//     config.json  run_report.json  segment_summary.json  crops.json
//     segments/<image_id>.json
//     crop_features.dtf             (when crop features are derived from patches)
//     labels.json  centroids.dtf  masks/<image_id>_pseudo.png
//     eval_report.json  eval_per_class.csv  [eval_iou.svg]
//     denoise_manifest.json
//     sweep/K<k>/...  sweep_summary.csv

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "patchseg/denoise.hpp"
#include "patchseg/evalkit.hpp"
#include "patchseg/graphseg.hpp"
#include "patchseg/pseudolabel.hpp"
#include "patchseg/tensorio.hpp"

namespace patchseg {

inline constexpr const char* kToolVersion = "0.1.0";

struct RunConfig {
  std::filesystem::path manifest;
  std::filesystem::path out_dir = "runs";
  std::string run_id;  // empty: derived from the config hash
  int tau = kDefaultTau;
  std::optional<int> clusters;
  std::vector<int> k_sweep;
  std::uint64_t seed = 0;
  bool weighted_edges = false;
  bool l2_normalize = false;
  double theta = kDefaultDominantTheta;
  bool drop_unlabeled = true;
  int jobs = 1;
  // Crop features from an external extractor; when absent each crop is
  // described by the mean patch feature of its segment.
  std::optional<std::filesystem::path> crop_features;
  std::optional<int> num_classes;
  // Replaces the manifest's label_merge table.
  std::optional<std::filesystem::path> merge_table;
  bool svg = false;

  nlohmann::json to_json() const;
  // Keys present in `j` override the corresponding fields of `base`.
  static RunConfig from_json(const nlohmann::json& j, RunConfig base);
  static RunConfig from_json(const nlohmann::json& j);
  // FNV-1a over the settings that influence outputs.
  std::string hash() const;
  std::filesystem::path run_dir() const;
};

// Runs fn(0..count-1) on up to `jobs` threads; rethrows the first failure.
void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn);

struct ImageSegmentation {
  SegmentSet segments;
  int communities = 0;
  std::optional<double> modularity;  // absent for edgeless graphs
};

// Affinity -> threshold -> Louvain -> spatial split for one feature matrix.
ImageSegmentation segment_image(const Eigen::Ref<const RowMatrixXf>& features, GridShape grid, int tau,
                                bool weighted_edges);

struct SegmentSummary {
  int images = 0;
  int total_segments = 0;
  int valid_segments = 0;
  double valid_percent() const { return total_segments ? 100.0 * valid_segments / total_segments : 0.0; }
};

struct LabelSummary {
  int clusters = 0;
  int crops = 0;
  double inertia = 0.0;
  int iterations = 0;
};

// The configured manifest with cfg.merge_table applied.
DatasetManifest load_run_manifest(const RunConfig& cfg, bool check_features);

// Resolved class count: --num-classes, else the merge table, else the GT masks.
int resolve_num_classes(const RunConfig& cfg, const DatasetManifest& manifest);

SegmentSummary run_segment(const RunConfig& cfg, const std::filesystem::path& run_dir);
LabelSummary run_label(const RunConfig& cfg, const std::filesystem::path& run_dir, int clusters,
                       const std::filesystem::path& stage_dir);
void run_masks(const RunConfig& cfg, const std::filesystem::path& run_dir, const std::filesystem::path& stage_dir);
EvalReport run_eval(const RunConfig& cfg, const std::filesystem::path& stage_dir);
ExportSummary run_export_denoise(const RunConfig& cfg, const std::filesystem::path& stage_dir);

// segment + label + (eval when ground truth is available); returns the run directory.
std::filesystem::path run_pipeline(const RunConfig& cfg);
// segment once, then label + eval for every K in cfg.k_sweep under sweep/K<k>.
std::filesystem::path run_sweep(const RunConfig& cfg);

SegmentSet read_segments(const std::filesystem::path& path);
void write_segments(const ImageSegmentation& seg, const std::filesystem::path& path);

}  // namespace patchseg
