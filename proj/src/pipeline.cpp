#include "patchseg/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "patchseg/affinity.hpp"
#include "patchseg/error.hpp"
#include "patchseg/maskgen.hpp"

namespace patchseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_json(const json& doc, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << doc.dump(2) << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

void write_text(const std::string& text, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << text;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

json hashed_settings(const RunConfig& cfg) {
  json j = cfg.to_json();
  j.erase("out_dir");
  j.erase("run_id");
  j.erase("jobs");
  j.erase("svg");
  return j;
}

class StageTimer {
 public:
  StageTimer() : start_(std::chrono::steady_clock::now()) {}
  double elapsed_ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

// Read-modify-write of run_report.json. Wall times live under "wall_time_ms";
// every other field is a pure function of the inputs and config.
void update_run_report(const RunConfig& cfg, const fs::path& run_dir, const std::string& stage, double wall_ms,
                       const std::function<void(json&)>& edit) {
  const fs::path path = run_dir / "run_report.json";
  json report = fs::exists(path) ? read_json(path) : json::object();
  report["tool_version"] = kToolVersion;
  report["config_hash"] = cfg.hash();
  report["seed"] = cfg.seed;
  report["wall_time_ms"][stage] = wall_ms;
  edit(report);
  write_json(report, path);
}

fs::path segments_path(const fs::path& run_dir, const std::string& image_id) {
  return run_dir / "segments" / (image_id + ".json");
}

fs::path mask_path(const fs::path& stage_dir, const std::string& image_id) {
  return stage_dir / "masks" / (image_id + "_pseudo.png");
}

// Mean patch feature of each crop's segment, in crop order.
RowMatrixXf patch_mean_features(const DatasetManifest& manifest, const fs::path& run_dir,
                                const std::vector<CropRecord>& crops) {
  std::map<std::string, std::vector<std::size_t>> crops_of_image;
  for (std::size_t i = 0; i < crops.size(); ++i) crops_of_image[crops[i].image_id].push_back(i);
  RowMatrixXf out;
  for (const auto& entry : manifest.images) {
    const auto it = crops_of_image.find(entry.image_id);
    if (it == crops_of_image.end()) continue;
    const FeatureTensor tensor = read_tensor(manifest.resolve(entry.feature_path));
    const auto features = tensor.matrix();
    if (out.size() == 0) out = RowMatrixXf::Zero(static_cast<Eigen::Index>(crops.size()), features.cols());
    if (features.cols() != out.cols()) throw DataError("patch feature width differs across images");
    const SegmentSet segs = read_segments(segments_path(run_dir, entry.image_id));
    for (std::size_t ci : it->second) {
      const auto& seg = segs.segments.at(static_cast<std::size_t>(crops[ci].segment_id));
      Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(features.cols());
      for (int p : seg.patches) sum += features.row(p).cast<double>();
      out.row(static_cast<Eigen::Index>(ci)) = (sum / static_cast<double>(seg.patches.size())).cast<float>();
    }
  }
  for (const auto& [image_id, rows] : crops_of_image) {
    const bool known = std::any_of(manifest.images.begin(), manifest.images.end(),
                                   [&](const auto& e) { return e.image_id == image_id; });
    if (!known) throw DataError("crops manifest references unknown image '" + image_id + "'");
  }
  return out;
}

std::vector<PseudoMask> read_stage_masks(const DatasetManifest& manifest, const fs::path& stage_dir) {
  std::vector<PseudoMask> masks;
  for (const auto& e : manifest.images) masks.push_back(read_mask_png(mask_path(stage_dir, e.image_id)));
  return masks;
}

}  // namespace

// ---------------------------------------------------------------------------
// RunConfig

json RunConfig::to_json() const {
  json j;
  j["manifest"] = manifest.string();
  j["out_dir"] = out_dir.string();
  j["run_id"] = run_id;
  j["tau"] = tau;
  j["clusters"] = clusters ? json(*clusters) : json(nullptr);
  j["k_sweep"] = k_sweep;
  j["seed"] = seed;
  j["weighted_edges"] = weighted_edges;
  j["l2_normalize"] = l2_normalize;
  j["theta"] = theta;
  j["drop_unlabeled"] = drop_unlabeled;
  j["jobs"] = jobs;
  j["crop_features"] = crop_features ? json(crop_features->string()) : json(nullptr);
  j["num_classes"] = num_classes ? json(*num_classes) : json(nullptr);
  j["merge_table"] = merge_table ? json(merge_table->string()) : json(nullptr);
  j["svg"] = svg;
  return j;
}

RunConfig RunConfig::from_json(const json& j, RunConfig base) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  try {
    if (j.contains("manifest")) base.manifest = j["manifest"].get<std::string>();
    if (j.contains("out_dir")) base.out_dir = j["out_dir"].get<std::string>();
    if (j.contains("run_id")) base.run_id = j["run_id"].get<std::string>();
    if (j.contains("tau")) base.tau = j["tau"].get<int>();
    if (j.contains("clusters")) {
      base.clusters = j["clusters"].is_null() ? std::nullopt : std::optional<int>(j["clusters"].get<int>());
    }
    if (j.contains("k_sweep")) base.k_sweep = j["k_sweep"].get<std::vector<int>>();
    if (j.contains("seed")) base.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("weighted_edges")) base.weighted_edges = j["weighted_edges"].get<bool>();
    if (j.contains("l2_normalize")) base.l2_normalize = j["l2_normalize"].get<bool>();
    if (j.contains("theta")) base.theta = j["theta"].get<double>();
    if (j.contains("drop_unlabeled")) base.drop_unlabeled = j["drop_unlabeled"].get<bool>();
    if (j.contains("jobs")) base.jobs = j["jobs"].get<int>();
    if (j.contains("crop_features")) {
      base.crop_features = j["crop_features"].is_null()
                               ? std::nullopt
                               : std::optional<fs::path>(j["crop_features"].get<std::string>());
    }
    if (j.contains("num_classes")) {
      base.num_classes = j["num_classes"].is_null() ? std::nullopt : std::optional<int>(j["num_classes"].get<int>());
    }
    if (j.contains("merge_table")) {
      base.merge_table = j["merge_table"].is_null() ? std::nullopt
                                                    : std::optional<fs::path>(j["merge_table"].get<std::string>());
    }
    if (j.contains("svg")) base.svg = j["svg"].get<bool>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return base;
}

RunConfig RunConfig::from_json(const json& j) { return from_json(j, RunConfig{}); }

std::string RunConfig::hash() const { return fnv1a_hex(hashed_settings(*this).dump()); }

fs::path RunConfig::run_dir() const { return out_dir / (run_id.empty() ? "run-" + hash().substr(0, 12) : run_id); }

// ---------------------------------------------------------------------------

void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::clamp<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), 1,
                                                                        std::max<std::size_t>(count, 1)));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(mu);
            if (!failure) failure = std::current_exception();
            next = count;
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

ImageSegmentation segment_image(const Eigen::Ref<const RowMatrixXf>& features, GridShape grid, int tau,
                                bool weighted_edges) {
  if (features.rows() != grid.size()) {
    throw DataError("feature rows " + std::to_string(features.rows()) + " != grid patches " +
                    std::to_string(grid.size()));
  }
  const auto affinity = build_affinity<double>(features);
  const PatchGraph graph = threshold_adjacency(affinity, grid, weighted_edges);
  const Partition partition = louvain(graph);
  ImageSegmentation out;
  out.communities = partition.count();
  if (!graph.edges.empty()) out.modularity = modularity(graph, partition);
  out.segments = split_components(partition, grid, tau);
  return out;
}

void write_segments(const ImageSegmentation& seg, const fs::path& path) {
  json segments = json::array();
  for (const auto& s : seg.segments.segments) {
    segments.push_back({{"id", s.id}, {"community", s.community}, {"valid", s.valid}, {"patches", s.patches}});
  }
  json doc = {{"image_id", seg.segments.image_id},
              {"grid", {seg.segments.grid.rows, seg.segments.grid.cols}},
              {"communities", seg.communities},
              {"modularity", seg.modularity ? json(*seg.modularity) : json(nullptr)},
              {"segments", segments}};
  write_json(doc, path);
}

SegmentSet read_segments(const fs::path& path) {
  const json doc = read_json(path);
  SegmentSet out;
  try {
    out.image_id = doc.at("image_id").get<std::string>();
    const auto grid = doc.at("grid").get<std::vector<int>>();
    if (grid.size() != 2) throw DataError(path.string() + ": grid must have two entries");
    out.grid = {grid[0], grid[1]};
    for (const auto& j : doc.at("segments")) {
      Segment s;
      s.id = j.at("id").get<int>();
      s.community = j.at("community").get<int>();
      s.valid = j.at("valid").get<bool>();
      s.patches = j.at("patches").get<std::vector<int>>();
      out.segments.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  for (std::size_t i = 0; i < out.segments.size(); ++i) {
    if (out.segments[i].id != static_cast<int>(i)) throw DataError(path.string() + ": segment ids out of order");
  }
  return out;
}

DatasetManifest load_run_manifest(const RunConfig& cfg, bool check_features) {
  DatasetManifest manifest = load_manifest(cfg.manifest, check_features);
  if (cfg.merge_table) manifest.label_merge = load_label_merge(*cfg.merge_table);
  return manifest;
}

int resolve_num_classes(const RunConfig& cfg, const DatasetManifest& manifest) {
  if (cfg.num_classes) {
    if (*cfg.num_classes < 1) throw ConfigError("num_classes must be positive");
    return *cfg.num_classes;
  }
  if (!manifest.label_merge.empty()) {
    int top = -1;
    for (const auto& [raw, coarse] : manifest.label_merge) top = std::max(top, coarse);
    if (top < 0) throw ConfigError("label_merge maps every label to ignore");
    return top + 1;
  }
  if (!manifest.has_ground_truth()) {
    throw ConfigError("cannot determine the class count without ground truth; pass --num-classes");
  }
  int top = -1;
  for (const auto& e : manifest.images) {
    const PseudoMask gt = read_mask_png(manifest.resolve(*e.gt_path));
    for (Eigen::Index i = 0; i < gt.labels.size(); ++i) {
      const int v = gt.labels.data()[i];
      if (v != kUnlabeled) top = std::max(top, v);
    }
  }
  if (top < 0) throw DataError("ground truth contains no labeled pixels");
  return top + 1;
}

SegmentSummary run_segment(const RunConfig& cfg, const fs::path& run_dir) {
  const StageTimer timer;
  if (cfg.tau < 0) throw ConfigError("tau must be non-negative");
  const DatasetManifest manifest = load_run_manifest(cfg, true);
  fs::create_directories(run_dir / "segments");
  write_json(hashed_settings(cfg), run_dir / "config.json");

  std::vector<ImageSegmentation> results(manifest.images.size());
  parallel_for(manifest.images.size(), cfg.jobs, [&](std::size_t i) {
    const auto& e = manifest.images[i];
    const FeatureTensor tensor = read_tensor(manifest.resolve(e.feature_path));
    results[i] = segment_image(tensor.matrix(), e.grid(), cfg.tau, cfg.weighted_edges);
    results[i].segments.image_id = e.image_id;
  });

  SegmentSummary summary;
  std::vector<CropRecord> crops;
  json per_image = json::array();
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& e = manifest.images[i];
    const auto& r = results[i];
    write_segments(r, segments_path(run_dir, e.image_id));
    for (auto& c : make_crop_specs(r.segments, e.patch_side)) {
      c.feature_row = static_cast<int>(crops.size());
      crops.push_back(std::move(c));
    }
    const int total = static_cast<int>(r.segments.segments.size());
    const int valid = r.segments.valid_count();
    summary.total_segments += total;
    summary.valid_segments += valid;
    per_image.push_back({{"image_id", e.image_id},
                         {"communities", r.communities},
                         {"segments", total},
                         {"valid_segments", valid},
                         {"modularity", r.modularity ? json(*r.modularity) : json(nullptr)}});
  }
  summary.images = static_cast<int>(results.size());
  const int patch_side = manifest.images.empty() ? 0 : manifest.images.front().patch_side;
  write_crops_manifest(crops, patch_side, run_dir / "crops.json");
  write_json({{"images", summary.images},
              {"total_segments", summary.total_segments},
              {"valid_segments", summary.valid_segments},
              {"valid_percent", summary.valid_percent()},
              {"per_image", per_image}},
             run_dir / "segment_summary.json");
  update_run_report(cfg, run_dir, "segment", timer.elapsed_ms(), [&](json& report) {
    report["total_segments"] = summary.total_segments;
    report["valid_segments"] = summary.valid_segments;
    report["valid_percent"] = summary.valid_percent();
  });
  return summary;
}

LabelSummary run_label(const RunConfig& cfg, const fs::path& run_dir, int clusters, const fs::path& stage_dir) {
  const StageTimer timer;
  if (clusters < 1 || clusters > kMaxClusters) throw ConfigError("K must be in 1..255");
  const DatasetManifest manifest = load_run_manifest(cfg, false);
  std::vector<CropRecord> crops = read_crops_manifest(run_dir / "crops.json");
  if (crops.empty()) throw DataError("no valid segments to cluster");

  RowMatrixXf features;
  if (cfg.crop_features) {
    if (!fs::exists(*cfg.crop_features)) throw DataError("missing crop feature file " + cfg.crop_features->string());
    const FeatureTensor tensor = read_tensor(*cfg.crop_features);
    if (tensor.rows() != crops.size()) {
      throw DataError("crop feature rows " + std::to_string(tensor.rows()) + " != crops manifest records " +
                      std::to_string(crops.size()));
    }
    features = tensor.matrix();
  } else {
    features = patch_mean_features(manifest, run_dir, crops);
    write_tensor(FeatureTensor::from_matrix(features), run_dir / "crop_features.dtf");
  }
  // Row i of the feature file describes crop record i.
  for (std::size_t i = 0; i < crops.size(); ++i) crops[i].feature_row = static_cast<int>(i);

  // Cluster in canonical (manifest image, segment) order so the result does
  // not depend on how the crops manifest happens to be ordered.
  std::map<std::string, std::size_t> image_index;
  for (std::size_t i = 0; i < manifest.images.size(); ++i) image_index[manifest.images[i].image_id] = i;
  std::vector<std::size_t> order(crops.size());
  std::iota(order.begin(), order.end(), 0);
  auto key = [&](std::size_t i) {
    const auto it = image_index.find(crops[i].image_id);
    if (it == image_index.end()) throw DataError("crops manifest references unknown image '" + crops[i].image_id + "'");
    return std::pair(it->second, crops[i].segment_id);
  };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
  RowMatrixXd ordered(features.rows(), features.cols());
  for (std::size_t j = 0; j < order.size(); ++j) ordered.row(j) = features.row(order[j]).cast<double>();
  if (cfg.l2_normalize) ordered = l2_normalize_rows(ordered);
  if (static_cast<std::size_t>(clusters) > crops.size()) {
    throw ConfigError("K = " + std::to_string(clusters) + " exceeds the number of valid segments (" +
                      std::to_string(crops.size()) + ")");
  }
  const auto model = kmeans(ordered, clusters, cfg.seed);
  std::vector<int> cluster_of_row(crops.size());
  for (std::size_t j = 0; j < order.size(); ++j) cluster_of_row[order[j]] = model.assignment[j];

  fs::create_directories(stage_dir);
  json images = json::array();
  for (const auto& e : manifest.images) {
    const SegmentSet labeled = assign_segment_labels(read_segments(segments_path(run_dir, e.image_id)), crops,
                                                     cluster_of_row);
    std::vector<int> labels;
    for (const auto& s : labeled.segments) labels.push_back(s.label);
    images.push_back({{"image_id", e.image_id}, {"labels", labels}});
  }
  write_json({{"clusters", clusters},
              {"seed", cfg.seed},
              {"l2_normalize", cfg.l2_normalize},
              {"inertia", model.inertia},
              {"iterations", model.iterations},
              {"images", images}},
             stage_dir / "labels.json");
  write_tensor(FeatureTensor::from_matrix(model.centroids), stage_dir / "centroids.dtf");

  run_masks(cfg, run_dir, stage_dir);

  LabelSummary summary{clusters, static_cast<int>(crops.size()), model.inertia, model.iterations};
  update_run_report(cfg, run_dir, "label:K=" + std::to_string(clusters), timer.elapsed_ms(), [&](json& report) {
    report["label"][std::to_string(clusters)] = {
        {"crops", summary.crops}, {"inertia", summary.inertia}, {"iterations", summary.iterations}};
  });
  return summary;
}

void run_masks(const RunConfig& cfg, const fs::path& run_dir, const fs::path& stage_dir) {
  const DatasetManifest manifest = load_run_manifest(cfg, false);
  const json labels_doc = read_json(stage_dir / "labels.json");
  std::map<std::string, std::vector<int>> labels_of;
  for (const auto& j : labels_doc.at("images")) {
    labels_of[j.at("image_id").get<std::string>()] = j.at("labels").get<std::vector<int>>();
  }
  fs::create_directories(stage_dir / "masks");
  parallel_for(manifest.images.size(), cfg.jobs, [&](std::size_t i) {
    const auto& e = manifest.images[i];
    SegmentSet segs = read_segments(segments_path(run_dir, e.image_id));
    const auto it = labels_of.find(e.image_id);
    if (it == labels_of.end() || it->second.size() != segs.segments.size()) {
      throw DataError("labels.json does not match the segments of image '" + e.image_id + "'");
    }
    for (std::size_t s = 0; s < segs.segments.size(); ++s) segs.segments[s].label = it->second[s];
    const PseudoMask mask = resize_mask(synthesize_mask(segs, e.patch_side), e.height, e.width);
    write_mask_png(mask, mask_path(stage_dir, e.image_id));
  });
}

EvalReport run_eval(const RunConfig& cfg, const fs::path& stage_dir) {
  const DatasetManifest manifest = load_run_manifest(cfg, false);
  if (!manifest.has_ground_truth()) throw DataError("ground truth required for eval");
  const int clusters = read_json(stage_dir / "labels.json").at("clusters").get<int>();
  const int classes = resolve_num_classes(cfg, manifest);
  if (clusters < classes) {
    throw ConfigError("K = " + std::to_string(clusters) + " is smaller than C = " + std::to_string(classes));
  }
  const std::vector<PseudoMask> preds = read_stage_masks(manifest, stage_dir);
  std::vector<PseudoMask> gts;
  for (const auto& e : manifest.images) gts.push_back(read_mask_png(manifest.resolve(*e.gt_path)));
  const EvalReport report = evaluate_dataset(preds, gts, clusters, classes, manifest.label_merge, cfg.drop_unlabeled);

  json doc = report_to_json(report);
  doc["drop_unlabeled"] = cfg.drop_unlabeled;
  doc["images"] = manifest.images.size();
  write_json(doc, stage_dir / "eval_report.json");
  write_text(report_to_csv(report), stage_dir / "eval_per_class.csv");
  if (cfg.svg) write_text(report_to_svg(report), stage_dir / "eval_iou.svg");
  return report;
}

ExportSummary run_export_denoise(const RunConfig& cfg, const fs::path& stage_dir) {
  DatasetManifest manifest = load_run_manifest(cfg, false);
  const int clusters = read_json(stage_dir / "labels.json").at("clusters").get<int>();
  const std::vector<PseudoMask> masks = read_stage_masks(manifest, stage_dir);
  std::vector<std::string> paths;
  for (auto& e : manifest.images) {
    paths.push_back(fs::path("masks") / (e.image_id + "_pseudo.png"));
    e.source_path = manifest.resolve(e.source_path).string();
  }
  return export_training_set(manifest, masks, paths, cfg.theta, clusters, stage_dir / "denoise_manifest.json");
}

namespace {

int resolve_clusters(const RunConfig& cfg, const DatasetManifest& manifest) {
  if (cfg.clusters) return *cfg.clusters;
  if (!manifest.has_ground_truth() && !cfg.num_classes) {
    throw ConfigError("K must be given explicitly when no ground truth is supplied");
  }
  return resolve_num_classes(cfg, manifest);
}

}  // namespace

fs::path run_pipeline(const RunConfig& cfg) {
  const fs::path run_dir = cfg.run_dir();
  const DatasetManifest manifest = load_run_manifest(cfg, true);
  const int clusters = resolve_clusters(cfg, manifest);
  run_segment(cfg, run_dir);
  run_label(cfg, run_dir, clusters, run_dir);
  if (manifest.has_ground_truth()) {
    const StageTimer timer;
    const EvalReport report = run_eval(cfg, run_dir);
    update_run_report(cfg, run_dir, "eval", timer.elapsed_ms(), [&](json& r) {
      r["eval"] = {{"miou", report.miou}, {"pixel_accuracy", report.pixel_accuracy}, {"mean_f1", report.mean_f1}};
    });
  }
  return run_dir;
}

fs::path run_sweep(const RunConfig& cfg) {
  if (cfg.k_sweep.empty()) throw ConfigError("sweep needs at least one K");
  const DatasetManifest manifest = load_run_manifest(cfg, true);
  if (!manifest.has_ground_truth()) throw DataError("ground truth required for eval");
  const fs::path run_dir = cfg.run_dir();
  run_segment(cfg, run_dir);
  std::ostringstream csv;
  csv << std::setprecision(10);
  csv << "K,miou,pixel_accuracy,mean_f1,ignored_pixels\n";
  for (int k : cfg.k_sweep) {
    const fs::path stage = run_dir / "sweep" / ("K" + std::to_string(k));
    run_label(cfg, run_dir, k, stage);
    const StageTimer timer;
    const EvalReport report = run_eval(cfg, stage);
    update_run_report(cfg, run_dir, "eval:K=" + std::to_string(k), timer.elapsed_ms(), [](json&) {});
    csv << k << ',' << report.miou << ',' << report.pixel_accuracy << ',' << report.mean_f1 << ','
        << report.confusion.ignored_pixels << '\n';
  }
  write_text(csv.str(), run_dir / "sweep_summary.csv");
  return run_dir;
}

}  // namespace patchseg
