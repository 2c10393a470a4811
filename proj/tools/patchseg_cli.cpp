// patchseg: pseudo-mask distillation from precomputed patch features.
//
// Exit codes: 0 success, 2 configuration error, 3 data error.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "patchseg/error.hpp"
#include "patchseg/pipeline.hpp"
#include "patchseg/synthetic.hpp"

namespace fs = std::filesystem;
using namespace patchseg;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

// Flag values as parsed; unset flags leave the config file / defaults alone.
struct Flags {
  std::optional<std::string> config;
  std::optional<std::string> manifest;
  std::optional<std::string> out;
  std::optional<std::string> run_id;
  std::optional<std::string> run;
  std::optional<int> tau;
  std::optional<int> clusters;
  std::optional<std::string> k_range;
  std::optional<std::uint64_t> seed;
  std::optional<double> theta;
  std::optional<int> jobs;
  std::optional<std::string> crop_features;
  std::optional<int> num_classes;
  std::optional<std::string> merge_table;
  bool weighted_edges = false;
  bool l2_normalize = false;
  bool keep_unlabeled = false;
  bool svg = false;
};

void add_run_options(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON config file; flags take precedence");
  cmd->add_option("--manifest", f.manifest, "dataset manifest JSON");
  cmd->add_option("--out", f.out, "output root (default: runs)");
  cmd->add_option("--run-id", f.run_id, "run directory name (default: derived from the config hash)");
  cmd->add_option("--run", f.run, "existing run/stage directory (default: <out>/<run-id>)");
  cmd->add_option("--jobs", f.jobs, "worker threads for per-image stages");
  cmd->add_option("--seed", f.seed, "k-means seed");
}

void add_segment_options(CLI::App* cmd, Flags& f) {
  cmd->add_option("--tau", f.tau, "segments with more than tau patches are valid (default 5)");
  cmd->add_flag("--weighted-edges", f.weighted_edges, "use affinity values as edge weights");
}

void add_label_options(CLI::App* cmd, Flags& f) {
  cmd->add_option("-k,--clusters", f.clusters, "number of pseudo-classes K (default: C when GT is present)");
  cmd->add_option("--crop-features", f.crop_features, "DTF1 crop features, one row per crops.json record");
  cmd->add_flag("--l2-normalize", f.l2_normalize, "L2-normalize crop features before k-means");
}

void add_eval_options(CLI::App* cmd, Flags& f) {
  cmd->add_option("--num-classes", f.num_classes, "ground-truth class count C after label merging");
  cmd->add_option("--merge-table", f.merge_table, "JSON raw-label -> class table, replacing the manifest's");
  cmd->add_flag("--keep-unlabeled", f.keep_unlabeled, "fail on unlabeled prediction pixels instead of dropping them");
  cmd->add_flag("--svg", f.svg, "also write a per-class IoU bar chart");
}

std::vector<int> parse_k_range(const std::string& text) {
  // "6..18" or "6,8,10"
  std::vector<int> ks;
  try {
    if (const auto dots = text.find(".."); dots != std::string::npos) {
      const int lo = std::stoi(text.substr(0, dots));
      const int hi = std::stoi(text.substr(dots + 2));
      if (lo < 1 || hi < lo) throw ConfigError("bad K range '" + text + "'");
      for (int k = lo; k <= hi; ++k) ks.push_back(k);
    } else {
      std::stringstream in(text);
      for (std::string tok; std::getline(in, tok, ',');) ks.push_back(std::stoi(tok));
    }
  } catch (const std::logic_error&) {
    throw ConfigError("bad K list '" + text + "'");
  }
  return ks;
}

RunConfig resolve_config(const Flags& f) {
  RunConfig cfg;
  if (f.config) {
    std::ifstream in(*f.config);
    if (!in) throw ConfigError("cannot open config file " + *f.config);
    try {
      cfg = RunConfig::from_json(nlohmann::json::parse(in), cfg);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config file: " + std::string(e.what()));
    }
  }
  if (f.manifest) cfg.manifest = *f.manifest;
  if (f.out) cfg.out_dir = *f.out;
  if (f.run_id) cfg.run_id = *f.run_id;
  if (f.tau) cfg.tau = *f.tau;
  if (f.clusters) cfg.clusters = *f.clusters;
  if (f.k_range) cfg.k_sweep = parse_k_range(*f.k_range);
  if (f.seed) cfg.seed = *f.seed;
  if (f.theta) cfg.theta = *f.theta;
  if (f.jobs) cfg.jobs = *f.jobs;
  if (f.crop_features) cfg.crop_features = fs::path(*f.crop_features);
  if (f.num_classes) cfg.num_classes = *f.num_classes;
  if (f.merge_table) cfg.merge_table = fs::path(*f.merge_table);
  if (f.weighted_edges) cfg.weighted_edges = true;
  if (f.l2_normalize) cfg.l2_normalize = true;
  if (f.keep_unlabeled) cfg.drop_unlabeled = false;
  if (f.svg) cfg.svg = true;
  if (cfg.manifest.empty()) throw ConfigError("a manifest is required (--manifest or config file)");
  if (!fs::exists(cfg.manifest)) throw ConfigError("manifest not found: " + cfg.manifest.string());
  return cfg;
}

fs::path stage_dir(const Flags& f, const RunConfig& cfg) { return f.run ? fs::path(*f.run) : cfg.run_dir(); }

// For stages that read the segment outputs, the run directory may be a
// sweep stage; segments live two levels up in that case.
fs::path segment_root(const fs::path& stage) {
  if (fs::exists(stage / "crops.json")) return stage;
  const fs::path up = stage.parent_path().parent_path();
  if (fs::exists(up / "crops.json")) return up;
  throw DataError("no segment outputs (crops.json) found for " + stage.string());
}

void print_report(const EvalReport& r) {
  std::cout << "mIoU " << r.miou << "  PAcc " << r.pixel_accuracy << "  mean F1 " << r.mean_f1 << "  (K=" << r.num_clusters
            << ", C=" << r.num_classes << ", ignored " << r.confusion.ignored_pixels << " px)\n";
}

int run(int argc, char** argv) {
  CLI::App app{"patchseg: pseudo-annotated segmentation masks from self-supervised patch features"};
  app.require_subcommand(1);
  Flags f;

  auto* segment = app.add_subcommand("segment", "affinity graph, Louvain communities and spatial segments per image");
  add_run_options(segment, f);
  add_segment_options(segment, f);

  auto* label = app.add_subcommand("label", "cluster crop features with k-means and write pseudo masks");
  add_run_options(label, f);
  add_label_options(label, f);

  auto* mask = app.add_subcommand("mask", "re-synthesize pseudo masks from labels.json");
  add_run_options(mask, f);

  auto* eval = app.add_subcommand("eval", "Hungarian-matched evaluation against ground truth");
  add_run_options(eval, f);
  add_eval_options(eval, f);

  auto* pipeline = app.add_subcommand("pipeline", "segment + label + eval");
  add_run_options(pipeline, f);
  add_segment_options(pipeline, f);
  add_label_options(pipeline, f);
  add_eval_options(pipeline, f);

  auto* sweep = app.add_subcommand("sweep", "segment once, then label + eval for a range of K");
  add_run_options(sweep, f);
  add_segment_options(sweep, f);
  add_label_options(sweep, f);
  add_eval_options(sweep, f);
  sweep->add_option("--ks", f.k_range, "K values: 'lo..hi' or comma list")->required();

  auto* export_denoise = app.add_subcommand("export-denoise", "write an image/pseudo-mask training manifest");
  add_run_options(export_denoise, f);
  export_denoise->add_option("--theta", f.theta, "drop masks whose dominant class covers >= theta (default 0.95)");

  std::string features_path;
  std::string crops_path;
  int query = 0;
  int neighbors = 5;
  auto* retrieve = app.add_subcommand("retrieve", "k nearest neighbours of one crop feature row");
  retrieve->add_option("--features", features_path, "DTF1 feature file")->required();
  retrieve->add_option("--query", query, "query row")->required();
  retrieve->add_option("-k,--neighbors", neighbors, "number of neighbours");
  retrieve->add_option("--crops", crops_path, "crops.json to annotate rows with image/segment ids");

  SyntheticSpec synth_spec;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "generate a synthetic blob dataset with features and ground truth");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--images", synth_spec.images, "image count");
  synth->add_option("--classes", synth_spec.classes, "class count including background");
  synth->add_option("--seed", synth_spec.seed, "generator seed");
  synth->add_option("--resized-side", synth_spec.resized_side, "T");
  synth->add_option("--patch-side", synth_spec.patch_side, "t");
  synth->add_option("--dim", synth_spec.dim, "feature dimension");
  bool free_blobs = false;
  synth->add_flag("--free-blobs", free_blobs, "place blob edges anywhere instead of on patch boundaries");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  if (*synth) {
    synth_spec.snap_to_patches = !free_blobs;
    const auto manifest = write_synthetic_dataset(synth_spec, synth_out);
    std::cout << "wrote " << manifest.images.size() << " images to " << synth_out << "/manifest.json\n";
    return 0;
  }
  if (*retrieve) {
    const FeatureTensor tensor = read_tensor(features_path);
    const auto hits = retrieve_neighbors(tensor.matrix(), query, neighbors);
    std::vector<CropRecord> crops;
    if (!crops_path.empty()) crops = read_crops_manifest(crops_path);
    for (const auto& [row, distance] : hits) {
      nlohmann::json j = {{"row", row}, {"distance", distance}};
      if (static_cast<std::size_t>(row) < crops.size()) {
        j["image_id"] = crops[row].image_id;
        j["segment_id"] = crops[row].segment_id;
      }
      std::cout << j.dump() << '\n';
    }
    return 0;
  }

  const RunConfig cfg = resolve_config(f);
  if (*segment) {
    const fs::path dir = stage_dir(f, cfg);
    const auto s = run_segment(cfg, dir);
    std::cout << dir.string() << ": " << s.images << " images, " << s.total_segments << " segments, "
              << s.valid_percent() << "% valid\n";
  } else if (*label) {
    const fs::path dir = stage_dir(f, cfg);
    const DatasetManifest manifest = load_run_manifest(cfg, false);
    int k = 0;
    if (cfg.clusters) {
      k = *cfg.clusters;
    } else if (manifest.has_ground_truth() || cfg.num_classes) {
      k = resolve_num_classes(cfg, manifest);
    } else {
      throw ConfigError("K must be given explicitly when no ground truth is supplied");
    }
    const auto s = run_label(cfg, segment_root(dir), k, dir);
    std::cout << dir.string() << ": K=" << s.clusters << " over " << s.crops << " crops, inertia " << s.inertia << '\n';
  } else if (*mask) {
    const fs::path dir = stage_dir(f, cfg);
    run_masks(cfg, segment_root(dir), dir);
    std::cout << "masks written to " << (dir / "masks").string() << '\n';
  } else if (*eval) {
    print_report(run_eval(cfg, stage_dir(f, cfg)));
  } else if (*pipeline) {
    const fs::path dir = run_pipeline(cfg);
    std::cout << "run directory " << dir.string() << '\n';
    if (load_run_manifest(cfg, false).has_ground_truth()) print_report(run_eval(cfg, dir));
  } else if (*sweep) {
    const fs::path dir = run_sweep(cfg);
    std::ifstream summary(dir / "sweep_summary.csv");
    std::cout << summary.rdbuf();
  } else if (*export_denoise) {
    const fs::path dir = stage_dir(f, cfg);
    const auto s = run_export_denoise(cfg, dir);
    std::cout << "kept " << s.kept << ", dropped " << s.dropped << " -> " << (dir / "denoise_manifest.json").string()
              << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::out_of_range& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  }
}
