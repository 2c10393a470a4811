#include "patchseg/pseudolabel.hpp"

#include <fstream>
#include <map>

#include "json.hpp"
#include "patchseg/error.hpp"

namespace patchseg {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<CropRecord> make_crop_specs(const SegmentSet& segments, int patch_side) {
  if (patch_side < 1) throw std::invalid_argument("make_crop_specs: patch side must be positive");
  const GridShape grid = segments.grid;
  std::vector<CropRecord> crops;
  for (const auto& seg : segments.segments) {
    if (!seg.valid || seg.patches.empty()) continue;
    int r0 = grid.rows, c0 = grid.cols, r1 = -1, c1 = -1;
    for (int p : seg.patches) {
      r0 = std::min(r0, grid.row_of(p));
      r1 = std::max(r1, grid.row_of(p));
      c0 = std::min(c0, grid.col_of(p));
      c1 = std::max(c1, grid.col_of(p));
    }
    CropRecord rec;
    rec.image_id = segments.image_id;
    rec.segment_id = seg.id;
    rec.bbox = {patch_side * r0, patch_side * c0, patch_side * (r1 + 1), patch_side * (c1 + 1)};
    rec.patch_mask = LabelImage::Zero(r1 - r0 + 1, c1 - c0 + 1);
    for (int p : seg.patches) rec.patch_mask(grid.row_of(p) - r0, grid.col_of(p) - c0) = 1;
    crops.push_back(std::move(rec));
  }
  return crops;
}

void write_crops_manifest(const std::vector<CropRecord>& crops, int patch_side, const fs::path& path) {
  json doc;
  doc["patch_side"] = patch_side;
  doc["fill_value"] = kCropFillValue;
  doc["crops"] = json::array();
  for (const auto& c : crops) {
    json mask = json::array();
    for (Eigen::Index r = 0; r < c.patch_mask.rows(); ++r) {
      json row = json::array();
      for (Eigen::Index col = 0; col < c.patch_mask.cols(); ++col) row.push_back(int{c.patch_mask(r, col)});
      mask.push_back(row);
    }
    json rec = {{"image_id", c.image_id},
                {"segment_id", c.segment_id},
                {"bbox", {c.bbox.y0, c.bbox.x0, c.bbox.y1, c.bbox.x1}},
                {"patch_mask", mask}};
    if (c.feature_row) rec["feature_row"] = *c.feature_row;
    doc["crops"].push_back(rec);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << doc.dump(1) << '\n';
}

std::vector<CropRecord> read_crops_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open crops manifest " + path.string());
  std::vector<CropRecord> crops;
  try {
    const json doc = json::parse(in);
    for (const auto& j : doc.at("crops")) {
      CropRecord rec;
      rec.image_id = j.at("image_id").get<std::string>();
      rec.segment_id = j.at("segment_id").get<int>();
      const auto b = j.at("bbox").get<std::vector<int>>();
      if (b.size() != 4) throw DataError("crops manifest: bbox must have 4 entries");
      rec.bbox = {b[0], b[1], b[2], b[3]};
      const auto& mask = j.at("patch_mask");
      const auto rows = static_cast<Eigen::Index>(mask.size());
      const auto cols = rows > 0 ? static_cast<Eigen::Index>(mask.at(0).size()) : 0;
      rec.patch_mask = LabelImage::Zero(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r) {
        if (static_cast<Eigen::Index>(mask.at(r).size()) != cols) throw DataError("crops manifest: ragged patch_mask");
        for (Eigen::Index c = 0; c < cols; ++c) rec.patch_mask(r, c) = mask.at(r).at(c).get<int>() ? 1 : 0;
      }
      if (j.contains("feature_row")) rec.feature_row = j.at("feature_row").get<int>();
      crops.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw DataError("crops manifest " + path.string() + ": " + e.what());
  }
  return crops;
}

SegmentSet assign_segment_labels(const SegmentSet& segments, const std::vector<CropRecord>& crops,
                                 const std::vector<int>& cluster_of_row) {
  std::map<int, const CropRecord*> by_segment;
  for (const auto& c : crops) {
    if (c.image_id == segments.image_id) by_segment[c.segment_id] = &c;
  }
  SegmentSet out = segments;
  for (auto& seg : out.segments) {
    if (!seg.valid) {
      seg.label = kUnlabeled;
      continue;
    }
    const auto it = by_segment.find(seg.id);
    if (it == by_segment.end() || !it->second->feature_row) {
      throw DataError("missing crop feature for segment " + std::to_string(seg.id) + " of image '" +
                      segments.image_id + "'");
    }
    const int row = *it->second->feature_row;
    if (row < 0 || row >= static_cast<int>(cluster_of_row.size())) {
      throw DataError("crop feature row " + std::to_string(row) + " out of range");
    }
    const int cluster = cluster_of_row[row];
    if (cluster < 0 || cluster >= kMaxClusters) {
      throw DataError("cluster id " + std::to_string(cluster) + " collides with the unlabeled sentinel");
    }
    seg.label = cluster;
  }
  return out;
}

RowMatrixXd l2_normalize_rows(const Eigen::Ref<const RowMatrixXd>& x) {
  RowMatrixXd out = x;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double norm = out.row(i).norm();
    if (norm > 0) out.row(i) /= norm;
  }
  return out;
}

}  // namespace patchseg
