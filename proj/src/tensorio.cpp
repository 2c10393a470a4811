#include "patchseg/tensorio.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>

#include "json.hpp"
#include "patchseg/error.hpp"

namespace patchseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'D', 'T', 'F', '1'};
constexpr std::size_t kPrefixBytes = 6;  // magic + dtype + ndim

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
  const auto v = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

float get_f32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(v);
}

// Product of dims, or nullopt on overflow.
std::optional<std::uint64_t> element_count(const std::vector<std::uint64_t>& shape) {
  std::uint64_t n = 1;
  for (auto d : shape) {
    if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d) return std::nullopt;
    n *= d;
  }
  return n;
}

void check_finite(const std::vector<float>& data) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw DataError("non-finite value at index " + std::to_string(i));
    }
  }
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::uint64_t> decode_header(const std::uint8_t* bytes, std::size_t size,
                                         std::size_t& header_size) {
  if (size < 4 || !std::equal(kMagic, kMagic + 4, bytes)) throw DataError("bad magic");
  if (size < kPrefixBytes) throw DataError("truncated header");
  if (bytes[4] != kDtypeF32) {
    throw DataError("unsupported dtype code " + std::to_string(bytes[4]));
  }
  const std::size_t ndim = bytes[5];
  header_size = kPrefixBytes + 8 * ndim;
  if (size < header_size) throw DataError("truncated header");
  std::vector<std::uint64_t> shape(ndim);
  for (std::size_t i = 0; i < ndim; ++i) shape[i] = get_u64(bytes + kPrefixBytes + 8 * i);
  return shape;
}

}  // namespace

std::size_t FeatureTensor::cols() const {
  if (shape.size() < 2) return shape.empty() ? 0 : 1;
  std::size_t n = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) n *= shape[i];
  return n;
}

void validate_tensor(const FeatureTensor& tensor) {
  if (tensor.shape.empty()) throw DataError("tensor has no dimensions");
  if (tensor.shape.size() > 255) throw DataError("tensor has more than 255 dimensions");
  for (auto d : tensor.shape) {
    if (d == 0) throw DataError("tensor has a zero-sized dimension");
  }
  const auto n = element_count(tensor.shape);
  if (!n || *n != tensor.data.size()) {
    throw DataError("shape does not match data length " + std::to_string(tensor.data.size()));
  }
  check_finite(tensor.data);
}

std::vector<std::uint8_t> encode_tensor(const FeatureTensor& tensor) {
  validate_tensor(tensor);
  std::vector<std::uint8_t> out;
  out.reserve(kPrefixBytes + 8 * tensor.shape.size() + 4 * tensor.data.size());
  out.insert(out.end(), kMagic, kMagic + 4);
  out.push_back(kDtypeF32);
  out.push_back(static_cast<std::uint8_t>(tensor.shape.size()));
  for (auto d : tensor.shape) put_u64(out, d);
  for (float f : tensor.data) put_f32(out, f);
  return out;
}

FeatureTensor decode_tensor(const std::vector<std::uint8_t>& bytes) {
  std::size_t header_size = 0;
  FeatureTensor t;
  t.shape = decode_header(bytes.data(), bytes.size(), header_size);
  if (t.shape.empty()) throw DataError("tensor has no dimensions");
  const auto n = element_count(t.shape);
  if (!n || *n > (std::numeric_limits<std::size_t>::max() - header_size) / 4) {
    throw DataError("declared element count overflows");
  }
  const std::size_t expected = header_size + 4 * *n;
  if (bytes.size() < expected) {
    throw DataError("truncated payload: declared " + std::to_string(*n) + " elements, found " +
                    std::to_string((bytes.size() - header_size) / 4));
  }
  if (bytes.size() > expected) throw DataError("trailing bytes after payload");
  t.data.resize(*n);
  for (std::size_t i = 0; i < *n; ++i) t.data[i] = get_f32(bytes.data() + header_size + 4 * i);
  validate_tensor(t);
  return t;
}

void write_tensor(const FeatureTensor& tensor, const fs::path& path) {
  const auto bytes = encode_tensor(tensor);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

FeatureTensor read_tensor(const fs::path& path) {
  try {
    return decode_tensor(read_bytes(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint64_t> read_tensor_shape(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> head(kPrefixBytes + 8 * 255);
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  std::size_t header_size = 0;
  try {
    return decode_header(head.data(), static_cast<std::size_t>(in.gcount()), header_size);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Manifest

fs::path DatasetManifest::resolve(const std::string& p) const {
  const fs::path path(p);
  return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
}

bool DatasetManifest::has_ground_truth() const {
  return !images.empty() &&
         std::all_of(images.begin(), images.end(), [](const auto& e) { return e.gt_path.has_value(); });
}

void validate_manifest(const DatasetManifest& manifest, bool check_features) {
  std::set<std::string> ids;
  for (const auto& e : manifest.images) {
    const std::string where = "image '" + e.image_id + "': ";
    if (e.image_id.empty()) throw DataError("manifest: empty image_id");
    if (!ids.insert(e.image_id).second) throw DataError("manifest: duplicate image_id '" + e.image_id + "'");
    if (e.height < 1 || e.width < 1) throw DataError(where + "height and width must be positive");
    if (e.resized_side < 1 || e.patch_side < 1) {
      throw DataError(where + "resized_side and patch_side must be positive");
    }
    if (e.resized_side % e.patch_side != 0) throw DataError(where + "T not divisible by t");
    const int side = e.resized_side / e.patch_side;
    if (e.grid_rows != side || e.grid_cols != side) {
      throw DataError(where + "grid " + std::to_string(e.grid_rows) + "x" + std::to_string(e.grid_cols) +
                      " inconsistent with T/t = " + std::to_string(side));
    }
    if (check_features) {
      const auto shape = read_tensor_shape(manifest.resolve(e.feature_path));
      if (shape.empty() || shape.front() != static_cast<std::uint64_t>(e.patch_count())) {
        throw DataError(where + "feature rows " + std::to_string(shape.empty() ? 0 : shape.front()) +
                        " != grid patches " + std::to_string(e.patch_count()));
      }
    }
  }
}

namespace {

template <typename T>
T required(const json& j, const char* key) {
  if (!j.contains(key)) throw DataError(std::string("manifest: missing key '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw DataError(std::string("manifest: wrong type for key '") + key + "'");
  }
}

ImageEntry entry_from_json(const json& j) {
  if (!j.is_object()) throw DataError("manifest: image entry is not an object");
  ImageEntry e;
  e.image_id = required<std::string>(j, "image_id");
  e.source_path = required<std::string>(j, "source_path");
  e.height = required<int>(j, "height");
  e.width = required<int>(j, "width");
  e.resized_side = required<int>(j, "resized_side");
  e.patch_side = required<int>(j, "patch_side");
  e.feature_path = required<std::string>(j, "feature_path");
  // Grid geometry is derivable; accept manifests that omit it.
  const int side = e.patch_side > 0 ? e.resized_side / e.patch_side : 0;
  e.grid_rows = j.contains("grid_rows") ? required<int>(j, "grid_rows") : side;
  e.grid_cols = j.contains("grid_cols") ? required<int>(j, "grid_cols") : side;
  if (j.contains("gt_path") && !j.at("gt_path").is_null()) e.gt_path = required<std::string>(j, "gt_path");
  return e;
}

json entry_to_json(const ImageEntry& e) {
  json j = {{"image_id", e.image_id},         {"source_path", e.source_path},
            {"height", e.height},             {"width", e.width},
            {"resized_side", e.resized_side}, {"patch_side", e.patch_side},
            {"grid_rows", e.grid_rows},       {"grid_cols", e.grid_cols},
            {"feature_path", e.feature_path}};
  if (e.gt_path) j["gt_path"] = *e.gt_path;
  return j;
}

}  // namespace

std::map<int, int> parse_label_merge(const json& merge) {
  if (!merge.is_object()) throw DataError("label_merge must be an object");
  std::map<int, int> out;
  for (const auto& [raw, coarse] : merge.items()) {
    int raw_id = 0;
    try {
      std::size_t used = 0;
      raw_id = std::stoi(raw, &used);
      if (used != raw.size()) throw std::invalid_argument(raw);
    } catch (const std::exception&) {
      throw DataError("label_merge key '" + raw + "' is not an integer");
    }
    if (!coarse.is_number_integer()) throw DataError("label_merge value for '" + raw + "' is not an integer");
    out[raw_id] = coarse.get<int>();
  }
  return out;
}

std::map<int, int> load_label_merge(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open merge table " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (doc.is_object() && doc.contains("label_merge")) return parse_label_merge(doc["label_merge"]);
  return parse_label_merge(doc);
}

DatasetManifest load_manifest(const fs::path& path, bool check_features) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError("manifest: invalid JSON: " + std::string(e.what()));
  }
  if (!doc.is_object() || !doc.contains("images") || !doc["images"].is_array()) {
    throw DataError("manifest: top level must be an object with an 'images' array");
  }
  DatasetManifest m;
  m.base_dir = path.parent_path();
  for (const auto& j : doc["images"]) m.images.push_back(entry_from_json(j));
  if (doc.contains("label_merge")) m.label_merge = parse_label_merge(doc["label_merge"]);
  validate_manifest(m, check_features);
  return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  validate_manifest(manifest, false);
  json doc;
  doc["images"] = json::array();
  for (const auto& e : manifest.images) doc["images"].push_back(entry_to_json(e));
  if (!manifest.label_merge.empty()) {
    json merge = json::object();
    for (const auto& [raw, coarse] : manifest.label_merge) merge[std::to_string(raw)] = coarse;
    doc["label_merge"] = merge;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << doc.dump(2) << '\n';
}

}  // namespace patchseg
