#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include "doctest.h"
#include "json.hpp"
#include "patchseg/error.hpp"
#include "patchseg/tensorio.hpp"
#include "scratch.hpp"

using namespace patchseg;

namespace {

FeatureTensor random_tensor(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> ndim_dist(1, 4);
  std::uniform_int_distribution<int> dim_dist(1, 7);
  std::uniform_real_distribution<float> value(-1e6f, 1e6f);
  FeatureTensor t;
  const int ndim = ndim_dist(rng);
  std::size_t n = 1;
  for (int d = 0; d < ndim; ++d) {
    t.shape.push_back(static_cast<std::uint64_t>(dim_dist(rng)));
    n *= t.shape.back();
  }
  for (std::size_t i = 0; i < n; ++i) t.data.push_back(value(rng));
  return t;
}

ImageEntry entry(const std::string& id, int T, int t) {
  ImageEntry e;
  e.image_id = id;
  e.source_path = "images/" + id + ".png";
  e.height = 300;
  e.width = 400;
  e.resized_side = T;
  e.patch_side = t;
  e.grid_rows = T / t;
  e.grid_cols = T / t;
  e.feature_path = "features/" + id + ".dtf";
  return e;
}

}  // namespace

TEST_CASE("single zero element encodes to the exact byte sequence") {
  FeatureTensor t{{1, 1}, {0.0f}};
  const std::vector<std::uint8_t> expected = {'D', 'T', 'F', '1', 0x01, 0x02,  //
                                              1,   0,   0,   0,   0,    0,    0, 0,  //
                                              1,   0,   0,   0,   0,    0,    0, 0,  //
                                              0,   0,   0,   0};
  CHECK(encode_tensor(t) == expected);
  CHECK(expected.size() == 26);

  ScratchDir dir("dtf-bytes");
  write_tensor(t, dir / "one.dtf");
  CHECK(slurp(dir / "one.dtf") == expected);
}

TEST_CASE("payload is little-endian binary32") {
  FeatureTensor t{{1}, {1.0f}};
  const auto bytes = encode_tensor(t);
  REQUIRE(bytes.size() == 4 + 2 + 8 + 4);
  // 1.0f = 0x3F800000
  CHECK(bytes[14] == 0x00);
  CHECK(bytes[15] == 0x00);
  CHECK(bytes[16] == 0x80);
  CHECK(bytes[17] == 0x3F);
}

TEST_CASE("write then read is bitwise identical for random tensors") {
  ScratchDir dir("dtf-roundtrip");
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    FeatureTensor t = random_tensor(rng);
    write_tensor(t, dir / "t.dtf");
    const FeatureTensor back = read_tensor(dir / "t.dtf");
    REQUIRE(back.shape == t.shape);
    REQUIRE(back.data.size() == t.data.size());
    CHECK(std::memcmp(back.data.data(), t.data.data(), t.data.size() * sizeof(float)) == 0);
    CHECK(read_tensor_shape(dir / "t.dtf") == t.shape);
    CHECK(decode_tensor(encode_tensor(t)) == t);
  }
}

TEST_CASE("2 x 3 tensor reads back with its shape and matrix view") {
  ScratchDir dir("dtf-2x3");
  FeatureTensor t{{2, 3}, {1, 2, 3, 4, 5, 6}};
  write_tensor(t, dir / "m.dtf");
  const FeatureTensor back = read_tensor(dir / "m.dtf");
  CHECK(back.shape == std::vector<std::uint64_t>{2, 3});
  CHECK(back.matrix()(1, 0) == 4.0f);
  CHECK(back.matrix()(0, 2) == 3.0f);
}

TEST_CASE("non-finite values are rejected with their index") {
  FeatureTensor t{{3}, {0.0f, std::numeric_limits<float>::quiet_NaN(), 1.0f}};
  CHECK_THROWS_WITH_AS(encode_tensor(t), doctest::Contains("non-finite value at index 1"), DataError);
  t.data[1] = std::numeric_limits<float>::infinity();
  ScratchDir dir("dtf-nan");
  CHECK_THROWS_WITH_AS(write_tensor(t, dir / "x.dtf"), doctest::Contains("non-finite value at index 1"), DataError);

  // A NaN smuggled into a file is caught on load as well.
  FeatureTensor ok{{3}, {0.0f, 2.0f, 1.0f}};
  auto bytes = encode_tensor(ok);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bytes.data() + 14 + 4, &nan, 4);
  CHECK_THROWS_WITH_AS(decode_tensor(bytes), doctest::Contains("non-finite value at index 1"), DataError);
}

TEST_CASE("malformed files") {
  FeatureTensor t{{10}, std::vector<float>(10, 1.0f)};
  auto bytes = encode_tensor(t);

  SUBCASE("bad magic") {
    std::memcpy(bytes.data(), "XXXX", 4);
    CHECK_THROWS_WITH_AS(decode_tensor(bytes), doctest::Contains("bad magic"), DataError);
  }
  SUBCASE("declared 10 elements, 9 present") {
    bytes.resize(bytes.size() - 4);
    CHECK_THROWS_WITH_AS(decode_tensor(bytes), doctest::Contains("truncated"), DataError);
  }
  SUBCASE("header cut short") {
    bytes.resize(9);
    CHECK_THROWS_WITH_AS(decode_tensor(bytes), doctest::Contains("truncated"), DataError);
  }
  SUBCASE("unknown dtype") {
    bytes[4] = 7;
    CHECK_THROWS_WITH_AS(decode_tensor(bytes), doctest::Contains("dtype"), DataError);
  }
  SUBCASE("trailing garbage") {
    bytes.push_back(0);
    CHECK_THROWS_AS(decode_tensor(bytes), DataError);
  }
  SUBCASE("zero dimension") {
    FeatureTensor empty{{0, 3}, {}};
    CHECK_THROWS_AS(validate_tensor(empty), DataError);
  }
  SUBCASE("shape and data disagree") {
    FeatureTensor bad{{2, 2}, {1, 2, 3}};
    CHECK_THROWS_AS(validate_tensor(bad), DataError);
  }
}

TEST_CASE("manifest with T = 224, t = 8 has a 28 x 28 grid of 784 patches") {
  ScratchDir dir("manifest-224");
  DatasetManifest m;
  m.images.push_back(entry("a", 224, 8));
  CHECK(m.images[0].patch_count() == 784);
  std::filesystem::create_directories(dir / "features");
  write_tensor(FeatureTensor::from_matrix(RowMatrixXf::Ones(784, 4)), dir / "features/a.dtf");
  save_manifest(m, dir / "manifest.json");
  const DatasetManifest back = load_manifest(dir / "manifest.json");
  CHECK(back.images[0].grid() == GridShape{28, 28});
}

TEST_CASE("manifest errors") {
  ScratchDir dir("manifest-err");
  DatasetManifest m;

  SUBCASE("T not divisible by t") {
    m.images.push_back(entry("a", 225, 8));
    m.images[0].grid_rows = m.images[0].grid_cols = 28;
    CHECK_THROWS_WITH_AS(validate_manifest(m, false), doctest::Contains("T not divisible by t"), DataError);
  }
  SUBCASE("duplicate ids") {
    m.images.push_back(entry("a", 224, 8));
    m.images.push_back(entry("a", 224, 8));
    CHECK_THROWS_WITH_AS(validate_manifest(m, false), doctest::Contains("duplicate image_id"), DataError);
  }
  SUBCASE("feature rows disagree with the grid") {
    m.images.push_back(entry("a", 224, 8));
    m.base_dir = dir.path();
    std::filesystem::create_directories(dir / "features");
    write_tensor(FeatureTensor::from_matrix(RowMatrixXf::Ones(783, 4)), dir / "features/a.dtf");
    CHECK_THROWS_AS(validate_manifest(m, true), DataError);
  }
  SUBCASE("missing feature file") {
    m.images.push_back(entry("a", 224, 8));
    m.base_dir = dir.path();
    CHECK_THROWS_AS(validate_manifest(m, true), DataError);
  }
}

TEST_CASE("manifest roundtrip, derived grid keys and ignored unknown keys") {
  ScratchDir dir("manifest-rt");
  DatasetManifest m;
  m.images.push_back(entry("a", 224, 8));
  m.images.push_back(entry("b", 64, 16));
  m.images[1].gt_path = "gt/b.png";
  m.label_merge = {{0, 0}, {1, 1}, {2, 0}, {9, -1}};
  save_manifest(m, dir / "manifest.json");
  const DatasetManifest back = load_manifest(dir / "manifest.json", false);
  CHECK(back == m);
  CHECK(back.has_ground_truth() == false);  // only one of two images has GT
  CHECK(back.resolve("x/y.dtf") == dir.path() / "x/y.dtf");

  nlohmann::json doc = {{"images",
                         {{{"image_id", "c"},
                           {"source_path", "c.png"},
                           {"height", 10},
                           {"width", 20},
                           {"resized_side", 32},
                           {"patch_side", 8},
                           {"feature_path", "c.dtf"},
                           {"future_key", true}}}},
                        {"another_future_key", 1}};
  std::ofstream(dir / "short.json") << doc.dump();
  const DatasetManifest short_form = load_manifest(dir / "short.json", false);
  CHECK(short_form.images[0].grid() == GridShape{4, 4});
}

TEST_CASE("label merge tables") {
  ScratchDir dir("merge");
  std::ofstream(dir / "bare.json") << R"({"0": 0, "2": 0, "7": 1})";
  std::ofstream(dir / "wrapped.json") << R"({"label_merge": {"5": -1}})";
  std::ofstream(dir / "bad.json") << R"({"x": 1})";
  CHECK(load_label_merge(dir / "bare.json") == std::map<int, int>{{0, 0}, {2, 0}, {7, 1}});
  CHECK(load_label_merge(dir / "wrapped.json") == std::map<int, int>{{5, -1}});
  CHECK_THROWS_AS(load_label_merge(dir / "bad.json"), DataError);
}
