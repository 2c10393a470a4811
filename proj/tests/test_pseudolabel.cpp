#include <random>
#include <set>

#include "doctest.h"
#include "patchseg/error.hpp"
#include "patchseg/pseudolabel.hpp"
#include "scratch.hpp"

using namespace patchseg;

namespace {

SegmentSet segments_of(GridShape grid, std::vector<std::vector<int>> groups, int tau = 0) {
  SegmentSet s;
  s.image_id = "img";
  s.grid = grid;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    Segment seg;
    seg.id = static_cast<int>(i);
    seg.community = static_cast<int>(i);
    seg.patches = groups[i];
    seg.valid = seg.patch_count() > tau;
    s.segments.push_back(seg);
  }
  return s;
}

LabelImage mask_of(std::initializer_list<std::initializer_list<int>> rows) {
  LabelImage m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  int r = 0;
  for (const auto& row : rows) {
    int c = 0;
    for (int v : row) m(r, c++) = static_cast<std::uint8_t>(v);
    ++r;
  }
  return m;
}

RowMatrixXd random_points(int m, int d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  RowMatrixXd x(m, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
  return x;
}

double inertia_of(const RowMatrixXd& x, const std::vector<int>& assignment, int k) {
  RowMatrixXd sums = RowMatrixXd::Zero(k, x.cols());
  std::vector<int> counts(k, 0);
  for (int i = 0; i < x.rows(); ++i) {
    sums.row(assignment[i]) += x.row(i);
    ++counts[assignment[i]];
  }
  double total = 0.0;
  for (int i = 0; i < x.rows(); ++i) {
    total += (x.row(i) - sums.row(assignment[i]) / counts[assignment[i]]).squaredNorm();
  }
  return total;
}

}  // namespace

TEST_CASE("crop spec of a diagonal pair of patches") {
  const auto crops = make_crop_specs(segments_of({4, 4}, {{0, 5}}), 8);
  REQUIRE(crops.size() == 1);
  CHECK(crops[0].bbox == BBox{0, 0, 16, 16});
  CHECK((crops[0].patch_mask == mask_of({{1, 0}, {0, 1}})).all());
  CHECK(crops[0].image_id == "img");
  CHECK(crops[0].segment_id == 0);
}

TEST_CASE("crop spec of a single patch") {
  // Patch (row 2, col 3) on a 4 x 5 grid.
  const auto crops = make_crop_specs(segments_of({4, 5}, {{2 * 5 + 3}}), 4);
  REQUIRE(crops.size() == 1);
  CHECK(crops[0].bbox == BBox{8, 12, 12, 16});
  CHECK((crops[0].patch_mask == mask_of({{1}})).all());
}

TEST_CASE("crop spec of a full 28 x 28 grid") {
  std::vector<int> all(784);
  std::iota(all.begin(), all.end(), 0);
  const auto crops = make_crop_specs(segments_of({28, 28}, {all}), 8);
  REQUIRE(crops.size() == 1);
  CHECK(crops[0].bbox == BBox{0, 0, 224, 224});
  CHECK(crops[0].patch_mask.minCoeff() == 1);
}

TEST_CASE("only valid segments become crops and masks match their patches") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const GridShape grid{6, 7};
    std::vector<std::vector<int>> groups(5);
    for (int i = 0; i < grid.size(); ++i) groups[rng() % 5].push_back(i);
    std::erase_if(groups, [](const auto& g) { return g.empty(); });
    const SegmentSet s = segments_of(grid, groups, 8);
    const auto crops = make_crop_specs(s, 8);
    CHECK(static_cast<int>(crops.size()) == s.valid_count());
    for (const auto& crop : crops) {
      const Segment& seg = s.segments[crop.segment_id];
      CHECK(seg.valid);
      CHECK((crop.bbox.y1 - crop.bbox.y0) % 8 == 0);
      CHECK((crop.bbox.x1 - crop.bbox.x0) % 8 == 0);
      CHECK(crop.patch_mask.rows() == (crop.bbox.y1 - crop.bbox.y0) / 8);
      std::set<int> from_mask;
      for (int r = 0; r < crop.patch_mask.rows(); ++r) {
        for (int c = 0; c < crop.patch_mask.cols(); ++c) {
          if (crop.patch_mask(r, c)) from_mask.insert((crop.bbox.y0 / 8 + r) * grid.cols + crop.bbox.x0 / 8 + c);
        }
      }
      CHECK(from_mask == std::set<int>(seg.patches.begin(), seg.patches.end()));
    }
  }
}

TEST_CASE("crops manifest roundtrip") {
  ScratchDir dir("crops");
  auto crops = make_crop_specs(segments_of({4, 4}, {{0, 1, 4}, {10, 11, 14, 15}}), 8);
  crops[0].feature_row = 0;
  crops[1].feature_row = 1;
  write_crops_manifest(crops, 8, dir / "crops.json");
  CHECK(read_crops_manifest(dir / "crops.json") == crops);
}

TEST_CASE("seeded uniform source is reproducible and in [0, 1)") {
  SeededUniform a(42);
  SeededUniform b(42);
  for (int i = 0; i < 1000; ++i) {
    const double x = a.next();
    CHECK(x == b.next());
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
  }
  // First draw of mt19937_64 seeded with 5489 is 14514284786278117030.
  SeededUniform standard(5489);
  CHECK(standard.next() == static_cast<double>(14514284786278117030ULL >> 11) * 0x1.0p-53);
}

TEST_CASE("k-means separates two distant pairs") {
  RowMatrixXd x(4, 2);
  x << 0, 0, 0, 1, 10, 10, 10, 11;
  const auto model = kmeans(x, 2, 0);
  CHECK(model.converged);
  CHECK(model.assignment[0] == model.assignment[1]);
  CHECK(model.assignment[2] == model.assignment[3]);
  CHECK(model.assignment[0] != model.assignment[2]);
  CHECK(model.inertia == doctest::Approx(1.0));
}

TEST_CASE("k-means with K = 1 puts every point at the mean") {
  std::mt19937_64 rng(1);
  const RowMatrixXd x = random_points(20, 3, rng);
  const auto model = kmeans(x, 1, 9);
  CHECK(std::all_of(model.assignment.begin(), model.assignment.end(), [](int c) { return c == 0; }));
  CHECK(model.centroids.row(0).isApprox(x.colwise().mean(), 1e-12));
}

TEST_CASE("k-means with K = M distinct points has zero inertia") {
  std::mt19937_64 rng(2);
  const RowMatrixXd x = random_points(9, 4, rng);
  const auto model = kmeans(x, 9, 3);
  CHECK(model.inertia == 0.0);
  CHECK(std::set<int>(model.assignment.begin(), model.assignment.end()).size() == 9);
}

TEST_CASE("k-means argument checks") {
  const RowMatrixXd x = RowMatrixXd::Zero(3, 2);
  CHECK_THROWS_AS(kmeans(x, 0, 0), std::invalid_argument);
  CHECK_THROWS_AS(kmeans(x, 4, 0), std::invalid_argument);
  // Coincident points still yield K nonempty clusters.
  const auto model = kmeans(x, 3, 0);
  CHECK(model.inertia == 0.0);
}

TEST_CASE("k-means inertia never increases and the result is a local optimum") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 60; ++trial) {
    const int m = 10 + static_cast<int>(rng() % 30);
    const int k = 1 + static_cast<int>(rng() % 5);
    const RowMatrixXd x = random_points(m, 3, rng);
    const auto model = kmeans(x, k, rng());
    for (std::size_t i = 1; i < model.inertia_trace.size(); ++i) {
      CHECK(model.inertia_trace[i] <= model.inertia_trace[i - 1] * (1 + 1e-12));
    }
    REQUIRE(model.converged);
    // Nearest-centroid assignment, ties to the lowest id.
    for (int i = 0; i < m; ++i) {
      const int a = model.assignment[i];
      for (int c = 0; c < k; ++c) {
        const double dc = (x.row(i) - model.centroids.row(c)).squaredNorm();
        const double da = (x.row(i) - model.centroids.row(a)).squaredNorm();
        CHECK((dc > da || (dc == da && c >= a)));
      }
    }
    // No single-point reassignment against the converged centroids lowers inertia.
    const auto cost = [&](const std::vector<int>& assignment) {
      double total = 0.0;
      for (int i = 0; i < m; ++i) total += (x.row(i) - model.centroids.row(assignment[i])).squaredNorm();
      return total;
    };
    const double base = cost(model.assignment);
    CHECK(base == doctest::Approx(model.inertia).epsilon(1e-12));
    CHECK(inertia_of(x, model.assignment, k) == doctest::Approx(base).epsilon(1e-9));
    for (int i = 0; i < m; ++i) {
      for (int c = 0; c < k; ++c) {
        auto moved = model.assignment;
        moved[i] = c;
        CHECK(cost(moved) >= base);
      }
    }
  }
}

TEST_CASE("k-means is deterministic for a fixed seed") {
  std::mt19937_64 rng(5);
  const RowMatrixXd x = random_points(200, 8, rng);
  const auto a = kmeans(x, 6, 77);
  const auto b = kmeans(x, 6, 77);
  CHECK(a.assignment == b.assignment);
  CHECK(a.centroids == b.centroids);
  CHECK(a.inertia == b.inertia);
  const auto f = kmeans<float>(x.cast<float>(), 6, 77);
  CHECK(f.assignment == kmeans<float>(x.cast<float>(), 6, 77).assignment);
}

TEST_CASE("segment labels follow crop clusters; noisy segments stay unlabeled") {
  const SegmentSet s = segments_of({1, 14}, {{0, 1, 2, 3, 4, 5}, {6, 7}, {8, 9, 10, 11, 12, 13}}, 5);
  auto crops = make_crop_specs(s, 8);
  REQUIRE(crops.size() == 2);
  crops[0].feature_row = 0;
  crops[1].feature_row = 1;
  const SegmentSet labeled = assign_segment_labels(s, crops, std::vector<int>{0, 1});
  CHECK(labeled.segments[0].label == 0);
  CHECK(labeled.segments[1].label == kUnlabeled);
  CHECK(labeled.segments[2].label == 1);

  const SegmentSet swapped = assign_segment_labels(s, crops, std::vector<int>{1, 0});
  CHECK(swapped.segments[0].label == 1);
  CHECK(swapped.segments[2].label == 0);

  const SegmentSet all_noisy = segments_of({1, 4}, {{0, 1}, {2, 3}}, 5);
  const SegmentSet unlabeled = assign_segment_labels(all_noisy, {}, std::vector<int>{});
  for (const auto& seg : unlabeled.segments) CHECK(seg.label == kUnlabeled);

  CHECK_THROWS_AS(assign_segment_labels(s, {crops[0]}, std::vector<int>{0}), DataError);
  CHECK_THROWS_AS(assign_segment_labels(s, crops, std::vector<int>{0, 255}), std::exception);
}

TEST_CASE("neighbour retrieval") {
  RowMatrixXd x(3, 1);
  x << 0, 1, 10;
  const auto one = retrieve_neighbors(x, 1, 1);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == std::pair<int, double>{0, 1.0});

  const auto all = retrieve_neighbors(x, 1, 2);
  CHECK(all == std::vector<std::pair<int, double>>{{0, 1.0}, {2, 9.0}});

  RowMatrixXd dup(4, 2);
  dup << 1, 1, 5, 5, 3, 3, 5, 5;
  const auto hit = retrieve_neighbors(dup, 1, 3);
  CHECK(hit[0] == std::pair<int, double>{3, 0.0});
  CHECK(hit[1].first == 2);
  CHECK(hit[2].first == 0);

  CHECK_THROWS_AS(retrieve_neighbors(x, 1, 3), std::out_of_range);
  CHECK_THROWS_AS(retrieve_neighbors(x, 3, 1), std::out_of_range);
  CHECK_THROWS_AS(retrieve_neighbors(x, 0, 0), std::out_of_range);
}

TEST_CASE("l2 normalization leaves zero rows alone") {
  RowMatrixXd x(2, 2);
  x << 3, 4, 0, 0;
  const RowMatrixXd n = l2_normalize_rows(x);
  CHECK(n(0, 0) == doctest::Approx(0.6));
  CHECK(n(0, 1) == doctest::Approx(0.8));
  CHECK(n.row(1).isZero());
}
