#include <array>
#include <random>

#include <png.h>

#include "doctest.h"
#include "patchseg/error.hpp"
#include "patchseg/maskgen.hpp"
#include "scratch.hpp"

using namespace patchseg;

namespace {

// Segment set whose segment i is the set of patches with label_grid == i.
SegmentSet labeled_grid(const LabelImage& label_grid, const std::vector<bool>& valid) {
  SegmentSet s;
  s.image_id = "img";
  s.grid = {static_cast<int>(label_grid.rows()), static_cast<int>(label_grid.cols())};
  for (std::size_t l = 0; l < valid.size(); ++l) {
    Segment seg;
    seg.id = static_cast<int>(l);
    seg.valid = valid[l];
    seg.label = valid[l] ? static_cast<int>(l) : kUnlabeled;
    for (int i = 0; i < s.grid.size(); ++i) {
      if (label_grid.data()[i] == l) seg.patches.push_back(i);
    }
    if (!seg.patches.empty()) s.segments.push_back(seg);
  }
  return s;
}

LabelImage random_labels(int rows, int cols, int k, std::mt19937_64& rng) {
  LabelImage m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<std::uint8_t>(rng() % k);
  return m;
}

}  // namespace

TEST_CASE("block upsampling of a 2 x 2 grid with t = 2") {
  LabelImage grid(2, 2);
  grid << 0, 1, 1, 1;
  const PseudoMask mask = synthesize_mask(labeled_grid(grid, {true, true}), 2);
  LabelImage expected(4, 4);
  expected << 0, 0, 1, 1,  //
      0, 0, 1, 1,          //
      1, 1, 1, 1,          //
      1, 1, 1, 1;
  CHECK(mask == PseudoMask(expected));
}

TEST_CASE("all noisy segments give an all-unlabeled mask") {
  LabelImage grid(3, 3);
  grid << 0, 0, 1, 0, 1, 1, 2, 2, 2;
  const PseudoMask mask = synthesize_mask(labeled_grid(grid, {false, false, false}), 4);
  CHECK(mask == PseudoMask(12, 12, kUnlabeled));
}

TEST_CASE("one segment labeled 3 over the whole grid gives a constant mask") {
  SegmentSet s;
  s.grid = {2, 3};
  Segment seg;
  seg.patches = {0, 1, 2, 3, 4, 5};
  seg.valid = true;
  seg.label = 3;
  s.segments.push_back(seg);
  CHECK(synthesize_mask(s, 5) == PseudoMask(10, 15, 3));
}

TEST_CASE("every pixel carries its patch label and histograms scale by t squared") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 40; ++trial) {
    const int rows = 1 + static_cast<int>(rng() % 6);
    const int cols = 1 + static_cast<int>(rng() % 6);
    const int t = 1 + static_cast<int>(rng() % 5);
    const LabelImage grid = random_labels(rows, cols, 4, rng);
    const std::vector<bool> valid = {true, (trial % 2) == 0, true, false};
    const SegmentSet s = labeled_grid(grid, valid);
    const LabelImage patch = patch_labels(s);
    const PseudoMask mask = synthesize_mask(s, t);
    REQUIRE(mask.height() == rows * t);
    REQUIRE(mask.width() == cols * t);
    for (int y = 0; y < mask.height(); ++y) {
      for (int x = 0; x < mask.width(); ++x) CHECK(mask.labels(y, x) == patch(y / t, x / t));
    }
    std::array<long, 256> patch_hist{};
    std::array<long, 256> pixel_hist{};
    for (Eigen::Index i = 0; i < patch.size(); ++i) ++patch_hist[patch.data()[i]];
    for (Eigen::Index i = 0; i < mask.labels.size(); ++i) ++pixel_hist[mask.labels.data()[i]];
    for (int v = 0; v < 256; ++v) CHECK(pixel_hist[v] == patch_hist[v] * t * t);
  }
}

TEST_CASE("nearest-neighbour resize") {
  std::mt19937_64 rng(8);
  const PseudoMask small(random_labels(4, 4, 5, rng));

  SUBCASE("doubling duplicates pixels into 2 x 2 blocks") {
    const PseudoMask big = resize_mask(small, 8, 8);
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 8; ++x) CHECK(big.labels(y, x) == small.labels(y / 2, x / 2));
    }
  }
  SUBCASE("same size is the identity") { CHECK(resize_mask(small, 4, 4) == small); }
  SUBCASE("constant stays constant") {
    CHECK(resize_mask(PseudoMask(3, 5, 7), 17, 4) == PseudoMask(17, 4, 7));
  }
  SUBCASE("up by an integer factor then back is the identity") {
    for (int trial = 0; trial < 20; ++trial) {
      const int side = 1 + static_cast<int>(rng() % 10);
      const PseudoMask m(random_labels(side, side, 6, rng));
      const int fy = 1 + static_cast<int>(rng() % 4);
      const int fx = 1 + static_cast<int>(rng() % 4);
      CHECK(resize_mask(resize_mask(m, side * fy, side * fx), side, side) == m);
    }
  }
  SUBCASE("bad sizes") { CHECK_THROWS_AS(resize_mask(small, 0, 3), std::invalid_argument); }
}

TEST_CASE("mask PNG roundtrip") {
  ScratchDir dir("png");
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    const PseudoMask m(random_labels(1 + static_cast<int>(rng() % 40), 1 + static_cast<int>(rng() % 40), 256, rng));
    write_mask_png(m, dir / "m.png");
    CHECK(read_mask_png(dir / "m.png") == m);
  }
  // 254 clusters plus the sentinel fit in one byte.
  LabelImage wide(1, 255);
  for (int i = 0; i < 255; ++i) wide(0, i) = static_cast<std::uint8_t>(i);
  write_mask_png(PseudoMask(wide), dir / "wide.png");
  CHECK(read_mask_png(dir / "wide.png") == PseudoMask(wide));
}

TEST_CASE("RGB PNG is rejected") {
  ScratchDir dir("png-rgb");
  write_color_png(PseudoMask(4, 4, 1), dir / "rgb.png");
  CHECK_THROWS_WITH_AS(read_mask_png(dir / "rgb.png"), doctest::Contains("expected 8-bit grayscale"), DataError);
  CHECK_THROWS_AS(read_mask_png(dir / "missing.png"), DataError);
}
