#include "patchseg/maskgen.hpp"

#include <cstring>
#include <stdexcept>
#include <vector>

#include <png.h>

#include "patchseg/error.hpp"

namespace patchseg {

namespace fs = std::filesystem;

LabelImage patch_labels(const SegmentSet& labeled_segments) {
  const GridShape grid = labeled_segments.grid;
  LabelImage out = LabelImage::Constant(grid.rows, grid.cols, kUnlabeled);
  for (const auto& seg : labeled_segments.segments) {
    if (seg.label < 0 || seg.label > kUnlabeled) {
      throw std::invalid_argument("segment label " + std::to_string(seg.label) + " outside 0..255");
    }
    const auto value = static_cast<std::uint8_t>(seg.valid ? seg.label : kUnlabeled);
    for (int p : seg.patches) out(grid.row_of(p), grid.col_of(p)) = value;
  }
  return out;
}

PseudoMask synthesize_mask(const SegmentSet& labeled_segments, int patch_side) {
  if (patch_side < 1) throw std::invalid_argument("synthesize_mask: patch side must be positive");
  const LabelImage patches = patch_labels(labeled_segments);
  LabelImage out(patches.rows() * patch_side, patches.cols() * patch_side);
  for (Eigen::Index r = 0; r < patches.rows(); ++r) {
    for (Eigen::Index c = 0; c < patches.cols(); ++c) {
      out.block(r * patch_side, c * patch_side, patch_side, patch_side).setConstant(patches(r, c));
    }
  }
  return PseudoMask(std::move(out));
}

PseudoMask resize_mask(const PseudoMask& mask, int height, int width) {
  if (height < 1 || width < 1) throw std::invalid_argument("resize_mask: target size must be positive");
  if (mask.height() < 1 || mask.width() < 1) throw std::invalid_argument("resize_mask: empty source mask");
  const auto src_h = static_cast<std::int64_t>(mask.height());
  const auto src_w = static_cast<std::int64_t>(mask.width());
  LabelImage out(height, width);
  for (std::int64_t y = 0; y < height; ++y) {
    const auto sy = static_cast<Eigen::Index>(y * src_h / height);
    for (std::int64_t x = 0; x < width; ++x) {
      out(y, x) = mask.labels(sy, static_cast<Eigen::Index>(x * src_w / width));
    }
  }
  return PseudoMask(std::move(out));
}

namespace {

void write_png(const fs::path& path, int width, int height, png_uint_32 format, const void* buffer) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buffer, 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw DataError("cannot write PNG " + path.string() + ": " + msg);
  }
}

}  // namespace

void write_mask_png(const PseudoMask& mask, const fs::path& path) {
  if (mask.height() < 1 || mask.width() < 1) throw DataError("cannot write an empty mask");
  write_png(path, mask.width(), mask.height(), PNG_FORMAT_GRAY, mask.labels.data());
}

PseudoMask read_mask_png(const fs::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw DataError("cannot read PNG " + path.string() + ": " + msg);
  }
  if (image.format != PNG_FORMAT_GRAY) {
    png_image_free(&image);
    throw DataError(path.string() + ": expected 8-bit grayscale");
  }
  LabelImage labels(image.height, image.width);
  if (!png_image_finish_read(&image, nullptr, labels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw DataError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return PseudoMask(std::move(labels));
}

void write_color_png(const PseudoMask& mask, const fs::path& path) {
  // Fixed 16-entry palette, cycled for larger label values.
  static constexpr std::array<std::array<std::uint8_t, 3>, 16> kPalette = {{
      {230, 25, 75},  {60, 180, 75},   {255, 225, 25}, {0, 130, 200},  {245, 130, 48},  {145, 30, 180},
      {70, 240, 240}, {240, 50, 230},  {210, 245, 60}, {250, 190, 212}, {0, 128, 128},  {220, 190, 255},
      {170, 110, 40}, {255, 250, 200}, {128, 0, 0},    {170, 255, 195},
  }};
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(mask.height()) * mask.width() * 3, 0);
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      const int label = mask.labels(y, x);
      if (label == kUnlabeled) continue;
      const auto& color = kPalette[label % kPalette.size()];
      std::copy(color.begin(), color.end(), rgb.begin() + 3 * (static_cast<std::size_t>(y) * mask.width() + x));
    }
  }
  write_png(path, mask.width(), mask.height(), PNG_FORMAT_RGB, rgb.data());
}

}  // namespace patchseg
