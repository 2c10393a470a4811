#pragma once

#include <array>
#include <filesystem>

#include "patchseg/graphseg.hpp"
#include "patchseg/types.hpp"

namespace patchseg {

// 8-bit label image; kUnlabeled marks pixels without a pseudo-label.
struct PseudoMask {
  LabelImage labels;

  PseudoMask() = default;
  explicit PseudoMask(LabelImage l) : labels(std::move(l)) {}
  PseudoMask(int height, int width, std::uint8_t fill = kUnlabeled) : labels(LabelImage::Constant(height, width, fill)) {}

  int height() const { return static_cast<int>(labels.rows()); }
  int width() const { return static_cast<int>(labels.cols()); }

  friend bool operator==(const PseudoMask& a, const PseudoMask& b) {
    return a.labels.rows() == b.labels.rows() && a.labels.cols() == b.labels.cols() && (a.labels == b.labels).all();
  }
};

// Per-patch labels of a labeled segment set (grid rows x grid cols).
LabelImage patch_labels(const SegmentSet& labeled_segments);

// Block-upsamples the patch labels to a (rows*t) x (cols*t) mask.
PseudoMask synthesize_mask(const SegmentSet& labeled_segments, int patch_side);

// Nearest-neighbour resampling: dst(y, x) = src(floor(y*h/H), floor(x*w/W)).
PseudoMask resize_mask(const PseudoMask& mask, int height, int width);

void write_mask_png(const PseudoMask& mask, const std::filesystem::path& path);
PseudoMask read_mask_png(const std::filesystem::path& path);

// Debug visualization: RGB PNG with a fixed palette, unlabeled pixels black.
void write_color_png(const PseudoMask& mask, const std::filesystem::path& path);

}  // namespace patchseg
