#pragma once

#include <cstdint>

#include <Eigen/Dense>

namespace patchseg {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using RowMatrixXf = RowMatrix<float>;
using RowMatrixXd = RowMatrix<double>;

// Per-pixel (or per-patch) label raster.
using LabelImage = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Label value reserved for pixels that carry no pseudo-label.
inline constexpr int kUnlabeled = 255;

// Largest cluster count that leaves room for the sentinel.
inline constexpr int kMaxClusters = 255;

struct GridShape {
  int rows = 0;
  int cols = 0;

  int size() const { return rows * cols; }
  int row_of(int index) const { return index / cols; }
  int col_of(int index) const { return index % cols; }

  friend bool operator==(const GridShape&, const GridShape&) = default;
};

}  // namespace patchseg
