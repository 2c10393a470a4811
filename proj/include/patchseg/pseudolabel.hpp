#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "patchseg/graphseg.hpp"
#include "patchseg/types.hpp"

namespace patchseg {

// Half-open pixel rectangle in resized-image coordinates.
struct BBox {
  int y0 = 0;
  int x0 = 0;
  int y1 = 0;
  int x1 = 0;

  friend bool operator==(const BBox&, const BBox&) = default;
};

struct CropRecord {
  std::string image_id;
  int segment_id = 0;
  BBox bbox;
  LabelImage patch_mask;  // 1 where the patch belongs to the segment, within the bbox
  std::optional<int> feature_row;

  friend bool operator==(const CropRecord& a, const CropRecord& b) {
    return a.image_id == b.image_id && a.segment_id == b.segment_id && a.bbox == b.bbox &&
           a.patch_mask.rows() == b.patch_mask.rows() && a.patch_mask.cols() == b.patch_mask.cols() &&
           (a.patch_mask == b.patch_mask).all() && a.feature_row == b.feature_row;
  }
};

// One record per valid segment, in segment order.
std::vector<CropRecord> make_crop_specs(const SegmentSet& segments, int patch_side);

// Pixel value written over patches outside the segment by the crop extractor.
inline constexpr int kCropFillValue = 0;

void write_crops_manifest(const std::vector<CropRecord>& crops, int patch_side, const std::filesystem::path& path);
std::vector<CropRecord> read_crops_manifest(const std::filesystem::path& path);

// Uniform doubles in [0, 1) from a 64-bit Mersenne Twister; bit-identical on
// every conforming standard library, unlike std::uniform_real_distribution.
class SeededUniform {
 public:
  explicit SeededUniform(std::uint64_t seed) : engine_(seed) {}
  double next() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  std::uint64_t next_index(std::uint64_t n) { return static_cast<std::uint64_t>(next() * static_cast<double>(n)); }

 private:
  std::mt19937_64 engine_;
};

template <typename Scalar>
struct ClusterModel {
  int k = 0;
  RowMatrix<Scalar> centroids;
  std::vector<int> assignment;
  Scalar inertia = 0;
  int iterations = 0;
  bool converged = false;
  std::vector<Scalar> inertia_trace;  // inertia after each assignment step
};

inline constexpr int kKmeansMaxIterations = 300;

namespace detail {

template <typename Scalar, typename A, typename B>
Scalar squared_distance(const A& a, const B& b) {
  Scalar s = 0;
  for (Eigen::Index j = 0; j < a.size(); ++j) {
    const Scalar d = a(j) - b(j);
    s += d * d;
  }
  return s;
}

// Nearest centroid for every row (ties to the lowest id); returns inertia.
template <typename Scalar>
Scalar assign_nearest(const RowMatrix<Scalar>& x, const RowMatrix<Scalar>& centroids, std::vector<int>& assignment) {
  Scalar inertia = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    int best = 0;
    Scalar best_d = squared_distance<Scalar>(x.row(i), centroids.row(0));
    for (Eigen::Index c = 1; c < centroids.rows(); ++c) {
      const Scalar d = squared_distance<Scalar>(x.row(i), centroids.row(c));
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    assignment[i] = best;
    inertia += best_d;
  }
  return inertia;
}

template <typename Scalar>
RowMatrix<Scalar> kmeanspp_init(const RowMatrix<Scalar>& x, int k, std::uint64_t seed) {
  const Eigen::Index m = x.rows();
  SeededUniform rng(seed);
  RowMatrix<Scalar> centroids(k, x.cols());
  std::vector<char> chosen(m, 0);
  auto first = static_cast<Eigen::Index>(rng.next_index(static_cast<std::uint64_t>(m)));
  centroids.row(0) = x.row(first);
  chosen[first] = 1;
  std::vector<Scalar> d2(m);
  for (Eigen::Index i = 0; i < m; ++i) d2[i] = squared_distance<Scalar>(x.row(i), centroids.row(0));
  for (int c = 1; c < k; ++c) {
    Scalar total = 0;
    for (Eigen::Index i = 0; i < m; ++i) total += d2[i];
    Eigen::Index pick = -1;
    if (total > 0) {
      const Scalar r = static_cast<Scalar>(rng.next()) * total;
      Scalar acc = 0;
      for (Eigen::Index i = 0; i < m; ++i) {
        acc += d2[i];
        if (d2[i] > 0 && acc > r) {
          pick = i;
          break;
        }
      }
      if (pick < 0) {  // r landed in the rounding slack at the end
        for (Eigen::Index i = m - 1; i >= 0; --i) {
          if (d2[i] > 0) {
            pick = i;
            break;
          }
        }
      }
    } else {
      // Every remaining point coincides with a centroid.
      for (Eigen::Index i = 0; i < m; ++i) {
        if (!chosen[i]) {
          pick = i;
          break;
        }
      }
    }
    centroids.row(c) = x.row(pick);
    chosen[pick] = 1;
    for (Eigen::Index i = 0; i < m; ++i) {
      d2[i] = std::min(d2[i], squared_distance<Scalar>(x.row(i), centroids.row(c)));
    }
  }
  return centroids;
}

}  // namespace detail

// Lloyd's algorithm from a seeded k-means++ start. Stops when assignments
// repeat or after max_iterations. An empty cluster takes over the point that
// lies farthest from its own centroid.
template <typename Scalar = double, typename Derived>
ClusterModel<Scalar> kmeans(const Eigen::MatrixBase<Derived>& features, int k, std::uint64_t seed,
                            int max_iterations = kKmeansMaxIterations) {
  if (k < 1) throw std::invalid_argument("kmeans: K must be at least 1");
  if (features.rows() < k) {
    throw std::invalid_argument("kmeans: fewer points (" + std::to_string(features.rows()) + ") than clusters (" +
                                std::to_string(k) + ")");
  }
  const RowMatrix<Scalar> x = features.template cast<Scalar>();
  const Eigen::Index m = x.rows();

  ClusterModel<Scalar> model;
  model.k = k;
  model.centroids = detail::kmeanspp_init(x, k, seed);
  model.assignment.assign(m, -1);

  std::vector<int> next(m, 0);
  std::vector<Eigen::Index> counts(k);
  for (int iter = 1; iter <= max_iterations; ++iter) {
    const Scalar inertia = detail::assign_nearest(x, model.centroids, next);
    model.inertia_trace.push_back(inertia);
    model.inertia = inertia;
    model.iterations = iter;
    if (next == model.assignment) {
      model.converged = true;
      break;
    }
    model.assignment = next;

    RowMatrix<Scalar> sums = RowMatrix<Scalar>::Zero(k, x.cols());
    std::fill(counts.begin(), counts.end(), 0);
    for (Eigen::Index i = 0; i < m; ++i) {
      sums.row(model.assignment[i]) += x.row(i);
      ++counts[model.assignment[i]];
    }
    std::vector<char> donated(m, 0);
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) model.centroids.row(c) = sums.row(c) / static_cast<Scalar>(counts[c]);
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      Eigen::Index far = -1;
      Scalar far_d = 0;
      for (Eigen::Index i = 0; i < m; ++i) {
        if (donated[i]) continue;
        const Scalar d = detail::squared_distance<Scalar>(x.row(i), model.centroids.row(model.assignment[i]));
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      if (far >= 0) {
        model.centroids.row(c) = x.row(far);
        donated[far] = 1;
      }
    }
  }
  return model;
}

// Copies `segments` with valid segments labeled by their crop's cluster id and
// noisy segments set to kUnlabeled. Crops are matched on (image_id, segment_id).
SegmentSet assign_segment_labels(const SegmentSet& segments, const std::vector<CropRecord>& crops,
                                 const std::vector<int>& cluster_of_row);

template <typename Scalar>
SegmentSet assign_segment_labels(const SegmentSet& segments, const std::vector<CropRecord>& crops,
                                 const ClusterModel<Scalar>& model) {
  return assign_segment_labels(segments, crops, model.assignment);
}

// k nearest rows to `query_row` (excluding itself) by Euclidean distance,
// ascending, ties broken by lower row index.
template <typename Derived>
std::vector<std::pair<int, double>> retrieve_neighbors(const Eigen::MatrixBase<Derived>& features, int query_row,
                                                       int k) {
  const auto m = static_cast<int>(features.rows());
  if (query_row < 0 || query_row >= m) throw std::out_of_range("retrieve_neighbors: query row out of range");
  if (k < 1 || k > m - 1) throw std::out_of_range("retrieve_neighbors: k out of range");
  const RowMatrixXd x = features.template cast<double>();
  std::vector<std::pair<double, int>> dist;
  dist.reserve(m - 1);
  for (int i = 0; i < m; ++i) {
    if (i == query_row) continue;
    dist.emplace_back(std::sqrt(detail::squared_distance<double>(x.row(i), x.row(query_row))), i);
  }
  std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
  std::vector<std::pair<int, double>> out;
  out.reserve(k);
  for (int i = 0; i < k; ++i) out.emplace_back(dist[i].second, dist[i].first);
  return out;
}

// Rows scaled to unit Euclidean norm; zero rows are left as they are.
RowMatrixXd l2_normalize_rows(const Eigen::Ref<const RowMatrixXd>& x);

}  // namespace patchseg
