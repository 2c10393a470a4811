#pragma once

// Patch affinity: A = K K^T over key features, and its thresholding into an
// unweighted graph (edge iff a_mn > 0, no self-loops).

#include <stdexcept>
#include <vector>

#include "patchseg/types.hpp"

namespace patchseg {

template <typename Scalar>
using AffinityMatrix = RowMatrix<Scalar>;

struct Edge {
  int u = 0;  // u < v
  int v = 0;
  double weight = 1.0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

struct PatchGraph {
  int n = 0;
  GridShape grid;
  std::vector<Edge> edges;  // sorted by (u, v)

  double total_weight() const {
    double m = 0.0;
    for (const auto& e : edges) m += e.weight;
    return m;
  }
};

// Gram matrix of the feature rows, accumulated in Scalar. The lower triangle
// is copied from the upper one so the result is exactly symmetric.
template <typename Scalar = double, typename Derived>
AffinityMatrix<Scalar> build_affinity(const Eigen::MatrixBase<Derived>& features) {
  if (features.rows() < 1 || features.cols() < 1) {
    throw std::invalid_argument("build_affinity: empty feature tensor");
  }
  const RowMatrix<Scalar> k = features.template cast<Scalar>();
  AffinityMatrix<Scalar> a(k.rows(), k.rows());
  a.noalias() = k * k.transpose();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = a(j, i);
  }
  return a;
}

// Edge {m, n} for every m < n with a(m, n) > 0. With weighted = true the
// affinity value is kept as the edge weight instead of 1.
template <typename Derived>
PatchGraph threshold_adjacency(const Eigen::MatrixBase<Derived>& a, GridShape grid, bool weighted = false) {
  if (a.rows() != a.cols()) throw std::invalid_argument("threshold_adjacency: affinity is not square");
  if (grid.rows < 1 || grid.cols < 1 || grid.size() != a.rows()) {
    throw std::invalid_argument("threshold_adjacency: grid inconsistent with n");
  }
  PatchGraph g;
  g.n = static_cast<int>(a.rows());
  g.grid = grid;
  for (int m = 0; m < g.n; ++m) {
    for (int n = m + 1; n < g.n; ++n) {
      const auto value = a(m, n);
      if (value > 0) g.edges.push_back({m, n, weighted ? static_cast<double>(value) : 1.0});
    }
  }
  return g;
}

}  // namespace patchseg
