#pragma once

#include <string>
#include <vector>

#include "patchseg/affinity.hpp"
#include "patchseg/types.hpp"

namespace patchseg {

struct Partition {
  std::vector<int> community_of;  // node -> community id, contiguous from 0

  int count() const;
  friend bool operator==(const Partition&, const Partition&) = default;
};

// Renumbers community ids 0..I-1 in order of each community's smallest node.
Partition canonicalize(const Partition& p);

// Newman modularity, with m counting every undirected edge once.
// Throws std::domain_error on an edgeless graph.
double modularity(const PatchGraph& g, const Partition& p);

// Change in modularity when `node` leaves its community and joins `target`,
// computed with the incremental remove/insert formula used by louvain().
double modularity_gain(const PatchGraph& g, const Partition& p, int node, int target);

struct LouvainTrace {
  std::vector<double> level_modularity;  // Q on the input graph after each level
  std::vector<double> move_gains;        // modularity gain of every accepted move
};

// Deterministic Louvain: ascending scan order, lowest-id tie break, resolution 1.
Partition louvain(const PatchGraph& g, LouvainTrace* trace = nullptr);

struct Segment {
  int id = 0;
  int community = 0;
  std::vector<int> patches;  // sorted patch indices
  bool valid = false;
  int label = kUnlabeled;  // cluster id once pseudo-labeled

  int patch_count() const { return static_cast<int>(patches.size()); }
  friend bool operator==(const Segment&, const Segment&) = default;
};

struct SegmentSet {
  std::string image_id;
  GridShape grid;
  std::vector<Segment> segments;

  int valid_count() const;
  // Per-patch segment index.
  std::vector<int> segment_of_patch() const;
  friend bool operator==(const SegmentSet&, const SegmentSet&) = default;
};

inline constexpr int kDefaultTau = 5;

// Splits every community into 4-connected components on the patch grid.
// Segments are ordered by (community, smallest patch); valid = size > tau.
SegmentSet split_components(const Partition& p, GridShape grid, int tau = kDefaultTau);

}  // namespace patchseg
