#include "patchseg/graphseg.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <queue>
#include <stdexcept>
#include <utility>

namespace patchseg {

namespace {

void check_partition(const Partition& p, int n, const char* who) {
  if (static_cast<int>(p.community_of.size()) != n) {
    throw std::invalid_argument(std::string(who) + ": partition size does not match node count");
  }
  for (int c : p.community_of) {
    if (c < 0) throw std::invalid_argument(std::string(who) + ": negative community id");
  }
}

std::vector<double> weighted_degrees(const PatchGraph& g) {
  std::vector<double> k(static_cast<std::size_t>(g.n), 0.0);
  for (const auto& e : g.edges) {
    k[e.u] += e.weight;
    k[e.v] += e.weight;
  }
  return k;
}

// One level of the Louvain hierarchy. self_loop[i] holds A_ii, i.e. twice the
// weight of edges folded inside super-node i.
struct Level {
  int n = 0;
  std::vector<std::vector<std::pair<int, double>>> adj;
  std::vector<double> self_loop;
  std::vector<double> degree;
  double two_m = 0.0;
};

Level level_from_graph(const PatchGraph& g) {
  Level lv;
  lv.n = g.n;
  lv.adj.resize(g.n);
  lv.self_loop.assign(g.n, 0.0);
  for (const auto& e : g.edges) {
    if (e.u == e.v) throw std::invalid_argument("louvain: patch graph must not contain self-loops");
    lv.adj[e.u].emplace_back(e.v, e.weight);
    lv.adj[e.v].emplace_back(e.u, e.weight);
  }
  lv.degree.assign(g.n, 0.0);
  for (int i = 0; i < g.n; ++i) {
    std::sort(lv.adj[i].begin(), lv.adj[i].end());
    for (const auto& [j, w] : lv.adj[i]) lv.degree[i] += w;
    lv.two_m += lv.degree[i];
  }
  return lv;
}

// Local moving phase. Returns true if any node changed community.
bool move_nodes(const Level& lv, std::vector<int>& comm, LouvainTrace* trace) {
  const double m = lv.two_m / 2.0;
  std::vector<double> tot(lv.n, 0.0);
  for (int i = 0; i < lv.n; ++i) tot[comm[i]] += lv.degree[i];

  std::vector<double> link(lv.n, 0.0);
  std::vector<char> seen(lv.n, 0);
  std::vector<int> touched;
  bool any_move = false;
  bool moved = true;
  while (moved) {
    moved = false;
    for (int i = 0; i < lv.n; ++i) {
      const double ki = lv.degree[i];
      const int own = comm[i];
      touched.clear();
      for (const auto& [j, w] : lv.adj[i]) {
        const int c = comm[j];
        if (!seen[c]) {
          seen[c] = 1;
          link[c] = 0.0;
          touched.push_back(c);
        }
        link[c] += w;
      }
      tot[own] -= ki;
      const double own_gain = (seen[own] ? link[own] : 0.0) - tot[own] * ki / lv.two_m;
      std::sort(touched.begin(), touched.end());
      int best = own;
      double best_gain = own_gain;
      const double eps = 1e-12 * ki;
      for (int c : touched) {
        if (c == own) continue;
        const double gain = link[c] - tot[c] * ki / lv.two_m;
        if (gain > best_gain + eps) {
          best = c;
          best_gain = gain;
        }
      }
      tot[best] += ki;
      if (best != own) {
        comm[i] = best;
        moved = any_move = true;
        if (trace) trace->move_gains.push_back((best_gain - own_gain) / m);
      }
      for (int c : touched) seen[c] = 0;
    }
  }
  return any_move;
}

// Relabels comm in place to 0..I-1 by first appearance; returns I.
int compact(std::vector<int>& comm) {
  std::vector<int> remap(comm.size(), -1);
  int next = 0;
  for (auto& c : comm) {
    if (remap[c] < 0) remap[c] = next++;
    c = remap[c];
  }
  return next;
}

Level aggregate(const Level& lv, const std::vector<int>& comm, int count) {
  Level out;
  out.n = count;
  out.self_loop.assign(count, 0.0);
  out.degree.assign(count, 0.0);
  std::vector<std::map<int, double>> links(count);
  for (int i = 0; i < lv.n; ++i) {
    const int ci = comm[i];
    out.self_loop[ci] += lv.self_loop[i];
    out.degree[ci] += lv.degree[i];
    for (const auto& [j, w] : lv.adj[i]) {
      const int cj = comm[j];
      if (ci == cj) {
        out.self_loop[ci] += w;
      } else {
        links[ci][cj] += w;
      }
    }
  }
  out.adj.resize(count);
  for (int c = 0; c < count; ++c) out.adj[c].assign(links[c].begin(), links[c].end());
  out.two_m = lv.two_m;
  return out;
}

}  // namespace

int Partition::count() const {
  if (community_of.empty()) return 0;
  return *std::max_element(community_of.begin(), community_of.end()) + 1;
}

Partition canonicalize(const Partition& p) {
  Partition out = p;
  std::map<int, int> remap;
  for (auto& c : out.community_of) {
    auto [it, inserted] = remap.try_emplace(c, static_cast<int>(remap.size()));
    c = it->second;
  }
  return out;
}

double modularity(const PatchGraph& g, const Partition& p) {
  check_partition(p, g.n, "modularity");
  const double m = g.total_weight();
  if (!(m > 0.0)) throw std::domain_error("modularity undefined for m = 0");
  const auto k = weighted_degrees(g);
  std::map<int, double> internal;  // ordered-pair weight inside each community
  std::map<int, double> tot;
  for (const auto& e : g.edges) {
    if (p.community_of[e.u] == p.community_of[e.v]) internal[p.community_of[e.u]] += 2.0 * e.weight;
  }
  for (int i = 0; i < g.n; ++i) tot[p.community_of[i]] += k[i];
  double q = 0.0;
  for (const auto& [c, t] : tot) {
    const auto it = internal.find(c);
    const double in = it == internal.end() ? 0.0 : it->second;
    q += in / (2.0 * m) - (t / (2.0 * m)) * (t / (2.0 * m));
  }
  return q;
}

double modularity_gain(const PatchGraph& g, const Partition& p, int node, int target) {
  check_partition(p, g.n, "modularity_gain");
  if (node < 0 || node >= g.n) throw std::out_of_range("modularity_gain: node out of range");
  const double m = g.total_weight();
  if (!(m > 0.0)) throw std::domain_error("modularity undefined for m = 0");
  const int own = p.community_of[node];
  if (target == own) return 0.0;
  const auto k = weighted_degrees(g);
  double tot_own = 0.0;
  double tot_target = 0.0;
  for (int i = 0; i < g.n; ++i) {
    if (i == node) continue;
    if (p.community_of[i] == own) tot_own += k[i];
    if (p.community_of[i] == target) tot_target += k[i];
  }
  double link_own = 0.0;
  double link_target = 0.0;
  for (const auto& e : g.edges) {
    if (e.u != node && e.v != node) continue;
    const int other = e.u == node ? e.v : e.u;
    if (p.community_of[other] == own) link_own += e.weight;
    if (p.community_of[other] == target) link_target += e.weight;
  }
  const double ki = k[node];
  return ((link_target - tot_target * ki / (2.0 * m)) - (link_own - tot_own * ki / (2.0 * m))) / m;
}

Partition louvain(const PatchGraph& g, LouvainTrace* trace) {
  if (g.n < 1) throw std::invalid_argument("louvain: graph has no nodes");
  Partition result;
  result.community_of.resize(g.n);
  std::iota(result.community_of.begin(), result.community_of.end(), 0);
  if (g.edges.empty()) return result;

  Level level = level_from_graph(g);
  std::vector<int>& node_to_super = result.community_of;
  while (true) {
    std::vector<int> comm(level.n);
    std::iota(comm.begin(), comm.end(), 0);
    if (!move_nodes(level, comm, trace)) break;
    const int count = compact(comm);
    for (auto& s : node_to_super) s = comm[s];
    if (trace) trace->level_modularity.push_back(modularity(g, result));
    level = aggregate(level, comm, count);
  }
  return canonicalize(result);
}

int SegmentSet::valid_count() const {
  return static_cast<int>(std::count_if(segments.begin(), segments.end(), [](const auto& s) { return s.valid; }));
}

std::vector<int> SegmentSet::segment_of_patch() const {
  std::vector<int> out(static_cast<std::size_t>(grid.size()), -1);
  for (std::size_t s = 0; s < segments.size(); ++s) {
    for (int patch : segments[s].patches) out[patch] = static_cast<int>(s);
  }
  return out;
}

SegmentSet split_components(const Partition& p, GridShape grid, int tau) {
  check_partition(p, grid.size(), "split_components");
  std::map<int, std::vector<int>> members;
  for (int i = 0; i < grid.size(); ++i) members[p.community_of[i]].push_back(i);

  SegmentSet out;
  out.grid = grid;
  std::vector<char> visited(static_cast<std::size_t>(grid.size()), 0);
  std::queue<int> frontier;
  for (const auto& [community, nodes] : members) {
    for (int start : nodes) {
      if (visited[start]) continue;
      Segment seg;
      seg.id = static_cast<int>(out.segments.size());
      seg.community = community;
      visited[start] = 1;
      frontier.push(start);
      while (!frontier.empty()) {
        const int cur = frontier.front();
        frontier.pop();
        seg.patches.push_back(cur);
        const int r = grid.row_of(cur);
        const int c = grid.col_of(cur);
        const int neighbors[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
        for (const auto& [nr, nc] : neighbors) {
          if (nr < 0 || nc < 0 || nr >= grid.rows || nc >= grid.cols) continue;
          const int idx = nr * grid.cols + nc;
          if (!visited[idx] && p.community_of[idx] == community) {
            visited[idx] = 1;
            frontier.push(idx);
          }
        }
      }
      std::sort(seg.patches.begin(), seg.patches.end());
      seg.valid = seg.patch_count() > tau;
      out.segments.push_back(std::move(seg));
    }
  }
  return out;
}

}  // namespace patchseg
