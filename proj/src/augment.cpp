#include "tailgraph/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace tailgraph::augment {
namespace {

using data::Edge;
using data::Graph;

std::size_t round_count(double x) { return static_cast<std::size_t>(std::llround(x)); }

// First k entries of a uniform random permutation of [0, n).
std::vector<std::size_t> choose(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, n);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

Graph induced(const Graph& g, const std::vector<bool>& keep) {
  std::vector<Index> remap(static_cast<std::size_t>(g.num_nodes), -1);
  Index next = 0;
  for (Index v = 0; v < g.num_nodes; ++v)
    if (keep[static_cast<std::size_t>(v)]) remap[static_cast<std::size_t>(v)] = next++;
  Graph out;
  out.label = g.label;
  out.num_nodes = next;
  out.x.resize(next, g.x.cols());
  for (Index v = 0; v < g.num_nodes; ++v)
    if (remap[static_cast<std::size_t>(v)] >= 0) out.x.row(remap[static_cast<std::size_t>(v)]) = g.x.row(v);
  for (const auto& [u, v] : g.edges) {
    const Index a = remap[static_cast<std::size_t>(u)], b = remap[static_cast<std::size_t>(v)];
    if (a >= 0 && b >= 0) out.edges.emplace_back(a, b);
  }
  return out;
}

AugmentReport mask_attributes(const Graph& g, double ratio, std::mt19937_64& rng) {
  AugmentReport r{g};
  const auto total = static_cast<std::size_t>(g.x.size());
  const auto picks = choose(total, round_count(ratio * static_cast<double>(total)), rng);
  for (std::size_t i : picks) r.graph.x.data()[i] = 0.0;
  r.entries_masked = picks.size();
  return r;
}

AugmentReport drop_nodes(const Graph& g, double ratio, std::mt19937_64& rng) {
  const auto n = static_cast<std::size_t>(g.num_nodes);
  const std::size_t k = std::min(round_count(ratio * static_cast<double>(n)), n - 1);
  std::vector<bool> keep(n, true);
  for (std::size_t v : choose(n, k, rng)) keep[v] = false;
  AugmentReport r{induced(g, keep)};
  r.nodes_removed = k;
  r.edges_removed = g.edges.size() - r.graph.edges.size();
  return r;
}

AugmentReport perturb_edges(const Graph& g, double ratio, std::mt19937_64& rng) {
  AugmentReport r{g};
  const std::size_t count = round_count(ratio * static_cast<double>(g.edges.size()) / 2.0);
  if (count == 0) return r;
  std::vector<Edge> non_edges;
  const std::set<Edge> present(g.edges.begin(), g.edges.end());
  for (Index u = 0; u < g.num_nodes; ++u)
    for (Index v = u + 1; v < g.num_nodes; ++v)
      if (!present.count({u, v})) non_edges.emplace_back(u, v);

  const auto removed = choose(g.edges.size(), count, rng);
  std::vector<bool> drop(g.edges.size(), false);
  for (std::size_t i : removed) drop[i] = true;
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < g.edges.size(); ++i)
    if (!drop[i]) edges.push_back(g.edges[i]);
  const auto added = choose(non_edges.size(), count, rng);
  for (std::size_t i : added) edges.push_back(non_edges[i]);
  r.graph.edges = std::move(edges);
  data::normalize_edges(r.graph);
  r.edges_removed = removed.size();
  r.edges_added = added.size();
  return r;
}

AugmentReport random_walk_subgraph(const Graph& g, double ratio, std::mt19937_64& rng) {
  const auto n = static_cast<std::size_t>(g.num_nodes);
  const std::size_t target = std::clamp<std::size_t>(round_count(ratio * static_cast<double>(n)), 1, n);
  const auto adj = g.adjacency();
  std::uniform_int_distribution<std::size_t> any(0, n - 1);
  std::vector<bool> seen(n, false);
  std::size_t current = any(rng);
  seen[current] = true;
  std::size_t collected = 1, stalled = 0;
  while (collected < target) {
    const auto& nbrs = adj[current];
    if (nbrs.empty() || stalled > 4 * n) {
      // Dead end or exhausted component: restart at an unvisited node.
      std::vector<std::size_t> unseen;
      for (std::size_t v = 0; v < n; ++v)
        if (!seen[v]) unseen.push_back(v);
      std::uniform_int_distribution<std::size_t> pick(0, unseen.size() - 1);
      current = unseen[pick(rng)];
      stalled = 0;
    } else {
      std::uniform_int_distribution<std::size_t> step(0, nbrs.size() - 1);
      current = static_cast<std::size_t>(nbrs[step(rng)]);
      ++stalled;
    }
    if (!seen[current]) {
      seen[current] = true;
      ++collected;
      stalled = 0;
    }
  }
  AugmentReport r{induced(g, seen)};
  r.nodes_removed = n - target;
  r.edges_removed = g.edges.size() - r.graph.edges.size();
  return r;
}

}  // namespace

std::string to_string(Kind kind) {
  switch (kind) {
    case Kind::AttributeMasking: return "mask";
    case Kind::NodeDropping: return "drop";
    case Kind::EdgePerturbation: return "perturb";
    case Kind::Subgraph: return "subgraph";
  }
  return "?";
}

Kind parse_kind(const std::string& name) {
  if (name == "mask" || name == "attribute-masking") return Kind::AttributeMasking;
  if (name == "drop" || name == "node-dropping") return Kind::NodeDropping;
  if (name == "perturb" || name == "edge-perturbation") return Kind::EdgePerturbation;
  if (name == "subgraph") return Kind::Subgraph;
  throw std::invalid_argument("unknown augmentation kind '" + name + "'");
}

AugmentReport apply_with_report(const Graph& g, const AugmentSpec& spec) {
  if (!(spec.ratio >= 0.0 && spec.ratio <= 1.0))
    throw std::invalid_argument("augment: ratio " + std::to_string(spec.ratio) + " outside [0, 1]");
  std::mt19937_64 rng(spec.seed);
  switch (spec.kind) {
    case Kind::AttributeMasking: return mask_attributes(g, spec.ratio, rng);
    case Kind::NodeDropping:
      if (g.num_nodes < 2) return AugmentReport{g};
      return drop_nodes(g, spec.ratio, rng);
    case Kind::EdgePerturbation: return perturb_edges(g, spec.ratio, rng);
    case Kind::Subgraph:
      if (g.num_nodes < 2) return AugmentReport{g};
      return random_walk_subgraph(g, spec.ratio, rng);
  }
  throw std::logic_error("augment: unhandled kind");
}

data::Graph apply(const Graph& g, const AugmentSpec& spec) { return apply_with_report(g, spec).graph; }

std::vector<ViewPair> default_view_pairs(int experts) {
  static constexpr std::array<Kind, 4> order{Kind::AttributeMasking, Kind::NodeDropping, Kind::EdgePerturbation,
                                             Kind::Subgraph};
  std::vector<ViewPair> pairs;
  for (int k = 0; k < experts; ++k) pairs.push_back({order[static_cast<std::size_t>(k % 4)], order[static_cast<std::size_t>((k + 1) % 4)]});
  return pairs;
}

std::uint64_t view_seed(std::uint64_t base, std::uint64_t epoch, std::uint64_t sample, std::uint64_t view,
                        std::uint64_t expert) {
  return hash_seed(base, epoch, sample, view, expert);
}

}  // namespace tailgraph::augment
