#include "tailgraph/graph.hpp"

#include <algorithm>
#include <array>
#include <random>
#include <set>

namespace tailgraph::data {
namespace {

Graph motif_graph(int label, const MotifSpec& spec, std::mt19937_64& rng) {
  const Index bg = spec.background_nodes;
  const Index cycle = label + 3;
  Graph g;
  g.label = label;
  g.num_nodes = bg + cycle * spec.motif_copies;

  // Background: random recursive tree plus a few chords.
  for (Index v = 1; v < bg; ++v) {
    std::uniform_int_distribution<Index> parent(0, v - 1);
    g.edges.emplace_back(parent(rng), v);
  }
  std::uniform_int_distribution<Index> any_bg(0, bg - 1);
  for (Index k = 0; k < bg / 4; ++k) g.edges.emplace_back(any_bg(rng), any_bg(rng));

  Index next = bg;
  for (int c = 0; c < spec.motif_copies; ++c) {
    for (Index i = 0; i < cycle; ++i) g.edges.emplace_back(next + i, next + (i + 1) % cycle);
    g.edges.emplace_back(next, any_bg(rng));
    next += cycle;
  }
  normalize_edges(g);

  const auto rewire = static_cast<Index>(std::lround(spec.noise * static_cast<double>(g.edges.size())));
  if (rewire > 0) {
    std::set<Edge> present(g.edges.begin(), g.edges.end());
    std::uniform_int_distribution<Index> node(0, g.num_nodes - 1);
    for (Index r = 0; r < rewire && !present.empty(); ++r) {
      std::uniform_int_distribution<std::size_t> which(0, present.size() - 1);
      auto it = present.begin();
      std::advance(it, static_cast<long>(which(rng)));
      present.erase(it);
      for (int attempt = 0; attempt < 64; ++attempt) {
        Index u = node(rng), v = node(rng);
        if (u == v) continue;
        if (u > v) std::swap(u, v);
        if (present.insert({u, v}).second) break;
      }
    }
    g.edges.assign(present.begin(), present.end());
  }

  g.x = degree_one_hot(g.num_nodes, g.edges, spec.max_degree);
  if (spec.jitter > 0) {
    std::normal_distribution<double> noise(0.0, spec.jitter);
    for (Index i = 0; i < g.x.size(); ++i) g.x.data()[i] += noise(rng);
  }
  return g;
}

const std::array<LongTailPreset, 3> kPresets{{
    {"motif-3", 3, 30, 10.0},
    {"motif-5", 5, 40, 20.0},
    {"motif-10", 10, 100, 25.0},
}};

}  // namespace

std::vector<Graph> generate_motif_corpus(const MotifSpec& spec) {
  if (spec.num_classes < 2) throw std::invalid_argument("generate_motif_corpus: need at least two classes");
  if (spec.per_class < 1) throw std::invalid_argument("generate_motif_corpus: per_class must be >= 1");
  if (spec.noise < 0.0 || spec.noise > 1.0) throw std::invalid_argument("generate_motif_corpus: noise outside [0, 1]");
  if (spec.background_nodes < 1 || spec.motif_copies < 1 || spec.max_degree < 1 || spec.jitter < 0)
    throw std::invalid_argument("generate_motif_corpus: invalid background, copies, max degree or jitter");
  std::vector<Graph> out;
  out.reserve(static_cast<std::size_t>(spec.num_classes * spec.per_class));
  for (int c = 0; c < spec.num_classes; ++c)
    for (int i = 0; i < spec.per_class; ++i) {
      std::mt19937_64 rng(hash_seed(spec.seed, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i)));
      out.push_back(motif_graph(c, spec, rng));
    }
  return out;
}

std::span<const LongTailPreset> motif_presets() { return kPresets; }

}  // namespace tailgraph::data
