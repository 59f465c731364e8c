#pragma once

#include "tailgraph/graph.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace tailgraph::augment {

enum class Kind { AttributeMasking, NodeDropping, EdgePerturbation, Subgraph };

std::string to_string(Kind kind);
Kind parse_kind(const std::string& name);  // "mask", "drop", "perturb", "subgraph"

struct AugmentSpec {
  Kind kind = Kind::AttributeMasking;
  double ratio = 0.2;  // for Subgraph: fraction of nodes retained
  std::uint64_t seed = 0;
};

struct AugmentReport {
  data::Graph graph;
  std::size_t edges_added = 0;
  std::size_t edges_removed = 0;
  std::size_t nodes_removed = 0;
  std::size_t entries_masked = 0;
};

AugmentReport apply_with_report(const data::Graph& g, const AugmentSpec& spec);
data::Graph apply(const data::Graph& g, const AugmentSpec& spec);

// The two augmentation kinds used for an expert's pair of views.
using ViewPair = std::array<Kind, 2>;

// (mask, drop), (drop, perturb), (perturb, subgraph), (subgraph, mask), ... cycled over experts.
std::vector<ViewPair> default_view_pairs(int experts);

// Seed for view `view` of sample `sample` in `epoch` for `expert`.
std::uint64_t view_seed(std::uint64_t base, std::uint64_t epoch, std::uint64_t sample, std::uint64_t view,
                        std::uint64_t expert);

}  // namespace tailgraph::augment
