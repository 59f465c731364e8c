#pragma once

#include "tailgraph/common.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace tailgraph::data {

using Edge = std::pair<Index, Index>;

// Undirected graph with node attributes and a class label. Edges are stored
// once each with u < v.
struct Graph {
  Index num_nodes = 0;
  std::vector<Edge> edges;
  Matrix x;  // [num_nodes x feature_dim]
  int label = 0;

  Index feature_dim() const { return x.cols(); }
  // Throws DataError if an endpoint is out of range, an edge is a self-loop,
  // or the attribute rows do not match the node count.
  void validate() const;
  std::vector<std::vector<Index>> adjacency() const;
  bool operator==(const Graph& other) const;
};

// Sorts endpoints, drops self-loops and duplicate or reversed edges.
void normalize_edges(Graph& g);

// One-hot degree features with degrees above `max_degree` folded into the last slot.
Matrix degree_one_hot(Index num_nodes, std::span<const Edge> edges, int max_degree);

struct DatasetStats {
  int num_classes = 0;
  std::vector<long> class_sizes;      // N_1 >= N_2 >= ... >= N_M
  std::vector<int> rank_to_label;     // class label holding rank j (ties: lower label first)
  std::vector<long> counts_by_label;  // indexed by class label
  long total = 0;
  double imbalance_factor = 1.0;      // N_1 / N_M

  // Class sizes are non-increasing by rank.
  bool is_monotone() const;
};

// `num_classes` < 0 infers M as max label + 1. Every class needs at least one sample.
DatasetStats compute_stats(std::span<const Graph> graphs, int num_classes = -1);

// ---- TU text format -------------------------------------------------------

struct TuOptions {
  int max_degree = 10;  // cap for the degree one-hot features used when attributes are absent
};

struct TuDataset {
  std::string name;
  std::vector<Graph> graphs;
  DatasetStats stats;
  std::vector<long> original_labels;  // original label of each dense class index
};

TuDataset ingest_tu(const std::filesystem::path& dir, const TuOptions& options = {});
// Writes DS_A, DS_graph_indicator, DS_graph_labels and DS_node_attributes.
void write_tu(const std::filesystem::path& dir, const std::string& name, std::span<const Graph> graphs);

// ---- native JSON-lines corpus ---------------------------------------------
// One object per line: {"n": int, "edges": [[u, v], ...], "x": [[...], ...], "y": int}

void write_jsonl(const std::filesystem::path& file, std::span<const Graph> graphs);
std::vector<Graph> read_jsonl(const std::filesystem::path& file);

// ---- long-tail construction and splits -------------------------------------

struct LongTailSpec {
  double imbalance_factor = 1.0;
  std::optional<long> head_count;  // N_1; defaults to the size of the largest class
  std::uint64_t seed = 0;

  // s = log(IF) / log(M)
  double decay_exponent(int num_classes) const;
};

// N_j = max(round(N_1 * j^-s), 1) for j = 1..M.
std::vector<long> zipf_class_sizes(long head_count, int num_classes, double imbalance_factor);

struct LongTailResult {
  std::vector<Graph> train;
  std::vector<std::size_t> source_index;  // position of each train graph in the input list
  DatasetStats stats;
};

// Subsamples each class without replacement to its Zipf size. Classes are
// ranked by available size, ties broken by lower label.
LongTailResult make_long_tailed(std::span<const Graph> graphs, const LongTailSpec& spec);

struct BalancedSplit {
  std::vector<Graph> val;
  std::vector<Graph> test;
  std::vector<Graph> remainder;
};

BalancedSplit split_balanced(std::span<const Graph> graphs, int per_class_val, int per_class_test, std::uint64_t seed);

// ---- synthetic motif corpus -----------------------------------------------

struct MotifSpec {
  int num_classes = 5;
  int per_class = 60;
  double noise = 0.0;           // fraction of edges rewired
  std::uint64_t seed = 0;
  int background_nodes = 8;
  int motif_copies = 6;         // cycles of length class + 3 attached per graph
  int max_degree = 6;
  double jitter = 0.05;         // std-dev of Gaussian noise added to the degree one-hots
};

// Class j holds `motif_copies` cycles of length j + 3 attached to a random
// tree-like background. Graphs come out grouped by class.
std::vector<Graph> generate_motif_corpus(const MotifSpec& spec);

// Long-tail presets shipped with the motif generator; each keeps the tail class
// at 2 to 4 training samples.
struct LongTailPreset {
  std::string name;
  int num_classes;
  long head_count;
  double imbalance_factor;
};
std::span<const LongTailPreset> motif_presets();

}  // namespace tailgraph::data
