#pragma once

// One expert: a mean-aggregator message-passing encoder with mean readout,
// a projection head for the contrastive views, a classifier head, the class
// anchor bank and the gating prototype.

#include "tailgraph/graph.hpp"
#include "tailgraph/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace tailgraph::nn {

// Disjoint union of a list of graphs, ready for batched message passing.
struct GraphBatch {
  Matrix x;                      // stacked node attributes
  std::vector<Index> src, dst;   // each undirected edge appears in both directions
  std::vector<Index> node_graph; // graph index of every node
  Index num_graphs = 0;

  static GraphBatch build(std::span<const data::Graph* const> graphs);
  static GraphBatch build(std::span<const data::Graph> graphs);
};

struct ExpertShape {
  Index input_dim = 0;
  Index hidden = 64;
  Index z_dim = 64;
  int layers = 2;
  Index classes = 2;
  // Anchors are dotted with the projected view instead of the raw embedding.
  bool anchors_use_projection = false;

  Index anchor_dim() const { return anchors_use_projection ? z_dim : hidden; }
};

struct SageLayer {
  ad::Parameter w_self;   // [in x hidden]
  ad::Parameter w_neigh;  // [in x hidden]
  ad::Parameter bias;     // [1 x hidden]
};

struct Mlp {
  ad::Parameter w1, b1, w2, b2;
};

struct ExpertParams {
  ExpertShape shape;
  std::vector<SageLayer> encoder;
  Mlp projector;             // hidden -> hidden -> z_dim
  Mlp classifier;            // hidden -> hidden -> classes
  ad::Parameter anchors;     // [classes x anchor_dim]
  ad::Parameter prototype;   // [1 x classes]

  static ExpertParams init(const ExpertShape& shape, std::uint64_t seed);
  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;
};

// Parameters of one expert bound to a tape for a single step.
struct ExpertVars {
  const ExpertShape* shape = nullptr;
  struct Layer {
    ad::Var w_self, w_neigh, bias;
  };
  std::vector<Layer> encoder;
  ad::Var proj_w1, proj_b1, proj_w2, proj_b2;
  ad::Var cls_w1, cls_b1, cls_w2, cls_b2;
  ad::Var anchors, prototype;
};

ExpertVars bind(ad::Tape& tape, ExpertParams& params);
// Binds the parameters as constants: no gradient reaches them.
ExpertVars bind_frozen(ad::Tape& tape, const ExpertParams& params);

// Graph-level embeddings [num_graphs x hidden].
ad::Var encode(const ExpertVars& expert, ad::Tape& tape, const GraphBatch& batch);
// Row-normalized projections [B x z_dim].
ad::Var project(const ExpertVars& expert, const ad::Var& h);
// Logits [B x classes].
ad::Var classify(const ExpertVars& expert, const ad::Var& h);

// Value-only forward passes for a single graph.
Vector encode_graph(const ExpertParams& params, const data::Graph& g);
Vector classify_graph(const ExpertParams& params, const data::Graph& g);

using ExpertBank = std::vector<ExpertParams>;

ExpertBank make_bank(int experts, const ExpertShape& shape, std::uint64_t seed);

// Logits of every expert for every graph: result[k] is [num_graphs x classes].
std::vector<Matrix> bank_logits(const ExpertBank& bank, std::span<const data::Graph> graphs, std::size_t chunk = 256);

// Checkpoint file: JSON with a "meta" object and an "arrays" object mapping
// "expert<k>.<name>" to {"shape": [rows, cols], "data": [row-major values]}.
// Doubles are written in shortest round-trip form, so save/load is bit-exact.
void save_checkpoint(const std::filesystem::path& file, const ExpertBank& bank, const std::string& meta_json);
ExpertBank load_checkpoint(const std::filesystem::path& file, std::string* meta_json = nullptr);

}  // namespace tailgraph::nn
