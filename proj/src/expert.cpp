#include "tailgraph/expert.hpp"

#include <cmath>
#include <random>

namespace tailgraph::nn {
namespace {

using ad::Parameter;
using ad::Tape;
using ad::Var;

Matrix glorot(Index fan_in, Index fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Matrix w(fan_in, fan_out);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
  return w;
}

Matrix gaussian(Index rows, Index cols, double sd, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

Mlp make_mlp(const std::string& name, Index in, Index hidden, Index out, std::mt19937_64& rng) {
  Mlp m;
  m.w1 = Parameter(name + ".w1", glorot(in, hidden, rng));
  m.b1 = Parameter(name + ".b1", Matrix::Zero(1, hidden));
  m.w2 = Parameter(name + ".w2", glorot(hidden, out, rng));
  m.b2 = Parameter(name + ".b2", Matrix::Zero(1, out));
  return m;
}

template <typename Params, typename Bind>
ExpertVars bind_with(Params& p, Bind&& b) {
  ExpertVars v;
  v.shape = &p.shape;
  for (auto& layer : p.encoder) v.encoder.push_back({b(layer.w_self), b(layer.w_neigh), b(layer.bias)});
  v.proj_w1 = b(p.projector.w1);
  v.proj_b1 = b(p.projector.b1);
  v.proj_w2 = b(p.projector.w2);
  v.proj_b2 = b(p.projector.b2);
  v.cls_w1 = b(p.classifier.w1);
  v.cls_b1 = b(p.classifier.b1);
  v.cls_w2 = b(p.classifier.w2);
  v.cls_b2 = b(p.classifier.b2);
  v.anchors = b(p.anchors);
  v.prototype = b(p.prototype);
  return v;
}

Var mlp_forward(const Var& x, const Var& w1, const Var& b1, const Var& w2, const Var& b2) {
  return ad::add_rowvec(ad::matmul(ad::relu(ad::add_rowvec(ad::matmul(x, w1), b1)), w2), b2);
}

}  // namespace

GraphBatch GraphBatch::build(std::span<const data::Graph* const> graphs) {
  GraphBatch b;
  b.num_graphs = static_cast<Index>(graphs.size());
  Index total = 0, dim = -1;
  std::size_t edges = 0;
  for (const data::Graph* g : graphs) {
    if (dim >= 0 && g->x.cols() != dim) throw ShapeError("GraphBatch", "graphs disagree on attribute width");
    dim = g->x.cols();
    total += g->num_nodes;
    edges += g->edges.size();
  }
  b.x.resize(total, std::max<Index>(dim, 0));
  b.node_graph.reserve(static_cast<std::size_t>(total));
  b.src.reserve(2 * edges);
  b.dst.reserve(2 * edges);
  Index offset = 0;
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const data::Graph& g = *graphs[gi];
    b.x.middleRows(offset, g.num_nodes) = g.x;
    for (Index v = 0; v < g.num_nodes; ++v) b.node_graph.push_back(static_cast<Index>(gi));
    for (const auto& [u, v] : g.edges) {
      b.src.push_back(offset + u);
      b.dst.push_back(offset + v);
      b.src.push_back(offset + v);
      b.dst.push_back(offset + u);
    }
    offset += g.num_nodes;
  }
  return b;
}

GraphBatch GraphBatch::build(std::span<const data::Graph> graphs) {
  std::vector<const data::Graph*> ptrs;
  ptrs.reserve(graphs.size());
  for (const auto& g : graphs) ptrs.push_back(&g);
  return build(ptrs);
}

ExpertParams ExpertParams::init(const ExpertShape& shape, std::uint64_t seed) {
  if (shape.input_dim < 1 || shape.hidden < 1 || shape.z_dim < 1 || shape.layers < 1 || shape.classes < 2)
    throw std::invalid_argument("ExpertParams::init: invalid shape");
  std::mt19937_64 rng(seed);
  ExpertParams p;
  p.shape = shape;
  Index in = shape.input_dim;
  for (int l = 0; l < shape.layers; ++l) {
    const std::string name = "encoder." + std::to_string(l);
    p.encoder.push_back({Parameter(name + ".w_self", glorot(in, shape.hidden, rng)),
                         Parameter(name + ".w_neigh", glorot(in, shape.hidden, rng)),
                         Parameter(name + ".bias", Matrix::Zero(1, shape.hidden))});
    in = shape.hidden;
  }
  p.projector = make_mlp("projector", shape.hidden, shape.hidden, shape.z_dim, rng);
  p.classifier = make_mlp("classifier", shape.hidden, shape.hidden, shape.classes, rng);
  p.anchors = Parameter("anchors", gaussian(shape.classes, shape.anchor_dim(), 0.1, rng));
  p.prototype = Parameter("prototype", gaussian(1, shape.classes, 1.0, rng));
  return p;
}

std::vector<Parameter*> ExpertParams::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : encoder) out.insert(out.end(), {&l.w_self, &l.w_neigh, &l.bias});
  for (Mlp* m : {&projector, &classifier}) out.insert(out.end(), {&m->w1, &m->b1, &m->w2, &m->b2});
  out.push_back(&anchors);
  out.push_back(&prototype);
  return out;
}

std::vector<const Parameter*> ExpertParams::parameters() const {
  auto mut = const_cast<ExpertParams*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

ExpertVars bind(Tape& tape, ExpertParams& params) {
  return bind_with(params, [&](Parameter& p) { return tape.parameter(p); });
}

ExpertVars bind_frozen(Tape& tape, const ExpertParams& params) {
  return bind_with(params, [&](const Parameter& p) { return tape.constant(p.value); });
}

Var encode(const ExpertVars& expert, Tape& tape, const GraphBatch& batch) {
  if (batch.x.cols() != expert.shape->input_dim)
    throw ShapeError("encode", "attribute width " + std::to_string(batch.x.cols()) + " != encoder input width " +
                                   std::to_string(expert.shape->input_dim));
  Var h = tape.constant(batch.x);
  const Index nodes = batch.x.rows();
  for (const auto& layer : expert.encoder) {
    const Var neigh = ad::scatter_mean(ad::gather_rows(h, batch.src), batch.dst, nodes);
    const Var mixed = ad::add(ad::matmul(h, layer.w_self), ad::matmul(neigh, layer.w_neigh));
    h = ad::relu(ad::add_rowvec(mixed, layer.bias));
  }
  return ad::scatter_mean(h, batch.node_graph, batch.num_graphs);
}

Var project(const ExpertVars& e, const Var& h) {
  return ad::l2_normalize_rows(mlp_forward(h, e.proj_w1, e.proj_b1, e.proj_w2, e.proj_b2));
}

Var classify(const ExpertVars& e, const Var& h) { return mlp_forward(h, e.cls_w1, e.cls_b1, e.cls_w2, e.cls_b2); }

Vector encode_graph(const ExpertParams& params, const data::Graph& g) {
  Tape tape(false);
  const ExpertVars v = bind_frozen(tape, params);
  const data::Graph* one[] = {&g};
  return encode(v, tape, GraphBatch::build(std::span<const data::Graph* const>(one))).value().row(0).transpose();
}

Vector classify_graph(const ExpertParams& params, const data::Graph& g) {
  Tape tape(false);
  const ExpertVars v = bind_frozen(tape, params);
  const data::Graph* one[] = {&g};
  const Var h = encode(v, tape, GraphBatch::build(std::span<const data::Graph* const>(one)));
  return classify(v, h).value().row(0).transpose();
}

ExpertBank make_bank(int experts, const ExpertShape& shape, std::uint64_t seed) {
  if (experts < 1) throw std::invalid_argument("make_bank: need at least one expert");
  ExpertBank bank;
  for (int k = 0; k < experts; ++k) bank.push_back(ExpertParams::init(shape, hash_seed(seed, 0xe4ULL, static_cast<std::uint64_t>(k))));
  return bank;
}

std::vector<Matrix> bank_logits(const ExpertBank& bank, std::span<const data::Graph> graphs, std::size_t chunk) {
  std::vector<Matrix> out;
  for (const auto& expert : bank) {
    Matrix logits(static_cast<Index>(graphs.size()), expert.shape.classes);
    for (std::size_t start = 0; start < graphs.size(); start += chunk) {
      const std::size_t n = std::min(chunk, graphs.size() - start);
      Tape tape(false);
      const ExpertVars v = bind_frozen(tape, expert);
      const GraphBatch batch = GraphBatch::build(graphs.subspan(start, n));
      logits.middleRows(static_cast<Index>(start), static_cast<Index>(n)) = classify(v, encode(v, tape, batch)).value();
    }
    out.push_back(std::move(logits));
  }
  return out;
}

}  // namespace tailgraph::nn
