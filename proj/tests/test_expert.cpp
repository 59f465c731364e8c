#include "tailgraph/expert.hpp"
#include "tailgraph/gradcheck.hpp"

#include <doctest.h>

#include <filesystem>
#include <numeric>
#include <random>

using namespace tailgraph;
using namespace tailgraph::nn;
using data::Graph;
using ad::Tape;
using ad::Var;

namespace {

Graph path_graph(Index n, Index dim, std::uint64_t seed) {
  Graph g;
  g.num_nodes = n;
  for (Index v = 1; v < n; ++v) g.edges.emplace_back(v - 1, v);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  g.x = Matrix(n, dim);
  for (Index i = 0; i < g.x.size(); ++i) g.x.data()[i] = nd(rng);
  return g;
}

Graph permuted(const Graph& g, const std::vector<Index>& perm) {
  Graph out = g;
  for (Index v = 0; v < g.num_nodes; ++v) out.x.row(perm[static_cast<std::size_t>(v)]) = g.x.row(v);
  out.edges.clear();
  for (const auto& [u, v] : g.edges) out.edges.emplace_back(perm[static_cast<std::size_t>(u)], perm[static_cast<std::size_t>(v)]);
  data::normalize_edges(out);
  return out;
}

ExpertShape small_shape(Index in, Index classes) {
  ExpertShape s;
  s.input_dim = in;
  s.hidden = 8;
  s.z_dim = 6;
  s.layers = 2;
  s.classes = classes;
  return s;
}

}  // namespace

TEST_CASE("isolated node: readout equals the self path alone") {
  ExpertShape s = small_shape(3, 2);
  s.layers = 1;
  ExpertParams p = ExpertParams::init(s, 1);
  p.encoder[0].bias.value.setRandom();
  Graph g;
  g.num_nodes = 1;
  g.x = Matrix(1, 3);
  g.x << 0.5, -1.0, 2.0;
  const Vector h = encode_graph(p, g);
  const Vector expected = (g.x * p.encoder[0].w_self.value + p.encoder[0].bias.value).cwiseMax(0.0).transpose();
  CHECK((h - expected).norm() < 1e-14);
}

TEST_CASE("hand-computed one-layer forward on a 2-node path") {
  ExpertShape s = small_shape(2, 2);
  s.hidden = 2;
  s.layers = 1;
  ExpertParams p = ExpertParams::init(s, 0);
  p.encoder[0].w_self.value = Matrix::Identity(2, 2);
  p.encoder[0].w_neigh.value = Matrix::Identity(2, 2);
  p.encoder[0].bias.value.setZero();
  Graph g;
  g.num_nodes = 2;
  g.edges = {{0, 1}};
  g.x = Matrix(2, 2);
  g.x << 1, 2, 3, 5;
  // Reference: h_v = relu(x_v + mean of neighbours); readout = mean over nodes.
  Matrix ref(2, 2);
  for (Index v = 0; v < 2; ++v) ref.row(v) = (g.x.row(v) + g.x.row(1 - v)).cwiseMax(0.0);
  const Vector expected = ref.colwise().mean().transpose();
  CHECK((encode_graph(p, g) - expected).norm() < 1e-14);
}

TEST_CASE("node permutation leaves embeddings unchanged") {
  const ExpertParams p = ExpertParams::init(small_shape(4, 3), 3);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    Graph g = path_graph(7, 4, static_cast<std::uint64_t>(trial));
    g.edges.emplace_back(0, 6);
    g.edges.emplace_back(2, 5);
    data::normalize_edges(g);
    std::vector<Index> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    CHECK((encode_graph(p, g) - encode_graph(p, permuted(g, perm))).norm() < 1e-10);
  }
}

TEST_CASE("attribute width mismatch is an error") {
  const ExpertParams p = ExpertParams::init(small_shape(4, 3), 3);
  CHECK_THROWS_AS(encode_graph(p, path_graph(3, 5, 0)), ShapeError);
}

TEST_CASE("zero embedding through a zero-bias projector normalizes to zero and is counted") {
  ExpertParams p = ExpertParams::init(small_shape(3, 2), 2);
  p.projector.b1.value.setZero();
  p.projector.b2.value.setZero();
  Tape tape;
  const ExpertVars v = bind(tape, p);
  const Var z = project(v, tape.constant(Matrix::Zero(2, 8)));
  CHECK(z.value().norm() == 0.0);
  CHECK(tape.zero_norm_rows() == 2);
}

TEST_CASE("classifier width equals M and projections are unit norm") {
  for (Index m : {2, 5, 100}) {
    const ExpertParams p = ExpertParams::init(small_shape(3, m), 5);
    CHECK(classify_graph(p, path_graph(4, 3, 1)).size() == m);
    CHECK(p.anchors.value.rows() == m);
    CHECK(p.prototype.value.cols() == m);
  }
  ExpertParams p = ExpertParams::init(small_shape(3, 4), 6);
  Tape tape;
  const ExpertVars v = bind(tape, p);
  const std::vector<Graph> gs{path_graph(4, 3, 1), path_graph(6, 3, 2)};
  const Var h = encode(v, tape, GraphBatch::build(std::span<const Graph>(gs)));
  const Var z1 = project(v, h);
  const Var z2 = project(v, h);
  CHECK(z1.value() == z2.value());
  for (Index i = 0; i < 2; ++i) CHECK(z1.value().row(i).norm() == doctest::Approx(1.0));
}

TEST_CASE("encoder gradient on a 5-node graph matches finite differences") {
  ExpertShape s = small_shape(3, 3);
  ExpertParams p = ExpertParams::init(s, 8);
  for (auto* q : p.parameters()) q->value.array() += 0.05;
  Graph g = path_graph(5, 3, 9);
  g.edges.emplace_back(0, 4);
  const std::vector<Graph> gs{g};
  const GraphBatch batch = GraphBatch::build(std::span<const Graph>(gs));
  std::vector<Matrix> inputs;
  for (const auto* q : p.parameters()) inputs.push_back(q->value);
  const auto cmp = gradcheck::compare(
      [&](Tape& t, std::span<const Var> v) {
        ExpertVars ev;
        ev.shape = &p.shape;
        std::size_t at = 0;
        for (int l = 0; l < s.layers; ++l, at += 3) ev.encoder.push_back({v[at], v[at + 1], v[at + 2]});
        ev.proj_w1 = v[at++];
        ev.proj_b1 = v[at++];
        ev.proj_w2 = v[at++];
        ev.proj_b2 = v[at++];
        ev.cls_w1 = v[at++];
        ev.cls_b1 = v[at++];
        ev.cls_w2 = v[at++];
        ev.cls_b2 = v[at++];
        ev.anchors = v[at++];
        ev.prototype = v[at++];
        const Var h = encode(ev, t, batch);
        return ad::add(ad::sum(ad::mul(classify(ev, h), t.constant(Matrix::Constant(1, 3, 0.7)))),
                       ad::sum(ad::matmul(ev.anchors, ad::transpose(h))));
      },
      inputs);
  CHECK(cmp.rel_error < 1e-4);
}

TEST_CASE("experts are independent") {
  const ExpertShape s = small_shape(3, 4);
  ExpertBank bank = make_bank(3, s, 11);
  const std::vector<Graph> gs{path_graph(5, 3, 1), path_graph(3, 3, 2)};
  const auto before = bank_logits(bank, gs);
  CHECK_FALSE(before[0] == before[1]);
  for (auto* q : bank[0].parameters()) q->value.array() += 0.3;
  const auto after = bank_logits(bank, gs);
  CHECK_FALSE(after[0] == before[0]);
  CHECK(after[1] == before[1]);
  CHECK(after[2] == before[2]);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  ExpertShape s = small_shape(3, 4);
  s.anchors_use_projection = true;
  ExpertBank bank = make_bank(2, s, 12);
  for (auto& e : bank)
    for (auto* q : e.parameters()) q->value.array() *= 1.0 / 3.0;
  const auto file = std::filesystem::temp_directory_path() / "tailgraph_test_ckpt.json";
  save_checkpoint(file, bank, R"({"note": "x"})");
  std::string meta;
  const ExpertBank back = load_checkpoint(file, &meta);
  REQUIRE(back.size() == 2);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(back[k].shape.anchors_use_projection);
    const auto a = bank[k].parameters();
    const auto b = back[k].parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i]->value == b[i]->value);
  }
  CHECK(meta.find("note") != std::string::npos);
  const std::vector<Graph> gs{path_graph(5, 3, 1)};
  CHECK(bank_logits(bank, gs)[1] == bank_logits(back, gs)[1]);
  CHECK_THROWS_AS(load_checkpoint(file.string() + ".missing"), DataError);
}
