#include "tailgraph/graph.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>

namespace tailgraph::data {

void Graph::validate() const {
  if (num_nodes < 1) throw DataError("graph has no nodes");
  if (x.rows() != num_nodes)
    throw DataError("attribute rows " + std::to_string(x.rows()) + " != node count " + std::to_string(num_nodes));
  for (const auto& [u, v] : edges) {
    if (u < 0 || v < 0 || u >= num_nodes || v >= num_nodes)
      throw DataError("edge (" + std::to_string(u) + ", " + std::to_string(v) + ") outside node range [0, " +
                      std::to_string(num_nodes) + ")");
    if (u == v) throw DataError("self-loop on node " + std::to_string(u));
  }
  if (label < 0) throw DataError("negative label");
}

std::vector<std::vector<Index>> Graph::adjacency() const {
  std::vector<std::vector<Index>> adj(static_cast<std::size_t>(num_nodes));
  for (const auto& [u, v] : edges) {
    adj[static_cast<std::size_t>(u)].push_back(v);
    adj[static_cast<std::size_t>(v)].push_back(u);
  }
  return adj;
}

bool Graph::operator==(const Graph& other) const {
  return num_nodes == other.num_nodes && label == other.label && edges == other.edges && x.rows() == other.x.rows() &&
         x.cols() == other.x.cols() && x == other.x;
}

void normalize_edges(Graph& g) {
  std::vector<Edge> out;
  out.reserve(g.edges.size());
  for (auto [u, v] : g.edges) {
    if (u == v) continue;
    if (u > v) std::swap(u, v);
    out.emplace_back(u, v);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  g.edges = std::move(out);
}

Matrix degree_one_hot(Index num_nodes, std::span<const Edge> edges, int max_degree) {
  std::vector<int> degree(static_cast<std::size_t>(num_nodes), 0);
  for (const auto& [u, v] : edges) {
    ++degree[static_cast<std::size_t>(u)];
    ++degree[static_cast<std::size_t>(v)];
  }
  Matrix x = Matrix::Zero(num_nodes, max_degree + 1);
  for (Index i = 0; i < num_nodes; ++i) x(i, std::min(degree[static_cast<std::size_t>(i)], max_degree)) = 1.0;
  return x;
}

bool DatasetStats::is_monotone() const {
  return std::is_sorted(class_sizes.begin(), class_sizes.end(), std::greater<>());
}

DatasetStats compute_stats(std::span<const Graph> graphs, int num_classes) {
  if (graphs.empty()) throw DataError("empty graph list");
  if (num_classes < 0) {
    int mx = 0;
    for (const Graph& g : graphs) mx = std::max(mx, g.label);
    num_classes = mx + 1;
  }
  DatasetStats s;
  s.num_classes = num_classes;
  s.counts_by_label.assign(static_cast<std::size_t>(num_classes), 0);
  for (const Graph& g : graphs) {
    if (g.label < 0 || g.label >= num_classes) throw DataError("label " + std::to_string(g.label) + " outside [0, M)");
    ++s.counts_by_label[static_cast<std::size_t>(g.label)];
  }
  s.rank_to_label.resize(static_cast<std::size_t>(num_classes));
  std::iota(s.rank_to_label.begin(), s.rank_to_label.end(), 0);
  std::stable_sort(s.rank_to_label.begin(), s.rank_to_label.end(), [&](int a, int b) {
    return s.counts_by_label[static_cast<std::size_t>(a)] > s.counts_by_label[static_cast<std::size_t>(b)];
  });
  for (int lbl : s.rank_to_label) s.class_sizes.push_back(s.counts_by_label[static_cast<std::size_t>(lbl)]);
  s.total = static_cast<long>(graphs.size());
  if (s.class_sizes.back() < 1) throw DataError("class " + std::to_string(s.rank_to_label.back()) + " has no samples");
  s.imbalance_factor = static_cast<double>(s.class_sizes.front()) / static_cast<double>(s.class_sizes.back());
  return s;
}

void write_jsonl(const std::filesystem::path& file, std::span<const Graph> graphs) {
  std::ofstream out(file);
  if (!out) throw DataError(file.string() + ": cannot open for writing");
  for (const Graph& g : graphs) {
    nlohmann::json j;
    j["n"] = g.num_nodes;
    auto edges = nlohmann::json::array();
    for (const auto& [u, v] : g.edges) edges.push_back({u, v});
    j["edges"] = std::move(edges);
    auto rows = nlohmann::json::array();
    for (Index r = 0; r < g.x.rows(); ++r) {
      auto row = nlohmann::json::array();
      for (Index c = 0; c < g.x.cols(); ++c) row.push_back(g.x(r, c));
      rows.push_back(std::move(row));
    }
    j["x"] = std::move(rows);
    j["y"] = g.label;
    out << j.dump() << '\n';
  }
}

std::vector<Graph> read_jsonl(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError(file.string() + ": cannot open");
  std::vector<Graph> graphs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Graph g;
      g.num_nodes = j.at("n").get<Index>();
      for (const auto& e : j.at("edges")) g.edges.emplace_back(e.at(0).get<Index>(), e.at(1).get<Index>());
      const auto& rows = j.at("x");
      const Index dim = rows.empty() ? 0 : static_cast<Index>(rows.at(0).size());
      g.x.resize(static_cast<Index>(rows.size()), dim);
      for (Index r = 0; r < g.x.rows(); ++r) {
        const auto& row = rows.at(static_cast<std::size_t>(r));
        if (static_cast<Index>(row.size()) != dim) throw DataError("ragged attribute matrix");
        for (Index c = 0; c < dim; ++c) g.x(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
      }
      g.label = j.at("y").get<int>();
      normalize_edges(g);
      g.validate();
      graphs.push_back(std::move(g));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(file.string(), lineno, e.what());
    } catch (const DataError& e) {
      throw DataError(file.string(), lineno, e.what());
    }
  }
  return graphs;
}

}  // namespace tailgraph::data
