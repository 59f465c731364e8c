#include "tailgraph/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>

namespace tailgraph::data {
namespace {

namespace fs = std::filesystem;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

long parse_long(const std::string& field, const std::string& file, std::size_t line) {
  long v = 0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size())
    throw DataError(file, line, "expected an integer, got '" + field + "'");
  return v;
}

double parse_double(const std::string& field, const std::string& file, std::size_t line) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size())
    throw DataError(file, line, "expected a real number, got '" + field + "'");
  return v;
}

// Non-blank lines with their 1-based line numbers.
std::vector<std::pair<std::size_t, std::string>> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path.filename().string() + ": cannot open");
  std::vector<std::pair<std::size_t, std::string>> lines;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!trim(line).empty()) lines.emplace_back(n, line);
  }
  return lines;
}

std::string find_dataset_name(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError(dir.string() + ": not a directory");
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string f = entry.path().filename().string();
    if (f.size() > 6 && f.ends_with("_A.txt")) return f.substr(0, f.size() - 6);
  }
  throw DataError(dir.string() + ": no *_A.txt file found");
}

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

TuDataset ingest_tu(const fs::path& dir, const TuOptions& options) {
  TuDataset ds;
  ds.name = find_dataset_name(dir);
  const std::string a_name = ds.name + "_A.txt";
  const std::string ind_name = ds.name + "_graph_indicator.txt";
  const std::string lab_name = ds.name + "_graph_labels.txt";
  const std::string att_name = ds.name + "_node_attributes.txt";

  // node -> graph
  const auto ind_lines = read_lines(dir / ind_name);
  std::vector<long> node_graph;
  node_graph.reserve(ind_lines.size());
  long num_graphs = 0;
  for (const auto& [ln, text] : ind_lines) {
    const long gid = parse_long(trim(text), ind_name, ln);
    if (gid < 1) throw DataError(ind_name, ln, "graph id must be >= 1");
    if (gid < num_graphs) throw DataError(ind_name, ln, "graph ids must be non-decreasing");
    if (gid > num_graphs + 1) throw DataError(ind_name, ln, "graph id " + std::to_string(gid) + " skips graph " + std::to_string(num_graphs + 1));
    num_graphs = std::max(num_graphs, gid);
    node_graph.push_back(gid - 1);
  }
  if (node_graph.empty()) throw DataError(ind_name, 0, "no nodes");

  std::vector<Index> first_node(static_cast<std::size_t>(num_graphs), -1);
  std::vector<Index> node_count(static_cast<std::size_t>(num_graphs), 0);
  for (std::size_t v = 0; v < node_graph.size(); ++v) {
    const auto g = static_cast<std::size_t>(node_graph[v]);
    if (first_node[g] < 0) first_node[g] = static_cast<Index>(v);
    ++node_count[g];
  }

  const auto lab_lines = read_lines(dir / lab_name);
  if (static_cast<long>(lab_lines.size()) != num_graphs) {
    const std::size_t where = lab_lines.empty() ? 0 : lab_lines.back().first;
    throw DataError(lab_name, where,
                    std::to_string(lab_lines.size()) + " labels for " + std::to_string(num_graphs) + " graphs in " + ind_name);
  }
  std::vector<long> raw_labels;
  for (const auto& [ln, text] : lab_lines) raw_labels.push_back(parse_long(trim(text), lab_name, ln));

  ds.graphs.resize(static_cast<std::size_t>(num_graphs));
  for (std::size_t g = 0; g < ds.graphs.size(); ++g) ds.graphs[g].num_nodes = node_count[g];

  const auto a_lines = read_lines(dir / a_name);
  const long total_nodes = static_cast<long>(node_graph.size());
  for (const auto& [ln, text] : a_lines) {
    const auto f = split_fields(text);
    if (f.size() != 2) throw DataError(a_name, ln, "expected 'u, v'");
    const long u = parse_long(f[0], a_name, ln);
    const long v = parse_long(f[1], a_name, ln);
    for (long node : {u, v})
      if (node < 1 || node > total_nodes)
        throw DataError(a_name, ln, "node " + std::to_string(node) + " outside [1, " + std::to_string(total_nodes) + "]");
    const long gu = node_graph[static_cast<std::size_t>(u - 1)];
    const long gv = node_graph[static_cast<std::size_t>(v - 1)];
    if (gu != gv)
      throw DataError(a_name, ln, "edge joins graph " + std::to_string(gu + 1) + " and graph " + std::to_string(gv + 1));
    auto& graph = ds.graphs[static_cast<std::size_t>(gu)];
    const Index base = first_node[static_cast<std::size_t>(gu)];
    graph.edges.emplace_back(static_cast<Index>(u - 1) - base, static_cast<Index>(v - 1) - base);
  }

  const fs::path att_path = dir / att_name;
  if (fs::exists(att_path)) {
    const auto att_lines = read_lines(att_path);
    if (att_lines.size() != node_graph.size()) {
      const std::size_t where = att_lines.empty() ? 0 : att_lines.back().first;
      throw DataError(att_name, where,
                      std::to_string(att_lines.size()) + " attribute rows for " + std::to_string(node_graph.size()) + " nodes");
    }
    Index dim = -1;
    for (std::size_t v = 0; v < att_lines.size(); ++v) {
      const auto& [ln, text] = att_lines[v];
      const auto f = split_fields(text);
      if (dim < 0) {
        dim = static_cast<Index>(f.size());
        for (auto& g : ds.graphs) g.x.resize(g.num_nodes, dim);
      } else if (static_cast<Index>(f.size()) != dim) {
        throw DataError(att_name, ln, "expected " + std::to_string(dim) + " attributes, got " + std::to_string(f.size()));
      }
      const auto g = static_cast<std::size_t>(node_graph[v]);
      const Index local = static_cast<Index>(v) - first_node[g];
      for (Index c = 0; c < dim; ++c) ds.graphs[g].x(local, c) = parse_double(f[static_cast<std::size_t>(c)], att_name, ln);
    }
  }

  for (auto& g : ds.graphs) {
    normalize_edges(g);
    if (g.x.rows() == 0) g.x = degree_one_hot(g.num_nodes, g.edges, options.max_degree);
  }

  // Dense labels ordered by descending class size, ties by ascending original label.
  std::map<long, long> freq;
  for (long l : raw_labels) ++freq[l];
  std::vector<std::pair<long, long>> order(freq.begin(), freq.end());
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::map<long, int> remap;
  for (std::size_t k = 0; k < order.size(); ++k) {
    remap[order[k].first] = static_cast<int>(k);
    ds.original_labels.push_back(order[k].first);
  }
  for (std::size_t g = 0; g < ds.graphs.size(); ++g) {
    ds.graphs[g].label = remap.at(raw_labels[g]);
    ds.graphs[g].validate();
  }
  ds.stats = compute_stats(ds.graphs, static_cast<int>(order.size()));
  return ds;
}

void write_tu(const fs::path& dir, const std::string& name, std::span<const Graph> graphs) {
  fs::create_directories(dir);
  std::ofstream a(dir / (name + "_A.txt"));
  std::ofstream ind(dir / (name + "_graph_indicator.txt"));
  std::ofstream lab(dir / (name + "_graph_labels.txt"));
  std::ofstream att(dir / (name + "_node_attributes.txt"));
  if (!a || !ind || !lab || !att) throw DataError(dir.string() + ": cannot write TU files");
  long base = 1;
  for (std::size_t g = 0; g < graphs.size(); ++g) {
    const Graph& graph = graphs[g];
    for (const auto& [u, v] : graph.edges) {
      a << base + u << ", " << base + v << '\n';
      a << base + v << ", " << base + u << '\n';
    }
    for (Index i = 0; i < graph.num_nodes; ++i) {
      ind << g + 1 << '\n';
      for (Index c = 0; c < graph.x.cols(); ++c) att << (c ? ", " : "") << format_real(graph.x(i, c));
      att << '\n';
    }
    lab << graph.label << '\n';
    base += graph.num_nodes;
  }
}

}  // namespace tailgraph::data
