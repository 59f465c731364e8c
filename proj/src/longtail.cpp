#include "tailgraph/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace tailgraph::data {
namespace {

std::vector<std::vector<std::size_t>> indices_by_label(std::span<const Graph> graphs, int num_classes) {
  std::vector<std::vector<std::size_t>> by_label(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < graphs.size(); ++i) by_label[static_cast<std::size_t>(graphs[i].label)].push_back(i);
  return by_label;
}

std::vector<Graph> pick(std::span<const Graph> graphs, std::vector<std::size_t> idx) {
  std::sort(idx.begin(), idx.end());
  std::vector<Graph> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(graphs[i]);
  return out;
}

}  // namespace

double LongTailSpec::decay_exponent(int num_classes) const {
  if (num_classes < 2) throw std::invalid_argument("decay_exponent: need at least two classes");
  return std::log(imbalance_factor) / std::log(static_cast<double>(num_classes));
}

std::vector<long> zipf_class_sizes(long head_count, int num_classes, double imbalance_factor) {
  if (num_classes < 2) throw std::invalid_argument("zipf_class_sizes: need at least two classes");
  if (imbalance_factor < 1.0) throw std::invalid_argument("zipf_class_sizes: imbalance factor must be >= 1");
  if (head_count < 1) throw std::invalid_argument("zipf_class_sizes: head count must be >= 1");
  const double s = std::log(imbalance_factor) / std::log(static_cast<double>(num_classes));
  std::vector<long> sizes(static_cast<std::size_t>(num_classes));
  for (int j = 1; j <= num_classes; ++j)
    sizes[static_cast<std::size_t>(j - 1)] =
        std::max(std::lround(static_cast<double>(head_count) * std::pow(static_cast<double>(j), -s)), 1L);
  return sizes;
}

LongTailResult make_long_tailed(std::span<const Graph> graphs, const LongTailSpec& spec) {
  const DatasetStats in = compute_stats(graphs);
  if (in.num_classes < 2) throw std::invalid_argument("make_long_tailed: need at least two classes");
  const long head = spec.head_count.value_or(in.class_sizes.front());
  const auto sizes = zipf_class_sizes(head, in.num_classes, spec.imbalance_factor);
  const auto by_label = indices_by_label(graphs, in.num_classes);

  std::vector<std::size_t> chosen;
  for (int rank = 0; rank < in.num_classes; ++rank) {
    const int label = in.rank_to_label[static_cast<std::size_t>(rank)];
    const long want = sizes[static_cast<std::size_t>(rank)];
    auto pool = by_label[static_cast<std::size_t>(label)];
    if (want > static_cast<long>(pool.size()))
      throw std::invalid_argument("make_long_tailed: class " + std::to_string(label) + " needs " + std::to_string(want) +
                                  " samples but has " + std::to_string(pool.size()));
    std::mt19937_64 rng(hash_seed(spec.seed, static_cast<std::uint64_t>(label)));
    std::shuffle(pool.begin(), pool.end(), rng);
    chosen.insert(chosen.end(), pool.begin(), pool.begin() + want);
  }
  std::sort(chosen.begin(), chosen.end());
  LongTailResult out;
  out.source_index = chosen;
  out.train = pick(graphs, chosen);
  out.stats = compute_stats(out.train, in.num_classes);
  return out;
}

BalancedSplit split_balanced(std::span<const Graph> graphs, int per_class_val, int per_class_test, std::uint64_t seed) {
  if (per_class_val < 0 || per_class_test < 0) throw std::invalid_argument("split_balanced: negative split size");
  const DatasetStats stats = compute_stats(graphs);
  const auto by_label = indices_by_label(graphs, stats.num_classes);
  std::vector<std::size_t> val, test, rest;
  for (int label = 0; label < stats.num_classes; ++label) {
    auto pool = by_label[static_cast<std::size_t>(label)];
    const auto need = static_cast<std::size_t>(per_class_val + per_class_test + 1);
    if (pool.size() < need)
      throw std::invalid_argument("split_balanced: class " + std::to_string(label) + " has " + std::to_string(pool.size()) +
                                  " samples, needs at least " + std::to_string(need));
    std::mt19937_64 rng(hash_seed(seed, static_cast<std::uint64_t>(label), 0x5b17ULL));
    std::shuffle(pool.begin(), pool.end(), rng);
    const auto v_end = pool.begin() + per_class_val;
    const auto t_end = v_end + per_class_test;
    val.insert(val.end(), pool.begin(), v_end);
    test.insert(test.end(), v_end, t_end);
    rest.insert(rest.end(), t_end, pool.end());
  }
  return {pick(graphs, val), pick(graphs, test), pick(graphs, rest)};
}

}  // namespace tailgraph::data
