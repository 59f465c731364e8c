#pragma once

// Component ablation matrix: every variant is trained on the same splits and
// seeds as the others, and reported with its gain over the first variant.

#include "tailgraph/trainer.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace tailgraph::train {

struct Variant {
  std::string name;
  Switches switches;
};

// M1..M7: expert ensemble alone, then +HCM, +BCL, +both, +gating, +distillation, all.
// The prior-weighted softmax follows `bpp` in every row.
std::vector<Variant> table_variants(bool bpp = true);
// Contrastive swaps: unsupervised, supervised, balanced without and with the prior.
std::vector<Variant> contrast_variants();
// Distillation swaps: none, plain KL, target only, non-target only, disentangled.
std::vector<Variant> distill_variants();
// "name:contrast=...,hcm=..."; switches not named start from everything off.
Variant parse_variant(const std::string& text);

struct AblationRow {
  Variant variant;
  std::vector<Metrics> runs;  // one per seed, test split
  double mean_accuracy = 0;
  std::array<std::optional<double>, 3> mean_group;
  double delta = 0;           // mean_accuracy minus that of the first row
};

using SplitProvider = std::function<Splits(std::uint64_t seed)>;
using RunObserver = std::function<void(const Variant&, std::uint64_t seed, const TrainResult&)>;

// Trains `base` with each variant's switches for every seed. The seed sets both
// the training seed and the split provider's seed. Variants run with method come.
std::vector<AblationRow> run_ablation(const TrainConfig& base, std::span<const Variant> variants,
                                      std::span<const std::uint64_t> seeds, const SplitProvider& splits,
                                      const RunObserver& observer = {});

std::string ablation_csv(std::span<const AblationRow> rows);

}  // namespace tailgraph::train
