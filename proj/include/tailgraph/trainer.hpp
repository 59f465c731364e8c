#pragma once

// Training loop, optimizer, evaluation metrics and the experiment splits.

#include "tailgraph/config.hpp"
#include "tailgraph/expert.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tailgraph::train {

struct LossBreakdown {
  double fsl = 0;     // gated supervised term
  double fcl = 0;     // gated contrastive term
  double fusion = 0;  // fsl + eta fcl
  double inter = 0;   // inter-expert distillation
  double total = 0;   // fusion + epsilon inter
};

enum class Group { Head = 0, Medium = 1, Tail = 2 };

// Classes ranked by training count (ties: lower label first); the top third is
// head, the bottom third tail, the rest medium. A third is round(M/3), at least
// 1 and at most M/2.
std::vector<Group> class_groups(std::span<const long> train_counts);

struct Metrics {
  double accuracy = 0;
  std::vector<double> per_class;             // NaN for classes absent from the split
  std::array<std::optional<double>, 3> group; // head, medium, tail; empty when the group has no samples
  double nll = 0;                             // mean -log p_test(y)
  std::size_t samples = 0;
};

Metrics score(std::span<const int> predictions, std::span<const int> labels, std::span<const long> train_counts,
              int num_classes);
// Fused inference over the bank. Throws DataError on an empty split.
Metrics evaluate(const nn::ExpertBank& bank, std::span<const data::Graph> split, std::span<const long> train_counts);

class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  // Moments are kept per position in `params`; pass the same list every step.
  void step(std::span<ad::Parameter* const> params);
  long steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

std::vector<ad::Parameter*> bank_parameters(nn::ExpertBank& bank);

struct StepGraph {
  LossBreakdown values;
  ad::Var total;
};

// Records one training step's objective on `tape`: views for every expert,
// encodings, hard sets, per-expert supervised and contrastive losses, fusion,
// distillation and the total. Augmentation seeds depend on (seed, epoch, sample).
StepGraph build_step(ad::Tape& tape, nn::ExpertBank& bank, const ResolvedConfig& rc, const ClassPrior& prior,
                     std::span<const data::Graph> train, std::span<const std::size_t> batch, std::uint64_t epoch);

struct EpochRecord {
  int epoch = 0;
  LossBreakdown mean_loss;
  double val_accuracy = 0;
  double val_nll = 0;
  double seconds = 0;
};

struct Splits {
  std::vector<data::Graph> train, val, test;
  int num_classes = 0;
};

struct TrainResult {
  nn::ExpertBank bank;  // best-validation parameters
  std::vector<EpochRecord> history;
  std::vector<LossBreakdown> step_losses;
  std::vector<long> train_counts;
  int best_epoch = -1;
  Metrics best_val;
  std::optional<Metrics> test;
  bool converged = false;
  std::string failure;  // diagnostic when training aborted
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
};

TrainResult train(const TrainConfig& config, const Splits& splits, const TrainHooks& hooks = {});

// Resamples with replacement so every class reaches the largest class count.
std::vector<data::Graph> oversample(std::span<const data::Graph> train, int num_classes, std::uint64_t seed);

// Motif corpus split into balanced val/test first, then the remainder long-tailed.
struct MotifSplitSpec {
  data::MotifSpec corpus;
  long head_count = 40;
  double imbalance_factor = 20;
  int per_class_val = 5;
  int per_class_test = 15;
};
Splits motif_splits(const MotifSplitSpec& spec);

// ---- output files ----------------------------------------------------------

std::string epoch_json(const EpochRecord& r);
std::string metrics_json(const Metrics& m);
void write_summary_csv(const std::filesystem::path& file, const std::vector<std::string>& names,
                       const std::vector<Metrics>& rows);

}  // namespace tailgraph::train
