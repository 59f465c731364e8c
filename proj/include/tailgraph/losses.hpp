#pragma once

// Per-expert loss kernels on the tape: the anchor-augmented contrastive loss
// and the prior-weighted supervised loss with hard-class mining.

#include "tailgraph/kernels.hpp"
#include "tailgraph/tensor.hpp"

#include <span>

namespace tailgraph::loss {

struct BclConfig {
  double tau = 0.2;
  double alpha = 0.05;
  // Also score the view-2 rows against their own candidate sets and average.
  bool symmetrize_views = false;

  void validate() const;
};

// Balanced: same-label pairs weighted by alpha plus the class anchor with weight 1.
// Supervised: same-label pairs with weight 1, no anchors.
// Unsupervised: only the other view of the same graph, no anchors.
enum class ContrastMode { Balanced, Supervised, Unsupervised };

// Per-row weighted contrastive negative log-likelihood:
//   C_i = -sum_j W_ij (S_ij - log sum_{k : keep_ik} exp S_ik)
ad::Var contrastive_nll(const ad::Var& scores, const Matrix& weights, const Matrix& keep);

struct ContrastTargets {
  Matrix weights;  // [B x 2B] or [B x (2B + M)] with anchor columns
  Matrix keep;     // candidate set A(i) (plus anchors): everything but the query itself
};

// Targets for queries taken from view `view` (0 or 1) of a batch whose score
// columns are [view-1 rows | view-2 rows | anchors (Balanced only)].
ContrastTargets contrast_targets(std::span<const int> labels, Index classes, ContrastMode mode, double alpha,
                                 int view = 0);

struct ContrastViews {
  ad::Var z1, z2;  // unit-norm projections [B x z]
  ad::Var q1, q2;  // what the anchors are scored against (raw embeddings or projections); q2 only for symmetrize
};

// Per-sample contrastive losses C_i [B x 1]. Pair scores are z_j . z_i / tau
// and anchor scores e_m . q_i / tau.
ad::Var balanced_contrastive_loss(const ContrastViews& views, const ad::Var& anchors, std::span<const int> labels,
                                  const BclConfig& config, ContrastMode mode = ContrastMode::Balanced);

// The same quantity for a single query i, evaluated directly from the
// definition without the tape. Used for spot checks and by the CLI.
double balanced_contrastive_loss_single(Index i, const Matrix& z1, const Matrix& z2, const Matrix& q1,
                                        const Matrix& anchors, std::span<const int> labels, const BclConfig& config);

struct SupervisedConfig {
  bool balanced = true;     // prior-weighted softmax instead of plain softmax
  bool hard_mining = true;  // add the hard-class term
  Index m_hard = 1;
};

// 0/1 mask [B x M] of each row's hard-class set, computed from logit values.
Matrix hard_class_mask(const Matrix& logits, std::span<const int> labels, Index m_hard);
Matrix one_hot(std::span<const int> labels, Index classes);

// logits + log N_j on every row.
ad::Var add_log_prior(const ad::Var& logits, const Vector& log_prior);

// Row-wise -log softmax_y over the entries kept by `keep` (all entries when null).
ad::Var nll_rows(const ad::Var& adjusted_logits, std::span<const int> labels, const Matrix* keep = nullptr);

// S_i = -(log p_{i,y} + log p~_{i,y}) per row, or only the first term when hard
// mining is off. `hard_mask` may be supplied to pin the hard sets; otherwise
// they are mined from the current logit values. No gradient flows through the
// selection.
ad::Var individual_supervised_loss(const ad::Var& logits, std::span<const int> labels, const ClassPrior& prior,
                                   const SupervisedConfig& config, const Matrix* hard_mask = nullptr);

}  // namespace tailgraph::loss
