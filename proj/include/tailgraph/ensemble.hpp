#pragma once

// Gated fusion of per-expert losses, disentangled inter-expert distillation
// and the total objective.

#include "tailgraph/kernels.hpp"
#include "tailgraph/tensor.hpp"

#include <span>
#include <vector>

namespace tailgraph::ensemble {

struct FusionConfig {
  double eta = 1.0;    // weight of the contrastive term
  double kappa = 0.1;  // gating temperature
  GatingSimilarity similarity = GatingSimilarity::Cosine;
  bool gated = true;   // false: uniform 1/K weights

  void validate() const;
};

// How expert q's hard-class distribution is aligned with expert k's.
enum class HardSupport {
  FirstExpert,   // re-normalize q over k's hard set
  Intersection,  // both over the intersection of the two sets
};

enum class DistillMode {
  Disentangled,  // beta1 KL(b) + beta2 KL(non-target)
  PlainKl,       // beta1 = 1, beta2 = 1 - p^k_y per sample: ordinary KL
};

struct DistillConfig {
  double beta1 = 1.0;
  double beta2 = 1.0;
  double epsilon = 0.6;
  bool detach_teacher = false;  // stop the gradient into the second argument of each DKL
  HardSupport hard_support = HardSupport::FirstExpert;
  DistillMode mode = DistillMode::Disentangled;
  bool hard_term = true;        // include the hard-class DKL term

  void validate() const;
};

// Gating weights [B x K]: softmax over experts of sim(o^k_i, w^k) / kappa.
ad::Var gating_weights(std::span<const ad::Var> logits, std::span<const ad::Var> prototypes, const FusionConfig& config);
ad::Var uniform_weights(ad::Tape& tape, Index batch, Index experts);

struct FusionTerms {
  ad::Var fsl;     // batch mean of sum_k w_ik S_ik
  ad::Var fcl;     // batch mean of sum_k w_ik C_ik (zero when no contrastive losses)
  ad::Var fusion;  // fsl + eta * fcl
};

// `contrastive` may be empty; otherwise it holds one [B x 1] column per expert.
FusionTerms fusion_loss(std::span<const ad::Var> supervised, std::span<const ad::Var> contrastive,
                        const ad::Var& weights, double eta);

// Row-wise DKL between the prior-weighted softmaxes of two experts, each
// restricted to `support` (a 0/1 [B x M] mask that contains every row's target).
// `log_prior` null means the plain softmax.
ad::Var dkl_rows(const ad::Var& logits_k, const ad::Var& logits_q, std::span<const int> labels, const Vector* log_prior,
                 const Matrix& support, double beta1, double beta2, DistillMode mode = DistillMode::Disentangled);

// Row-wise sum_j p^k_j (log p^k_j - log p^q_j) over `support`.
ad::Var kl_rows(const ad::Var& logits_k, const ad::Var& logits_q, const Vector* log_prior, const Matrix& support);

// Batch mean of the sum over ordered expert pairs k != q of the global DKL
// plus, when `hard_masks` is non-empty and hard_term is on, the hard-class DKL.
// Returns a zero scalar for a single expert.
ad::Var inter_expert_loss(std::span<const ad::Var> logits, std::span<const int> labels, const Vector* log_prior,
                          std::span<const Matrix> hard_masks, const DistillConfig& config);

ad::Var total_loss(const ad::Var& fusion, const ad::Var& inter, double epsilon);

// Index of the largest fused probability for every graph; `logits[k]` is [N x M].
std::vector<int> fused_predictions(std::span<const Matrix> logits);

}  // namespace tailgraph::ensemble
