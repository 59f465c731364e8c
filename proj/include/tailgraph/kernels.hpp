#pragma once

// Value-level probability kernels: prior-weighted softmax, hard-class sets,
// KL and its target / non-target split, gating weights and test-time fusion.
// These are plain functions of Eigen expressions; the differentiable
// counterparts used in training live in losses.hpp and ensemble.hpp.

#include "tailgraph/common.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace tailgraph {

// Probabilities below this are clamped before a log in the value-level KL kernels.
inline constexpr double kProbabilityFloor = 1e-12;

// Per-class training counts N_j, used as the prior p(y = j) = N_j / N.
class ClassPrior {
 public:
  ClassPrior() = default;
  explicit ClassPrior(std::vector<long> counts) : counts_(std::move(counts)) {
    if (counts_.empty()) throw std::invalid_argument("ClassPrior: no classes");
    log_counts_.resize(static_cast<Index>(counts_.size()));
    for (std::size_t j = 0; j < counts_.size(); ++j) {
      if (counts_[j] < 1) throw std::invalid_argument("ClassPrior: class " + std::to_string(j) + " has no samples");
      log_counts_(static_cast<Index>(j)) = std::log(static_cast<double>(counts_[j]));
    }
  }
  static ClassPrior uniform(Index classes) { return ClassPrior(std::vector<long>(static_cast<std::size_t>(classes), 1)); }

  Index size() const { return static_cast<Index>(counts_.size()); }
  const std::vector<long>& counts() const { return counts_; }
  const Vector& log_counts() const { return log_counts_; }

 private:
  std::vector<long> counts_;
  Vector log_counts_;
};

// log sum_m exp(o_m + log_prior_m), evaluated as max(s) + log sum exp(s - max(s)).
template <typename D1, typename D2>
typename D1::Scalar log_sum_exp_with_prior(const Eigen::MatrixBase<D1>& logits,
                                           const Eigen::MatrixBase<D2>& log_priors) {
  using Scalar = typename D1::Scalar;
  if (logits.size() == 0) throw std::invalid_argument("log_sum_exp_with_prior: empty logit vector");
  if (logits.size() != log_priors.size())
    throw ShapeError("log_sum_exp_with_prior", logits.size(), 1, log_priors.size(), 1);
  if (!log_priors.allFinite()) throw NumericalError("log_sum_exp_with_prior", "log-prior");
  const VectorT<Scalar> s = logits.derived().reshaped() + log_priors.derived().reshaped().template cast<Scalar>();
  const Scalar mx = s.maxCoeff();
  return mx + std::log((s.array() - mx).exp().sum());
}

template <typename Derived>
VectorT<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  VectorT<Scalar> s = logits.derived().reshaped();
  s = (s.array() - s.maxCoeff()).exp();
  return s / s.sum();
}

// p_j = N_j exp(o_j) / sum_m N_m exp(o_m).
template <typename Derived>
VectorT<typename Derived::Scalar> balanced_probability(const Eigen::MatrixBase<Derived>& logits,
                                                       const ClassPrior& prior) {
  using Scalar = typename Derived::Scalar;
  if (logits.size() != prior.size()) throw ShapeError("balanced_probability", logits.size(), 1, prior.size(), 1);
  const Scalar lse = log_sum_exp_with_prior(logits, prior.log_counts());
  VectorT<Scalar> p = logits.derived().reshaped() + prior.log_counts().template cast<Scalar>();
  return (p.array() - lse).exp();
}

// The target class plus the M_hard non-target classes with the largest logits.
struct HardClassSet {
  std::vector<Index> members;  // hard non-targets in descending logit order, then the target
  Index target = 0;

  bool contains(Index j) const { return std::find(members.begin(), members.end(), j) != members.end(); }
  std::size_t size() const { return members.size(); }
};

// Ties between equal logits go to the lower class index.
template <typename Derived>
HardClassSet mine_hard_classes(const Eigen::MatrixBase<Derived>& logits, Index target, Index m_hard) {
  const Index classes = logits.size();
  if (target < 0 || target >= classes) throw std::out_of_range("mine_hard_classes: target outside [0, M)");
  if (m_hard < 1 || m_hard > classes - 1)
    throw std::invalid_argument("mine_hard_classes: M_hard=" + std::to_string(m_hard) + " outside [1, " +
                                std::to_string(classes - 1) + "]");
  const auto o = logits.derived().reshaped();
  std::vector<Index> others;
  others.reserve(static_cast<std::size_t>(classes - 1));
  for (Index j = 0; j < classes; ++j)
    if (j != target) others.push_back(j);
  std::stable_sort(others.begin(), others.end(), [&](Index a, Index b) { return o(a) > o(b); });
  HardClassSet set;
  set.target = target;
  set.members.assign(others.begin(), others.begin() + m_hard);
  set.members.push_back(target);
  return set;
}

// Prior-weighted softmax restricted to a hard-class set.
template <typename Scalar>
struct HardProbabilities {
  HardClassSet support;
  VectorT<Scalar> values;  // aligned with support.members

  Scalar at(Index j) const {
    for (std::size_t k = 0; k < support.members.size(); ++k)
      if (support.members[k] == j) return values(static_cast<Index>(k));
    throw std::out_of_range("hard_balanced_probability: class " + std::to_string(j) + " not in the hard set");
  }
};

template <typename Derived>
HardProbabilities<typename Derived::Scalar> hard_balanced_probability(const Eigen::MatrixBase<Derived>& logits,
                                                                     const ClassPrior& prior,
                                                                     const HardClassSet& support) {
  using Scalar = typename Derived::Scalar;
  if (logits.size() != prior.size()) throw ShapeError("hard_balanced_probability", logits.size(), 1, prior.size(), 1);
  if (support.size() < 2) throw std::logic_error("hard_balanced_probability: hard set must hold at least two classes");
  const auto o = logits.derived().reshaped();
  const Index n = static_cast<Index>(support.size());
  VectorT<Scalar> sub(n), lp(n);
  for (Index k = 0; k < n; ++k) {
    sub(k) = o(support.members[static_cast<std::size_t>(k)]);
    lp(k) = static_cast<Scalar>(prior.log_counts()(support.members[static_cast<std::size_t>(k)]));
  }
  const Scalar lse = log_sum_exp_with_prior(sub, lp);
  return {support, ((sub + lp).array() - lse).exp().matrix()};
}

// S = -(log p_y + log p~_y), the per-sample supervised loss of one expert.
template <typename Derived>
typename Derived::Scalar individual_supervised_loss(const Eigen::MatrixBase<Derived>& logits, Index target,
                                                    const ClassPrior& prior, Index m_hard) {
  using Scalar = typename Derived::Scalar;
  const auto o = logits.derived().reshaped();
  const Scalar global = log_sum_exp_with_prior(o, prior.log_counts()) - o(target) - prior.log_counts()(target);
  const HardClassSet set = mine_hard_classes(o, target, m_hard);
  const auto hard = hard_balanced_probability(o, prior, set);
  return global - std::log(hard.at(target));
}

template <typename D1, typename D2>
typename D1::Scalar kl_divergence(const Eigen::MatrixBase<D1>& p, const Eigen::MatrixBase<D2>& q) {
  using Scalar = typename D1::Scalar;
  if (p.size() != q.size()) throw ShapeError("kl_divergence", p.size(), 1, q.size(), 1);
  Scalar acc = 0;
  for (Index j = 0; j < p.size(); ++j) {
    const Scalar pj = std::max<Scalar>(p.derived().reshaped()(j), kProbabilityFloor);
    const Scalar qj = std::max<Scalar>(q.derived().reshaped()(j), kProbabilityFloor);
    acc += pj * (std::log(pj) - std::log(qj));
  }
  return acc;
}

template <typename Scalar>
struct TargetSplit {
  VectorT<Scalar> binary;     // (p_y, 1 - p_y)
  VectorT<Scalar> nontarget;  // p_j / (1 - p_y) for j != y, in class order
};

template <typename Derived>
TargetSplit<typename Derived::Scalar> split_target(const Eigen::MatrixBase<Derived>& p, Index target) {
  using Scalar = typename Derived::Scalar;
  const auto v = p.derived().reshaped();
  const Index classes = v.size();
  if (classes < 2) throw std::invalid_argument("split_target: need at least two classes");
  if (target < 0 || target >= classes) throw std::out_of_range("split_target: target outside [0, M)");
  TargetSplit<Scalar> out;
  out.binary.resize(2);
  out.binary << v(target), 1 - v(target);
  out.nontarget.resize(classes - 1);
  Index k = 0;
  for (Index j = 0; j < classes; ++j)
    if (j != target) out.nontarget(k++) = v(j) / (1 - v(target));
  return out;
}

template <typename Scalar>
struct KlDecomposition {
  Scalar lhs;  // KL(p || q)
  Scalar rhs;  // KL(b_p || b_q) + (1 - p_y) KL(p_nt || q_nt)
};

// Both sides of the target / non-target split of KL(p || q). Requires strictly
// positive inputs; no floor is applied.
template <typename D1, typename D2>
KlDecomposition<typename D1::Scalar> kl_decomposition_check(const Eigen::MatrixBase<D1>& p,
                                                             const Eigen::MatrixBase<D2>& q, Index target) {
  using Scalar = typename D1::Scalar;
  if ((p.array() <= 0).any() || (q.array() <= 0).any())
    throw std::invalid_argument("kl_decomposition_check: probabilities must be strictly positive");
  auto raw_kl = [](const auto& a, const auto& b) {
    return (a.array() * (a.array().log() - b.array().log())).sum();
  };
  const auto sp = split_target(p, target);
  const auto sq = split_target(q, target);
  const Scalar lhs = raw_kl(p.derived().reshaped(), q.derived().reshaped());
  const Scalar rhs = raw_kl(sp.binary, sq.binary) + sp.binary(1) * raw_kl(sp.nontarget, sq.nontarget);
  return {lhs, rhs};
}

// beta1 KL(b_p || b_q) + beta2 KL(p_nt || q_nt).
template <typename D1, typename D2>
typename D1::Scalar dkl(const Eigen::MatrixBase<D1>& p, const Eigen::MatrixBase<D2>& q, Index target, double beta1,
                        double beta2) {
  const auto sp = split_target(p, target);
  const auto sq = split_target(q, target);
  return beta1 * kl_divergence(sp.binary, sq.binary) + beta2 * kl_divergence(sp.nontarget, sq.nontarget);
}

enum class GatingSimilarity { Cosine, Dot };

// Softmax over experts of sim(o_k, w_k) / kappa. Rows of both inputs are experts.
template <typename D1, typename D2>
VectorT<typename D1::Scalar> gating_weights(const Eigen::MatrixBase<D1>& logits, const Eigen::MatrixBase<D2>& prototypes,
                                            double kappa, GatingSimilarity similarity = GatingSimilarity::Cosine) {
  using Scalar = typename D1::Scalar;
  if (kappa <= 0) throw std::invalid_argument("gating_weights: kappa must be positive");
  if (logits.rows() < 1) throw std::invalid_argument("gating_weights: need at least one expert");
  if (logits.rows() != prototypes.rows() || logits.cols() != prototypes.cols())
    throw ShapeError("gating_weights", logits.rows(), logits.cols(), prototypes.rows(), prototypes.cols());
  VectorT<Scalar> s(logits.rows());
  for (Index k = 0; k < logits.rows(); ++k) {
    Scalar d = logits.row(k).dot(prototypes.row(k).template cast<Scalar>());
    if (similarity == GatingSimilarity::Cosine) {
      const Scalar n = logits.row(k).norm() * prototypes.row(k).template cast<Scalar>().norm();
      d = n > 0 ? d / n : Scalar(0);
    }
    s(k) = d / kappa;
  }
  return softmax(s);
}

// Softmax of the logit average over experts (rows).
template <typename Derived>
VectorT<typename Derived::Scalar> fused_inference(const Eigen::MatrixBase<Derived>& logits) {
  if (logits.rows() < 1) throw std::invalid_argument("fused_inference: need at least one expert");
  return softmax(logits.colwise().mean().transpose());
}

}  // namespace tailgraph
