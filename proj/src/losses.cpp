#include "tailgraph/losses.hpp"

#include <cmath>
#include <vector>

namespace tailgraph::loss {

using ad::Var;

void BclConfig::validate() const {
  if (!(tau > 0)) throw ConfigError("bcl: tau must be positive");
  if (!(alpha >= 0 && alpha <= 1)) throw ConfigError("bcl: alpha must lie in [0, 1]");
}

Var contrastive_nll(const Var& scores, const Matrix& weights, const Matrix& keep) {
  if (weights.rows() != scores.rows() || weights.cols() != scores.cols())
    throw ShapeError("contrastive_nll", scores.rows(), scores.cols(), weights.rows(), weights.cols());
  ad::Tape& tape = scores.tape();
  const Var lse = ad::row_logsumexp(scores, keep);
  const Var row_weight = tape.constant(weights.rowwise().sum());
  const Var positive = ad::sum_rows(ad::mul(scores, tape.constant(weights)));
  return ad::sub(ad::mul(lse, row_weight), positive);
}

ContrastTargets contrast_targets(std::span<const int> labels, Index classes, ContrastMode mode, double alpha, int view) {
  const auto b = static_cast<Index>(labels.size());
  const bool anchors = mode == ContrastMode::Balanced;
  const Index cols = 2 * b + (anchors ? classes : 0);
  ContrastTargets t{Matrix::Zero(b, cols), Matrix::Ones(b, cols)};
  for (Index i = 0; i < b; ++i) {
    const Index self = view * b + i;
    const Index twin = (1 - view) * b + i;
    t.keep(i, self) = 0.0;
    for (Index j = 0; j < 2 * b; ++j) {
      if (j == self) continue;
      const bool same = labels[static_cast<std::size_t>(j % b)] == labels[static_cast<std::size_t>(i)];
      switch (mode) {
        case ContrastMode::Balanced: t.weights(i, j) = same ? alpha : 0.0; break;
        case ContrastMode::Supervised: t.weights(i, j) = same ? 1.0 : 0.0; break;
        case ContrastMode::Unsupervised: t.weights(i, j) = j == twin ? 1.0 : 0.0; break;
      }
    }
    if (anchors) t.weights(i, 2 * b + labels[static_cast<std::size_t>(i)]) = 1.0;
  }
  return t;
}

namespace {

Var contrast_one_view(const Var& query_z, const Var& all_z, const Var& query_anchor, const Var& anchors,
                      std::span<const int> labels, const BclConfig& cfg, ContrastMode mode, int view) {
  const double inv_tau = 1.0 / cfg.tau;
  Var scores = ad::scale(ad::matmul(query_z, ad::transpose(all_z)), inv_tau);
  if (mode == ContrastMode::Balanced) {
    const Var anchor_scores = ad::scale(ad::matmul(query_anchor, ad::transpose(anchors)), inv_tau);
    const Var parts[] = {scores, anchor_scores};
    scores = ad::concat_cols(parts);
  }
  const auto t = contrast_targets(labels, anchors.rows(), mode, cfg.alpha, view);
  return contrastive_nll(scores, t.weights, t.keep);
}

}  // namespace

Var balanced_contrastive_loss(const ContrastViews& v, const Var& anchors, std::span<const int> labels,
                              const BclConfig& cfg, ContrastMode mode) {
  cfg.validate();
  const auto b = static_cast<Index>(labels.size());
  if (v.z1.rows() != b || v.z2.rows() != b)
    throw ShapeError("balanced_contrastive_loss", v.z1.rows(), v.z1.cols(), v.z2.rows(), v.z2.cols());
  for (int y : labels)
    if (y < 0 || y >= anchors.rows()) throw std::out_of_range("balanced_contrastive_loss: label outside anchor bank");
  if (mode == ContrastMode::Balanced && v.q1.cols() != anchors.cols())
    throw ShapeError("balanced_contrastive_loss", v.q1.rows(), v.q1.cols(), anchors.rows(), anchors.cols());
  const Var views[] = {v.z1, v.z2};
  const Var all = ad::concat_rows(views);
  Var c = contrast_one_view(v.z1, all, v.q1, anchors, labels, cfg, mode, 0);
  if (cfg.symmetrize_views) {
    const Var mirrored = contrast_one_view(v.z2, all, v.q2.valid() ? v.q2 : v.q1, anchors, labels, cfg, mode, 1);
    c = ad::scale(ad::add(c, mirrored), 0.5);
  }
  return c;
}

double balanced_contrastive_loss_single(Index i, const Matrix& z1, const Matrix& z2, const Matrix& q1,
                                        const Matrix& anchors, std::span<const int> labels, const BclConfig& cfg) {
  cfg.validate();
  const auto b = static_cast<Index>(labels.size());
  const int yi = labels[static_cast<std::size_t>(i)];
  std::vector<double> scores;
  std::vector<double> weights;
  for (Index j = 0; j < 2 * b; ++j) {
    if (j == i) continue;
    const auto zj = j < b ? z1.row(j) : z2.row(j - b);
    scores.push_back(zj.dot(z1.row(i)) / cfg.tau);
    weights.push_back(labels[static_cast<std::size_t>(j % b)] == yi ? cfg.alpha : 0.0);
  }
  for (Index m = 0; m < anchors.rows(); ++m) {
    scores.push_back(anchors.row(m).dot(q1.row(i)) / cfg.tau);
    weights.push_back(m == yi ? 1.0 : 0.0);
  }
  double mx = scores[0];
  for (double s : scores) mx = std::max(mx, s);
  double acc = 0;
  for (double s : scores) acc += std::exp(s - mx);
  const double log_denominator = mx + std::log(acc);
  double loss = 0;
  for (std::size_t k = 0; k < scores.size(); ++k) loss -= weights[k] * (scores[k] - log_denominator);
  return loss;
}

Matrix hard_class_mask(const Matrix& logits, std::span<const int> labels, Index m_hard) {
  if (static_cast<Index>(labels.size()) != logits.rows())
    throw ShapeError("hard_class_mask", logits.rows(), logits.cols(), static_cast<Index>(labels.size()), 1);
  Matrix mask = Matrix::Zero(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const auto set = mine_hard_classes(logits.row(i).transpose(), labels[static_cast<std::size_t>(i)], m_hard);
    for (Index j : set.members) mask(i, j) = 1.0;
  }
  return mask;
}

Matrix one_hot(std::span<const int> labels, Index classes) {
  Matrix m = Matrix::Zero(static_cast<Index>(labels.size()), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) throw std::out_of_range("one_hot: label outside [0, M)");
    m(static_cast<Index>(i), labels[i]) = 1.0;
  }
  return m;
}

Var add_log_prior(const Var& logits, const Vector& log_prior) {
  if (log_prior.size() != logits.cols()) throw ShapeError("add_log_prior", logits.rows(), logits.cols(), 1, log_prior.size());
  return ad::add(logits, logits.tape().constant(log_prior.transpose().replicate(logits.rows(), 1)));
}

Var nll_rows(const Var& adjusted, std::span<const int> labels, const Matrix* keep) {
  if (static_cast<Index>(labels.size()) != adjusted.rows())
    throw ShapeError("nll_rows", adjusted.rows(), adjusted.cols(), static_cast<Index>(labels.size()), 1);
  const Var lse = keep ? ad::row_logsumexp(adjusted, *keep) : ad::row_logsumexp(adjusted);
  const Var target = ad::sum_rows(ad::mul(adjusted, adjusted.tape().constant(one_hot(labels, adjusted.cols()))));
  return ad::sub(lse, target);
}

Var individual_supervised_loss(const Var& logits, std::span<const int> labels, const ClassPrior& prior,
                               const SupervisedConfig& cfg, const Matrix* hard_mask) {
  if (prior.size() != logits.cols())
    throw ShapeError("individual_supervised_loss", logits.rows(), logits.cols(), 1, prior.size());
  const Var adjusted = cfg.balanced ? add_log_prior(logits, prior.log_counts()) : logits;
  Var loss = nll_rows(adjusted, labels);
  if (cfg.hard_mining) {
    Matrix mined;
    if (!hard_mask) {
      mined = hard_class_mask(logits.value(), labels, cfg.m_hard);
      hard_mask = &mined;
    }
    loss = ad::add(loss, nll_rows(adjusted, labels, hard_mask));
  }
  return loss;
}

}  // namespace tailgraph::loss
