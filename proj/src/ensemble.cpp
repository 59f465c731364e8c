#include "tailgraph/ensemble.hpp"

#include "tailgraph/losses.hpp"

namespace tailgraph::ensemble {

using ad::Var;

void FusionConfig::validate() const {
  if (!(eta >= 0)) throw ConfigError("fusion: eta must be >= 0");
  if (!(kappa > 0)) throw ConfigError("fusion: kappa must be positive");
}

void DistillConfig::validate() const {
  if (!(beta1 >= 0 && beta2 >= 0 && epsilon >= 0)) throw ConfigError("distill: beta1, beta2 and epsilon must be >= 0");
}

Var gating_weights(std::span<const Var> logits, std::span<const Var> prototypes, const FusionConfig& cfg) {
  cfg.validate();
  if (logits.empty()) throw std::invalid_argument("gating_weights: need at least one expert");
  if (logits.size() != prototypes.size())
    throw ShapeError("gating_weights", static_cast<Index>(logits.size()), 1, static_cast<Index>(prototypes.size()), 1);
  const Index b = logits[0].rows();
  const std::vector<Index> broadcast(static_cast<std::size_t>(b), 0);
  std::vector<Var> sims;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    if (prototypes[k].rows() != 1 || prototypes[k].cols() != logits[k].cols())
      throw ShapeError("gating_weights", logits[k].rows(), logits[k].cols(), prototypes[k].rows(), prototypes[k].cols());
    const Var proto = ad::gather_rows(prototypes[k], broadcast);
    sims.push_back(cfg.similarity == GatingSimilarity::Cosine
                       ? ad::dot_rows(ad::l2_normalize_rows(logits[k]), ad::l2_normalize_rows(proto))
                       : ad::dot_rows(logits[k], proto));
  }
  const Var s = ad::scale(ad::concat_cols(sims), 1.0 / cfg.kappa);
  return ad::exp(ad::sub_colvec(s, ad::row_logsumexp(s)));
}

Var uniform_weights(ad::Tape& tape, Index batch, Index experts) {
  return tape.constant(Matrix::Constant(batch, experts, 1.0 / static_cast<double>(experts)));
}

FusionTerms fusion_loss(std::span<const Var> supervised, std::span<const Var> contrastive, const Var& weights, double eta) {
  if (static_cast<Index>(supervised.size()) != weights.cols())
    throw ShapeError("fusion_loss", weights.rows(), weights.cols(), weights.rows(), static_cast<Index>(supervised.size()));
  if (!contrastive.empty() && contrastive.size() != supervised.size())
    throw ShapeError("fusion_loss", "contrastive losses for " + std::to_string(contrastive.size()) + " experts, supervised for " +
                                        std::to_string(supervised.size()));
  const double inv_b = 1.0 / static_cast<double>(weights.rows());
  FusionTerms t;
  t.fsl = ad::scale(ad::sum(ad::mul(weights, ad::concat_cols(supervised))), inv_b);
  if (contrastive.empty())
    t.fcl = weights.tape().constant(Matrix::Zero(1, 1));
  else
    t.fcl = ad::scale(ad::sum(ad::mul(weights, ad::concat_cols(contrastive))), inv_b);
  t.fusion = ad::add(t.fsl, ad::scale(t.fcl, eta));
  return t;
}

namespace {

Var adjusted(const Var& logits, const Vector* log_prior) {
  return log_prior ? loss::add_log_prior(logits, *log_prior) : logits;
}

}  // namespace

Var dkl_rows(const Var& logits_k, const Var& logits_q, std::span<const int> labels, const Vector* log_prior,
             const Matrix& support, double beta1, double beta2, DistillMode mode) {
  if (logits_k.rows() != logits_q.rows() || logits_k.cols() != logits_q.cols())
    throw ShapeError("dkl_rows", logits_k.rows(), logits_k.cols(), logits_q.rows(), logits_q.cols());
  ad::Tape& tape = logits_k.tape();
  const Matrix onehot = loss::one_hot(labels, logits_k.cols());
  if ((support.array() < onehot.array()).any()) throw std::invalid_argument("dkl_rows: support must contain the target");
  const Matrix nontarget = support - onehot;
  const Matrix has_nt = (nontarget.rowwise().sum().array() > 0).cast<double>().matrix();
  const Var has_nt_v = tape.constant(has_nt);
  const Var nt_v = tape.constant(nontarget);
  const Var oh_v = tape.constant(onehot);

  struct Parts {
    Var log_by, log_bn, log_nt;
  };
  auto parts = [&](const Var& logits) {
    const Var a = adjusted(logits, log_prior);
    const Var l_s = ad::row_logsumexp(a, support);
    const Var l_t = ad::row_logsumexp(a, nontarget);
    Parts p;
    p.log_by = ad::sub(ad::sum_rows(ad::mul(a, oh_v)), l_s);
    p.log_bn = ad::mul(ad::sub(l_t, l_s), has_nt_v);
    p.log_nt = ad::mul(ad::sub_colvec(a, l_t), nt_v);
    return p;
  };
  const Parts pk = parts(logits_k);
  const Parts pq = parts(logits_q);

  const Var kl_binary =
      ad::add(ad::mul(ad::exp(pk.log_by), ad::sub(pk.log_by, pq.log_by)),
              ad::mul(ad::mul(ad::exp(pk.log_bn), ad::sub(pk.log_bn, pq.log_bn)), has_nt_v));
  const Var kl_nontarget = ad::sum_rows(ad::mul(ad::mul(ad::exp(pk.log_nt), nt_v), ad::sub(pk.log_nt, pq.log_nt)));

  if (mode == DistillMode::PlainKl) {
    // 1 - p^k_y over the support, kept on the tape so the weight is differentiable.
    const Var weight = ad::mul(ad::exp(pk.log_bn), has_nt_v);
    return ad::add(kl_binary, ad::mul(weight, kl_nontarget));
  }
  return ad::add(ad::scale(kl_binary, beta1), ad::scale(kl_nontarget, beta2));
}

Var kl_rows(const Var& logits_k, const Var& logits_q, const Vector* log_prior, const Matrix& support) {
  const Var ak = adjusted(logits_k, log_prior);
  const Var aq = adjusted(logits_q, log_prior);
  const Var sup = logits_k.tape().constant(support);
  const Var lpk = ad::mul(ad::sub_colvec(ak, ad::row_logsumexp(ak, support)), sup);
  const Var lpq = ad::mul(ad::sub_colvec(aq, ad::row_logsumexp(aq, support)), sup);
  return ad::sum_rows(ad::mul(ad::mul(ad::exp(lpk), sup), ad::sub(lpk, lpq)));
}

Var inter_expert_loss(std::span<const Var> logits, std::span<const int> labels, const Vector* log_prior,
                      std::span<const Matrix> hard_masks, const DistillConfig& cfg) {
  cfg.validate();
  if (logits.empty()) throw std::invalid_argument("inter_expert_loss: no experts");
  ad::Tape& tape = logits[0].tape();
  if (logits.size() < 2) return tape.constant(Matrix::Zero(1, 1));
  const bool hard = cfg.hard_term && !hard_masks.empty();
  if (hard && hard_masks.size() != logits.size())
    throw ShapeError("inter_expert_loss", "hard masks for " + std::to_string(hard_masks.size()) + " experts, logits for " +
                                              std::to_string(logits.size()));
  const Index b = logits[0].rows();
  const Matrix full = Matrix::Ones(b, logits[0].cols());
  std::vector<Var> terms;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    for (std::size_t q = 0; q < logits.size(); ++q) {
      if (q == k) continue;
      const Var other = cfg.detach_teacher ? ad::detach(logits[q]) : logits[q];
      terms.push_back(dkl_rows(logits[k], other, labels, log_prior, full, cfg.beta1, cfg.beta2, cfg.mode));
      if (hard) {
        const Matrix support = cfg.hard_support == HardSupport::FirstExpert
                                   ? hard_masks[k]
                                   : Matrix(hard_masks[k].cwiseProduct(hard_masks[q]));
        terms.push_back(dkl_rows(logits[k], other, labels, log_prior, support, cfg.beta1, cfg.beta2, cfg.mode));
      }
    }
  }
  return ad::scale(ad::sum(ad::concat_cols(terms)), 1.0 / static_cast<double>(b));
}

Var total_loss(const Var& fusion, const Var& inter, double epsilon) {
  if (epsilon == 0.0) return fusion;
  return ad::add(fusion, ad::scale(inter, epsilon));
}

std::vector<int> fused_predictions(std::span<const Matrix> logits) {
  if (logits.empty()) throw std::invalid_argument("fused_predictions: no experts");
  Matrix avg = logits[0];
  for (std::size_t k = 1; k < logits.size(); ++k) avg += logits[k];
  avg /= static_cast<double>(logits.size());
  std::vector<int> pred(static_cast<std::size_t>(avg.rows()));
  for (Index i = 0; i < avg.rows(); ++i) {
    Index arg = 0;
    avg.row(i).maxCoeff(&arg);
    pred[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return pred;
}

}  // namespace tailgraph::ensemble
