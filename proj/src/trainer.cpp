#include "tailgraph/trainer.hpp"

#include "tailgraph/ensemble.hpp"
#include "tailgraph/losses.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

namespace tailgraph::train {

using ad::Var;
using nlohmann::json;

std::vector<Group> class_groups(std::span<const long> counts) {
  const auto m = static_cast<Index>(counts.size());
  if (m < 1) throw std::invalid_argument("class_groups: no classes");
  std::vector<int> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return counts[a] > counts[b]; });
  const Index third = std::max<Index>(1, std::min<Index>(std::lround(static_cast<double>(m) / 3.0), m / 2));
  std::vector<Group> groups(static_cast<std::size_t>(m), Group::Medium);
  for (Index r = 0; r < m; ++r) {
    const auto label = static_cast<std::size_t>(order[static_cast<std::size_t>(r)]);
    if (r < third) groups[label] = Group::Head;
    else if (r >= m - third) groups[label] = Group::Tail;
  }
  if (m == 1) groups[0] = Group::Head;
  return groups;
}

Metrics score(std::span<const int> predictions, std::span<const int> labels, std::span<const long> train_counts,
              int num_classes) {
  if (labels.empty()) throw DataError("evaluate: empty split");
  if (predictions.size() != labels.size())
    throw ShapeError("score", static_cast<Index>(predictions.size()), 1, static_cast<Index>(labels.size()), 1);
  if (static_cast<int>(train_counts.size()) != num_classes)
    throw ShapeError("score", "train counts for " + std::to_string(train_counts.size()) + " classes, expected " +
                                  std::to_string(num_classes));
  const auto groups = class_groups(train_counts);
  std::vector<long> hit(static_cast<std::size_t>(num_classes), 0), seen(static_cast<std::size_t>(num_classes), 0);
  std::array<long, 3> ghit{}, gseen{};
  long correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= num_classes) throw DataError("evaluate: label " + std::to_string(y) + " outside [0, M)");
    const bool ok = predictions[i] == y;
    const auto g = static_cast<std::size_t>(groups[static_cast<std::size_t>(y)]);
    ++seen[static_cast<std::size_t>(y)];
    ++gseen[g];
    if (ok) {
      ++correct;
      ++hit[static_cast<std::size_t>(y)];
      ++ghit[g];
    }
  }
  Metrics m;
  m.samples = labels.size();
  m.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  for (int j = 0; j < num_classes; ++j) {
    const auto u = static_cast<std::size_t>(j);
    m.per_class.push_back(seen[u] ? static_cast<double>(hit[u]) / static_cast<double>(seen[u])
                                  : std::numeric_limits<double>::quiet_NaN());
  }
  for (std::size_t g = 0; g < 3; ++g)
    if (gseen[g]) m.group[g] = static_cast<double>(ghit[g]) / static_cast<double>(gseen[g]);
  return m;
}

Metrics evaluate(const nn::ExpertBank& bank, std::span<const data::Graph> split, std::span<const long> train_counts) {
  if (split.empty()) throw DataError("evaluate: empty split");
  if (bank.empty()) throw std::invalid_argument("evaluate: empty expert bank");
  const auto logits = nn::bank_logits(bank, split);
  Matrix avg = logits[0];
  for (std::size_t k = 1; k < logits.size(); ++k) avg += logits[k];
  avg /= static_cast<double>(logits.size());
  std::vector<int> pred(split.size()), labels(split.size());
  double nll = 0;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const auto r = static_cast<Index>(i);
    Index arg = 0;
    const double mx = avg.row(r).maxCoeff(&arg);
    pred[i] = static_cast<int>(arg);
    labels[i] = split[i].label;
    const double lse = mx + std::log((avg.row(r).array() - mx).exp().sum());
    nll += lse - avg(r, split[i].label);
  }
  Metrics m = score(pred, labels, train_counts, static_cast<int>(avg.cols()));
  m.nll = nll / static_cast<double>(split.size());
  return m;
}

Adam::Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
  if (!(lr > 0)) throw ConfigError("adam: learning rate must be positive");
}

void Adam::step(std::span<ad::Parameter* const> params) {
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (m_.size() != params.size()) throw std::invalid_argument("adam: parameter list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Parameter& p = *params[i];
    if (p.grad.size() == 0) continue;
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * p.grad;
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

std::vector<ad::Parameter*> bank_parameters(nn::ExpertBank& bank) {
  std::vector<ad::Parameter*> out;
  for (auto& e : bank)
    for (auto* p : e.parameters()) out.push_back(p);
  return out;
}

namespace {

ensemble::DistillConfig distill_for(const ResolvedConfig& rc) {
  ensemble::DistillConfig d = rc.config.distill;
  d.hard_term = rc.switches.hcm;
  switch (rc.switches.distill) {
    case DistillSwitch::Off:
    case DistillSwitch::Disentangled: break;
    case DistillSwitch::PlainKl: d.mode = ensemble::DistillMode::PlainKl; break;
    case DistillSwitch::TargetOnly: d.beta2 = 0; break;
    case DistillSwitch::NontargetOnly: d.beta1 = 0; break;
  }
  return d;
}

loss::ContrastMode contrast_mode(ContrastSwitch c) {
  switch (c) {
    case ContrastSwitch::Unsupervised: return loss::ContrastMode::Unsupervised;
    case ContrastSwitch::Supervised: return loss::ContrastMode::Supervised;
    default: return loss::ContrastMode::Balanced;
  }
}

}  // namespace

StepGraph build_step(ad::Tape& tape, nn::ExpertBank& bank, const ResolvedConfig& rc, const ClassPrior& prior,
                     std::span<const data::Graph> train, std::span<const std::size_t> batch, std::uint64_t epoch) {
  if (batch.empty()) throw std::invalid_argument("build_step: empty batch");
  if (static_cast<int>(bank.size()) != rc.experts)
    throw ShapeError("build_step", "bank has " + std::to_string(bank.size()) + " experts, config " +
                                       std::to_string(rc.experts));
  const Switches& sw = rc.switches;
  const TrainConfig& cfg = rc.config;
  std::vector<const data::Graph*> originals;
  std::vector<int> labels;
  for (std::size_t i : batch) {
    originals.push_back(&train[i]);
    labels.push_back(train[i].label);
  }
  const nn::GraphBatch original_batch = nn::GraphBatch::build(originals);
  const bool contrast = sw.contrast != ContrastSwitch::None;
  const loss::SupervisedConfig sup{sw.bpp, sw.hcm, rc.m_hard};
  const ClassPrior& used_prior = prior;

  std::vector<Var> logits, prototypes, supervised, contrastive;
  std::vector<Matrix> hard_masks;
  for (std::size_t k = 0; k < bank.size(); ++k) {
    const nn::ExpertVars ev = nn::bind(tape, bank[k]);
    const Var h = nn::encode(ev, tape, original_batch);
    const Var o = nn::classify(ev, h);
    logits.push_back(o);
    prototypes.push_back(ev.prototype);
    Matrix mask;
    if (sw.hcm) mask = loss::hard_class_mask(o.value(), labels, rc.m_hard);
    supervised.push_back(loss::individual_supervised_loss(o, labels, used_prior, sup, sw.hcm ? &mask : nullptr));
    if (sw.hcm) hard_masks.push_back(std::move(mask));

    if (contrast) {
      std::array<std::vector<data::Graph>, 2> views;
      for (std::size_t v = 0; v < 2; ++v) {
        views[v].reserve(batch.size());
        for (std::size_t i : batch) {
          const augment::AugmentSpec spec{rc.view_pairs[k][v], cfg.aug_ratio,
                                          augment::view_seed(cfg.seed, epoch, i, v, k)};
          views[v].push_back(augment::apply(train[i], spec));
        }
      }
      const Var h1 = nn::encode(ev, tape, nn::GraphBatch::build(std::span<const data::Graph>(views[0])));
      const Var h2 = nn::encode(ev, tape, nn::GraphBatch::build(std::span<const data::Graph>(views[1])));
      loss::ContrastViews cv;
      cv.z1 = nn::project(ev, h1);
      cv.z2 = nn::project(ev, h2);
      cv.q1 = cfg.anchors_use_projection ? cv.z1 : h1;
      cv.q2 = cfg.anchors_use_projection ? cv.z2 : h2;
      contrastive.push_back(
          loss::balanced_contrastive_loss(cv, ev.anchors, labels, cfg.bcl, contrast_mode(sw.contrast)));
    }
  }

  const auto b = static_cast<Index>(batch.size());
  const Var weights = sw.gating && bank.size() > 1 ? ensemble::gating_weights(logits, prototypes, cfg.fusion)
                                                   : ensemble::uniform_weights(tape, b, static_cast<Index>(bank.size()));
  const auto fusion = ensemble::fusion_loss(supervised, contrastive, weights, cfg.fusion.eta);
  Var inter = tape.constant(Matrix::Zero(1, 1));
  double epsilon = 0;
  if (sw.distill != DistillSwitch::Off && bank.size() > 1) {
    const ensemble::DistillConfig d = distill_for(rc);
    inter = ensemble::inter_expert_loss(logits, labels, sw.bpp ? &used_prior.log_counts() : nullptr, hard_masks, d);
    epsilon = d.epsilon;
  }
  StepGraph out;
  out.total = ensemble::total_loss(fusion.fusion, inter, epsilon);
  out.values.fsl = fusion.fsl.scalar();
  out.values.fcl = fusion.fcl.scalar();
  out.values.fusion = fusion.fusion.scalar();
  out.values.inter = inter.scalar();
  out.values.total = out.total.scalar();
  return out;
}

std::vector<data::Graph> oversample(std::span<const data::Graph> train, int num_classes, std::uint64_t seed) {
  const data::DatasetStats stats = data::compute_stats(train, num_classes);
  const long target = stats.class_sizes.front();
  std::vector<std::vector<std::size_t>> by_label(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < train.size(); ++i) by_label[static_cast<std::size_t>(train[i].label)].push_back(i);
  std::vector<data::Graph> out(train.begin(), train.end());
  for (int c = 0; c < num_classes; ++c) {
    const auto& pool = by_label[static_cast<std::size_t>(c)];
    std::mt19937_64 rng(hash_seed(seed, 0x0e5, static_cast<std::uint64_t>(c)));
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (auto n = static_cast<long>(pool.size()); n < target; ++n) out.push_back(train[pool[pick(rng)]]);
  }
  return out;
}

TrainResult train(const TrainConfig& config, const Splits& splits, const TrainHooks& hooks) {
  if (splits.train.empty()) throw DataError("train: empty training split");
  if (splits.val.empty()) throw DataError("train: empty validation split");
  const int m = splits.num_classes;
  const ResolvedConfig rc = resolve(config, m);
  const data::DatasetStats stats = data::compute_stats(splits.train, m);

  TrainResult result;
  result.train_counts = stats.counts_by_label;
  const std::vector<data::Graph> resampled =
      rc.oversample ? oversample(splits.train, m, hash_seed(config.seed, 0x05)) : std::vector<data::Graph>{};
  const std::span<const data::Graph> train_set = rc.oversample ? std::span<const data::Graph>(resampled)
                                                               : std::span<const data::Graph>(splits.train);
  const ClassPrior prior(stats.counts_by_label);

  nn::ExpertShape shape;
  shape.input_dim = splits.train.front().feature_dim();
  shape.hidden = config.hidden;
  shape.z_dim = config.z_dim;
  shape.layers = config.layers;
  shape.classes = m;
  shape.anchors_use_projection = config.anchors_use_projection;
  nn::ExpertBank bank = nn::make_bank(rc.experts, shape, config.seed);
  auto params = bank_parameters(bank);
  Adam adam(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps);

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  double best_acc = -1, best_nll = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(hash_seed(config.seed, 0x5f, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    LossBreakdown sum;
    int steps = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), order.size() - start);
      const std::span<const std::size_t> batch(order.data() + start, n);
      try {
        ad::Tape tape;
        const StepGraph step = build_step(tape, bank, rc, prior, train_set, batch, static_cast<std::uint64_t>(epoch));
        for (auto* p : params) p->zero_grad();
        tape.backward(step.total);
        adam.step(params);
        result.step_losses.push_back(step.values);
        sum.fsl += step.values.fsl;
        sum.fcl += step.values.fcl;
        sum.fusion += step.values.fusion;
        sum.inter += step.values.inter;
        sum.total += step.values.total;
        ++steps;
      } catch (const NumericalError& e) {
        std::string ids;
        for (std::size_t i : batch) ids += (ids.empty() ? "" : " ") + std::to_string(i);
        result.failure = "diverged at epoch " + std::to_string(epoch) + " batch " +
                         std::to_string(start / static_cast<std::size_t>(config.batch_size)) + " (train indices " +
                         ids + "): " + e.what();
        return result;
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    const double inv = 1.0 / std::max(steps, 1);
    rec.mean_loss = {sum.fsl * inv, sum.fcl * inv, sum.fusion * inv, sum.inter * inv, sum.total * inv};
    const Metrics val = evaluate(bank, splits.val, result.train_counts);
    rec.val_accuracy = val.accuracy;
    rec.val_nll = val.nll;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);

    if (val.accuracy > best_acc || (val.accuracy == best_acc && val.nll < best_nll)) {
      best_acc = val.accuracy;
      best_nll = val.nll;
      result.best_epoch = epoch;
      result.best_val = val;
      result.bank = bank;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  if (!splits.test.empty()) result.test = evaluate(result.bank, splits.test, result.train_counts);
  result.converged = true;
  return result;
}

Splits motif_splits(const MotifSplitSpec& spec) {
  const auto corpus = data::generate_motif_corpus(spec.corpus);
  auto balanced = data::split_balanced(corpus, spec.per_class_val, spec.per_class_test, hash_seed(spec.corpus.seed, 0x511));
  data::LongTailSpec lt;
  lt.imbalance_factor = spec.imbalance_factor;
  lt.head_count = spec.head_count;
  lt.seed = hash_seed(spec.corpus.seed, 0x17);
  auto tail = data::make_long_tailed(balanced.remainder, lt);
  Splits s;
  s.train = std::move(tail.train);
  s.val = std::move(balanced.val);
  s.test = std::move(balanced.test);
  s.num_classes = spec.corpus.num_classes;
  return s;
}

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::string epoch_json(const EpochRecord& r) {
  json j;
  j["epoch"] = r.epoch;
  j["fsl"] = r.mean_loss.fsl;
  j["fcl"] = r.mean_loss.fcl;
  j["fusion"] = r.mean_loss.fusion;
  j["inter"] = r.mean_loss.inter;
  j["total"] = r.mean_loss.total;
  j["val_accuracy"] = r.val_accuracy;
  j["val_nll"] = r.val_nll;
  j["seconds"] = r.seconds;
  return j.dump();
}

std::string metrics_json(const Metrics& m) {
  json j;
  j["accuracy"] = m.accuracy;
  j["nll"] = m.nll;
  j["samples"] = m.samples;
  json pc = json::array();
  for (double v : m.per_class) pc.push_back(std::isnan(v) ? json(nullptr) : json(v));
  j["per_class"] = pc;
  j["head"] = opt(m.group[0]);
  j["medium"] = opt(m.group[1]);
  j["tail"] = opt(m.group[2]);
  return j.dump();
}

void write_summary_csv(const std::filesystem::path& file, const std::vector<std::string>& names,
                       const std::vector<Metrics>& rows) {
  if (names.size() != rows.size()) throw std::invalid_argument("write_summary_csv: names and rows differ in length");
  std::ofstream out(file);
  if (!out) throw DataError("cannot write " + file.string());
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  auto cell = [&](const std::optional<double>& v) { return v ? num(*v) : std::string(); };
  out << "name,samples,accuracy,head,medium,tail,nll\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Metrics& m = rows[i];
    out << names[i] << ',' << m.samples << ',' << num(m.accuracy) << ',' << cell(m.group[0]) << ',' << cell(m.group[1]) << ','
        << cell(m.group[2]) << ',' << num(m.nll) << '\n';
  }
}

}  // namespace tailgraph::train
