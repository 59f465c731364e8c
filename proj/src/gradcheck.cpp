#include "tailgraph/gradcheck.hpp"

#include "tailgraph/ensemble.hpp"
#include "tailgraph/expert.hpp"
#include "tailgraph/losses.hpp"

#include <chrono>
#include <cmath>
#include <random>

namespace tailgraph::gradcheck {

using ad::Tape;
using ad::Var;

double relative_error(const Matrix& a, const Matrix& b, double floor) {
  const double denom = std::max({a.norm(), b.norm(), floor});
  return (a - b).norm() / denom;
}

namespace {

std::vector<Var> make_leaves(Tape& tape, const std::vector<Matrix>& inputs, bool grad) {
  std::vector<Var> leaves;
  for (const auto& m : inputs) leaves.push_back(grad ? tape.leaf(m) : tape.constant(m));
  return leaves;
}

double evaluate(const Builder& f, const std::vector<Matrix>& inputs) {
  Tape tape(false);
  const auto leaves = make_leaves(tape, inputs, false);
  return f(tape, leaves).scalar();
}

}  // namespace

Comparison compare(const Builder& f, const std::vector<Matrix>& inputs, double step) {
  Comparison c;
  {
    Tape tape;
    const auto leaves = make_leaves(tape, inputs, true);
    const Var out = f(tape, leaves);
    if (out.rows() != 1 || out.cols() != 1) throw ShapeError("gradcheck", out.rows(), out.cols(), 1, 1);
    tape.backward(out);
    for (const auto& l : leaves) c.analytic.push_back(l.grad());
  }
  std::vector<Matrix> x = inputs;
  Index total = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Matrix g(x[i].rows(), x[i].cols());
    for (Index j = 0; j < x[i].size(); ++j) {
      const double orig = x[i].data()[j];
      x[i].data()[j] = orig + step;
      const double up = evaluate(f, x);
      x[i].data()[j] = orig - step;
      const double down = evaluate(f, x);
      x[i].data()[j] = orig;
      g.data()[j] = (up - down) / (2 * step);
    }
    total += g.size();
    c.numeric.push_back(std::move(g));
  }
  Vector a(total), n(total);
  Index at = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    a.segment(at, c.analytic[i].size()) = c.analytic[i].reshaped<Eigen::RowMajor>();
    n.segment(at, c.numeric[i].size()) = c.numeric[i].reshaped<Eigen::RowMajor>();
    at += c.analytic[i].size();
  }
  c.rel_error = relative_error(a, n);
  return c;
}

namespace {

struct Rng {
  std::mt19937_64 gen;
  explicit Rng(std::uint64_t seed) : gen(seed) {}
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen); }
  Matrix normal(Index r, Index c, double sd = 1.0) {
    std::normal_distribution<double> n(0.0, sd);
    Matrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(gen);
    return m;
  }
  std::vector<int> labels(Index b, Index m) {
    std::vector<int> y(static_cast<std::size_t>(b));
    for (auto& v : y) v = integer(0, static_cast<int>(m) - 1);
    return y;
  }
  std::vector<long> counts(Index m) {
    std::vector<long> c(static_cast<std::size_t>(m));
    for (auto& v : c) v = integer(1, 50);
    return c;
  }
};

double bcl_instance(std::uint64_t seed) {
  Rng r(seed);
  const Index b = r.integer(2, 5), d = r.integer(2, 4), m = r.integer(2, 4);
  const auto labels = r.labels(b, m);
  loss::BclConfig cfg;
  cfg.tau = r.uniform(0.2, 1.0);
  cfg.alpha = r.uniform(0.05, 1.0);
  cfg.symmetrize_views = r.integer(0, 1) == 1;
  const auto f = [&](Tape&, std::span<const Var> v) {
    loss::ContrastViews views{ad::l2_normalize_rows(v[0]), ad::l2_normalize_rows(v[1]), v[2], v[3]};
    return ad::sum(loss::balanced_contrastive_loss(views, v[4], labels, cfg));
  };
  return compare(f, {r.normal(b, d), r.normal(b, d), r.normal(b, d), r.normal(b, d), r.normal(m, d, 0.5)}).rel_error;
}

double balanced_nll_instance(std::uint64_t seed) {
  Rng r(seed);
  const Index b = r.integer(1, 5), m = r.integer(2, 6);
  const auto labels = r.labels(b, m);
  const ClassPrior prior(r.counts(m));
  const loss::SupervisedConfig cfg{true, false, 1};
  const auto f = [&](Tape&, std::span<const Var> v) {
    return ad::sum(loss::individual_supervised_loss(v[0], labels, prior, cfg));
  };
  return compare(f, {r.normal(b, m, 2.0)}).rel_error;
}

double hard_nll_instance(std::uint64_t seed) {
  Rng r(seed);
  const Index b = r.integer(1, 5), m = r.integer(3, 7);
  const auto labels = r.labels(b, m);
  const ClassPrior prior(r.counts(m));
  const Index m_hard = r.integer(1, static_cast<int>(m) - 1);
  const Matrix logits = r.normal(b, m, 2.0);
  const Matrix mask = loss::hard_class_mask(logits, labels, m_hard);
  const auto f = [&](Tape&, std::span<const Var> v) {
    return ad::sum(loss::nll_rows(loss::add_log_prior(v[0], prior.log_counts()), labels, &mask));
  };
  return compare(f, {logits}).rel_error;
}

double fusion_instance(std::uint64_t seed) {
  Rng r(seed);
  const int k = r.integer(1, 4);
  const Index b = r.integer(1, 4), m = r.integer(2, 5);
  const auto labels = r.labels(b, m);
  const ClassPrior prior(r.counts(m));
  const loss::SupervisedConfig sup{true, true, std::max<Index>(1, m / 2)};
  ensemble::FusionConfig cfg;
  cfg.eta = r.uniform(0.1, 2.0);
  cfg.kappa = r.uniform(0.1, 1.0);
  cfg.similarity = r.integer(0, 1) ? GatingSimilarity::Cosine : GatingSimilarity::Dot;
  std::vector<Matrix> inputs;
  std::vector<Matrix> masks;
  for (int e = 0; e < k; ++e) {
    inputs.push_back(r.normal(b, m));
    masks.push_back(loss::hard_class_mask(inputs.back(), labels, sup.m_hard));
  }
  for (int e = 0; e < k; ++e) inputs.push_back(r.normal(1, m));
  for (int e = 0; e < k; ++e) inputs.push_back(r.normal(b, 1).cwiseAbs());
  const auto f = [&](Tape&, std::span<const Var> v) {
    std::vector<Var> logits(v.begin(), v.begin() + k), protos(v.begin() + k, v.begin() + 2 * k),
        contrast(v.begin() + 2 * k, v.begin() + 3 * k), supervised;
    for (int e = 0; e < k; ++e)
      supervised.push_back(loss::individual_supervised_loss(logits[static_cast<std::size_t>(e)], labels, prior, sup,
                                                            &masks[static_cast<std::size_t>(e)]));
    const Var w = ensemble::gating_weights(logits, protos, cfg);
    return ensemble::fusion_loss(supervised, contrast, w, cfg.eta).fusion;
  };
  return compare(f, inputs).rel_error;
}

ensemble::DistillConfig random_distill(Rng& r) {
  ensemble::DistillConfig d;
  d.beta1 = r.uniform(0.0, 2.0);
  d.beta2 = r.uniform(0.0, 2.0);
  d.epsilon = r.uniform(0.1, 1.0);
  d.hard_support = r.integer(0, 1) ? ensemble::HardSupport::FirstExpert : ensemble::HardSupport::Intersection;
  d.mode = r.integer(0, 3) == 0 ? ensemble::DistillMode::PlainKl : ensemble::DistillMode::Disentangled;
  return d;
}

double distill_instance(std::uint64_t seed) {
  Rng r(seed);
  const int k = r.integer(2, 4);
  const Index b = r.integer(1, 4), m = r.integer(2, 6);
  const auto labels = r.labels(b, m);
  const ClassPrior prior(r.counts(m));
  const bool use_prior = r.integer(0, 1) == 1;
  const ensemble::DistillConfig d = random_distill(r);
  const Index m_hard = r.integer(1, static_cast<int>(m) - 1);
  std::vector<Matrix> inputs, masks;
  for (int e = 0; e < k; ++e) {
    inputs.push_back(r.normal(b, m, 1.5));
    masks.push_back(loss::hard_class_mask(inputs.back(), labels, m_hard));
  }
  const auto f = [&](Tape&, std::span<const Var> v) {
    return ensemble::inter_expert_loss(v, labels, use_prior ? &prior.log_counts() : nullptr, masks, d);
  };
  return compare(f, inputs).rel_error;
}

double total_instance(std::uint64_t seed) {
  Rng r(seed);
  const int k = r.integer(1, 3);
  const Index b = r.integer(2, 4), m = r.integer(2, 4), dim = r.integer(2, 3);
  const auto labels = r.labels(b, m);
  const ClassPrior prior(r.counts(m));
  const loss::SupervisedConfig sup{true, true, 1};
  loss::BclConfig bcl;
  bcl.tau = r.uniform(0.3, 1.0);
  ensemble::FusionConfig fusion;
  fusion.kappa = r.uniform(0.2, 1.0);
  const ensemble::DistillConfig d = random_distill(r);
  // Per expert: logits, prototype, z1, z2, q1, anchors.
  std::vector<Matrix> inputs, masks;
  for (int e = 0; e < k; ++e) {
    inputs.push_back(r.normal(b, m));
    masks.push_back(loss::hard_class_mask(inputs.back(), labels, 1));
    inputs.push_back(r.normal(1, m));
    inputs.push_back(r.normal(b, dim));
    inputs.push_back(r.normal(b, dim));
    inputs.push_back(r.normal(b, dim));
    inputs.push_back(r.normal(m, dim, 0.5));
  }
  const auto f = [&](Tape&, std::span<const Var> v) {
    std::vector<Var> logits, protos, supervised, contrast;
    for (int e = 0; e < k; ++e) {
      const auto o = static_cast<std::size_t>(6 * e);
      logits.push_back(v[o]);
      protos.push_back(v[o + 1]);
      supervised.push_back(loss::individual_supervised_loss(v[o], labels, prior, sup, &masks[static_cast<std::size_t>(e)]));
      loss::ContrastViews views{ad::l2_normalize_rows(v[o + 2]), ad::l2_normalize_rows(v[o + 3]), v[o + 4], Var{}};
      contrast.push_back(loss::balanced_contrastive_loss(views, v[o + 5], labels, bcl));
    }
    const Var w = ensemble::gating_weights(logits, protos, fusion);
    const auto terms = ensemble::fusion_loss(supervised, contrast, w, fusion.eta);
    const Var inter = ensemble::inter_expert_loss(logits, labels, &prior.log_counts(), masks, d);
    return ensemble::total_loss(terms.fusion, inter, d.epsilon);
  };
  return compare(f, inputs).rel_error;
}

// Weighted sum that turns any matrix-valued op into a scalar with a generic gradient.
Var project_scalar(Tape& tape, const Var& out, std::uint64_t seed) {
  Rng r(seed ^ 0x9e37);
  return ad::sum(ad::mul(out, tape.constant(r.normal(out.rows(), out.cols()))));
}

Matrix away_from_zero(Rng& r, Index rows, Index cols) {
  Matrix m = r.normal(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] += m.data()[i] >= 0 ? 0.1 : -0.1;
  return m;
}

Case op_case(std::string name, std::function<double(Rng&, std::uint64_t)> body) {
  return {std::move(name), [body](std::uint64_t seed) {
            Rng r(seed);
            return body(r, seed);
          }};
}

}  // namespace

std::vector<Case> loss_cases() {
  return {
      {"contrastive", bcl_instance},    {"balanced-nll", balanced_nll_instance}, {"hard-class-nll", hard_nll_instance},
      {"gated-fusion", fusion_instance}, {"distillation", distill_instance},     {"total", total_instance},
  };
}

std::vector<Case> op_cases() {
  std::vector<Case> out;
  auto unary = [&](std::string name, std::function<Var(const Var&)> op, bool positive) {
    out.push_back(op_case(name, [op, positive](Rng& r, std::uint64_t seed) {
      const Index m = r.integer(1, 4), n = r.integer(1, 4);
      Matrix x = away_from_zero(r, m, n);
      if (positive) x = x.cwiseAbs();
      return compare([&](Tape& t, std::span<const Var> v) { return project_scalar(t, op(v[0]), seed); }, {x}).rel_error;
    }));
  };
  unary("relu", [](const Var& a) { return ad::relu(a); }, false);
  unary("exp", [](const Var& a) { return ad::exp(a); }, false);
  unary("log", [](const Var& a) { return ad::log(a); }, true);
  unary("transpose", [](const Var& a) { return ad::transpose(a); }, false);
  unary("scale", [](const Var& a) { return ad::scale(a, -1.7); }, false);
  unary("l2-normalize", [](const Var& a) { return ad::l2_normalize_rows(a); }, false);
  unary("sum-rows", [](const Var& a) { return ad::sum_rows(a); }, false);
  unary("mean", [](const Var& a) { return ad::mean(a); }, false);
  unary("row-logsumexp", [](const Var& a) { return ad::row_logsumexp(a); }, false);

  auto binary = [&](std::string name, std::function<Var(const Var&, const Var&)> op, int kind) {
    out.push_back(op_case(name, [op, kind](Rng& r, std::uint64_t seed) {
      const Index m = r.integer(1, 4), n = r.integer(1, 4), p = r.integer(1, 4);
      Matrix a = r.normal(m, n), b;
      switch (kind) {
        case 0: b = r.normal(m, n); break;      // same shape
        case 1: b = r.normal(n, p); break;      // matmul
        case 2: b = r.normal(1, n); break;      // row vector
        default: b = r.normal(m, 1); break;     // column vector
      }
      return compare([&](Tape& t, std::span<const Var> v) { return project_scalar(t, op(v[0], v[1]), seed); }, {a, b})
          .rel_error;
    }));
  };
  binary("add", [](const Var& a, const Var& b) { return ad::add(a, b); }, 0);
  binary("sub", [](const Var& a, const Var& b) { return ad::sub(a, b); }, 0);
  binary("mul", [](const Var& a, const Var& b) { return ad::mul(a, b); }, 0);
  binary("dot-rows", [](const Var& a, const Var& b) { return ad::dot_rows(a, b); }, 0);
  binary("matmul", [](const Var& a, const Var& b) { return ad::matmul(a, b); }, 1);
  binary("add-rowvec", [](const Var& a, const Var& b) { return ad::add_rowvec(a, b); }, 2);
  binary("sub-colvec", [](const Var& a, const Var& b) { return ad::sub_colvec(a, b); }, 3);
  binary("concat-rows", [](const Var& a, const Var& b) {
    const Var parts[] = {a, b, a};
    return ad::concat_rows(parts);
  }, 0);
  binary("concat-cols", [](const Var& a, const Var& b) {
    const Var parts[] = {b, a};
    return ad::concat_cols(parts);
  }, 3);

  out.push_back(op_case("masked-logsumexp", [](Rng& r, std::uint64_t seed) {
    const Index m = r.integer(1, 4), n = r.integer(2, 5);
    Matrix keep(m, n);
    for (Index i = 0; i < keep.size(); ++i) keep.data()[i] = r.integer(0, 1);
    return compare([&](Tape& t, std::span<const Var> v) { return project_scalar(t, ad::row_logsumexp(v[0], keep), seed); },
                   {r.normal(m, n)})
        .rel_error;
  }));
  out.push_back(op_case("logsumexp-prior", [](Rng& r, std::uint64_t seed) {
    const Index m = r.integer(1, 4), n = r.integer(2, 5);
    const Vector prior = r.normal(n, 1);
    return compare(
               [&](Tape& t, std::span<const Var> v) { return project_scalar(t, ad::log_sum_exp_with_prior(v[0], prior), seed); },
               {r.normal(m, n)})
        .rel_error;
  }));
  out.push_back(op_case("gather-scatter", [](Rng& r, std::uint64_t seed) {
    const Index m = r.integer(1, 5), n = r.integer(1, 3), rows = r.integer(1, 7), groups = r.integer(1, 4);
    std::vector<Index> idx(static_cast<std::size_t>(rows)), grp(static_cast<std::size_t>(rows));
    for (auto& i : idx) i = r.integer(0, static_cast<int>(m) - 1);
    for (auto& g : grp) g = r.integer(0, static_cast<int>(groups) - 1);
    return compare(
               [&](Tape& t, std::span<const Var> v) {
                 return project_scalar(t, ad::scatter_mean(ad::gather_rows(v[0], idx), grp, groups), seed);
               },
               {r.normal(m, n)})
        .rel_error;
  }));
  out.push_back(op_case("expert-forward", [](Rng& r, std::uint64_t seed) {
    nn::ExpertShape shape;
    shape.input_dim = r.integer(2, 4);
    shape.hidden = r.integer(3, 5);
    shape.z_dim = 3;
    shape.layers = r.integer(1, 2);
    shape.classes = r.integer(2, 4);
    nn::ExpertParams p = nn::ExpertParams::init(shape, seed);
    std::vector<data::Graph> graphs(static_cast<std::size_t>(r.integer(1, 3)));
    for (auto& g : graphs) {
      g.num_nodes = r.integer(2, 5);
      for (Index u = 1; u < g.num_nodes; ++u) g.edges.push_back({r.integer(0, static_cast<int>(u) - 1), u});
      g.x = r.normal(g.num_nodes, shape.input_dim);
    }
    const nn::GraphBatch batch = nn::GraphBatch::build(std::span<const data::Graph>(graphs));
    const auto params = p.parameters();
    std::vector<Matrix> inputs;
    // Random biases keep projection rows away from the zero vector, where normalization has no derivative.
    for (const auto* q : params) inputs.push_back(q->value + r.normal(q->value.rows(), q->value.cols(), 0.3));
    return compare(
               [&](Tape& t, std::span<const Var> v) {
                 // Rebuild the expert from leaves in parameters() order.
                 std::size_t at = 0;
                 nn::ExpertVars ev;
                 ev.shape = &p.shape;
                 for (int l = 0; l < shape.layers; ++l) {
                   ev.encoder.push_back({v[at], v[at + 1], v[at + 2]});
                   at += 3;
                 }
                 ev.proj_w1 = v[at++];
                 ev.proj_b1 = v[at++];
                 ev.proj_w2 = v[at++];
                 ev.proj_b2 = v[at++];
                 ev.cls_w1 = v[at++];
                 ev.cls_b1 = v[at++];
                 ev.cls_w2 = v[at++];
                 ev.cls_b2 = v[at++];
                 ev.anchors = v[at++];
                 ev.prototype = v[at++];
                 const Var h = nn::encode(ev, t, batch);
                 return ad::add(project_scalar(t, nn::classify(ev, h), seed),
                                project_scalar(t, nn::project(ev, h), seed + 1));
               },
               inputs)
        .rel_error;
  }));
  return out;
}

Report run_case(const Case& c, int instances, std::uint64_t seed, double tolerance) {
  Report rep;
  rep.name = c.name;
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < instances; ++i) {
    const double e = c.instance(hash_seed(seed, static_cast<std::uint64_t>(i)));
    rep.max_rel_error = std::max(rep.max_rel_error, e);
    if (!(e < tolerance)) ++rep.failures;
    ++rep.instances;
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace tailgraph::gradcheck
