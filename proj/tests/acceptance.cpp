// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include "oracles.hpp"
#include "tailgraph/ablation.hpp"
#include "tailgraph/ensemble.hpp"
#include "tailgraph/gradcheck.hpp"
#include "tailgraph/graph.hpp"
#include "tailgraph/kernels.hpp"
#include "tailgraph/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

using namespace tailgraph;
using namespace tailgraph::train;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, const std::string& title, bool ok, const std::string& detail) {
  std::printf("%s %d %s: %s\n", ok ? "PASS" : "FAIL", id, title.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

Splits motif(std::uint64_t seed) {
  MotifSplitSpec spec;
  spec.corpus.seed = seed;
  spec.corpus.noise = 0.1;
  spec.corpus.per_class = 60;
  spec.imbalance_factor = 20;
  return motif_splits(spec);
}

// Desk-scale settings shared by the end-to-end criteria.
TrainConfig desk_config() {
  TrainConfig c;
  c.learning_rate = 0.005;
  c.epochs = 150;
  c.patience = 50;
  c.hidden = 32;
  c.z_dim = 32;
  return c;
}

Vector random_simplex(Index n, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(0.7, 1.0);
  Vector p(n);
  for (Index j = 0; j < n; ++j) p(j) = g(rng) + 1e-9;
  return p / p.sum();
}

void gradient_suite() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::ostringstream out;
  double worst = 0;
  for (const auto& c : gradcheck::loss_cases()) {
    const auto r = gradcheck::run_case(c, 60, 2024, 1e-4);
    ok = ok && r.failures == 0 && r.instances >= 50;
    worst = std::max(worst, r.max_rel_error);
    if (r.failures) out << c.name << " failed " << r.failures << "/" << r.instances << "; ";
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 60;
  out << "6 loss kernels x 60 instances, max rel error " << worst << ", " << secs << " s";
  report(1, "gradient suite", ok, out.str());
}

void kl_identity() {
  std::mt19937_64 rng(10);
  double worst = 0;
  for (int t = 0; t < 1000; ++t) {
    const Index m = 2 + static_cast<Index>(t % 11);
    const auto d = kl_decomposition_check(random_simplex(m, rng), random_simplex(m, rng), static_cast<Index>(t % m));
    worst = std::max(worst, std::abs(d.lhs - d.rhs));
  }
  // The inter-expert loss in plain mode against the sum of ordinary KLs over ordered pairs.
  double inter_gap = 0;
  std::normal_distribution<double> nd(0.0, 2.0);
  for (int t = 0; t < 50; ++t) {
    const Index b = 4, m = 6;
    const int k = 2 + t % 3;
    ad::Tape tape;
    std::vector<ad::Var> logits;
    for (int e = 0; e < k; ++e) {
      Matrix o(b, m);
      for (Index i = 0; i < o.size(); ++i) o.data()[i] = nd(rng);
      logits.push_back(tape.constant(o));
    }
    std::vector<int> labels(static_cast<std::size_t>(b));
    for (Index i = 0; i < b; ++i) labels[static_cast<std::size_t>(i)] = static_cast<int>((i + t) % m);
    Vector log_prior(m);
    for (Index j = 0; j < m; ++j) log_prior(j) = std::log(static_cast<double>(30 / (j + 1)));
    ensemble::DistillConfig cfg;
    cfg.mode = ensemble::DistillMode::PlainKl;
    cfg.hard_term = false;
    const double loss = ensemble::inter_expert_loss(logits, labels, &log_prior, {}, cfg).scalar();
    std::vector<long> counts;
    for (Index j = 0; j < m; ++j) counts.push_back(30 / (j + 1));
    const ClassPrior prior(counts);
    long double ref = 0;
    for (int a = 0; a < k; ++a)
      for (int q = 0; q < k; ++q) {
        if (a == q) continue;
        for (Index i = 0; i < b; ++i) {
          const Vector pa = balanced_probability(logits[static_cast<std::size_t>(a)].value().row(i).transpose(), prior);
          const Vector pq = balanced_probability(logits[static_cast<std::size_t>(q)].value().row(i).transpose(), prior);
          ref += oracle::kl(std::vector<long double>(pa.data(), pa.data() + m),
                            std::vector<long double>(pq.data(), pq.data() + m));
        }
      }
    inter_gap = std::max(inter_gap, std::abs(loss - static_cast<double>(ref / b)));
  }
  std::ostringstream out;
  out << "max split gap " << worst << " over 1000 triples; max plain-mode gap " << inter_gap;
  report(2, "KL split identity", worst < 1e-12 && inter_gap < 1e-10, out.str());
}

void simplex_minimizer() {
  double worst = 0;
  for (int w : {1, 2, 5})
    for (double alpha : {0.05, 0.5, 1.0}) {
      std::vector<double> weights(static_cast<std::size_t>(w), alpha);
      weights.push_back(1.0);
      weights.insert(weights.end(), 4, 0.0);
      const auto p = oracle::simplex_minimizer(weights);
      const double pair = alpha / (alpha * w + 1), anchor = 1 / (alpha * w + 1);
      for (int q = 0; q < w; ++q) worst = std::max(worst, std::abs(p[static_cast<std::size_t>(q)] - pair));
      worst = std::max(worst, std::abs(p[static_cast<std::size_t>(w)] - anchor));
    }
  double supcon = 0;
  for (int w : {1, 2, 5}) {
    std::vector<double> weights(static_cast<std::size_t>(w), 1.0);
    weights.insert(weights.end(), 4, 0.0);
    const auto p = oracle::simplex_minimizer(weights);
    for (int q = 0; q < w; ++q) supcon = std::max(supcon, std::abs(p[static_cast<std::size_t>(q)] - 1.0 / w));
  }
  std::ostringstream out;
  out << "weighted max error " << worst << ", unweighted max error " << supcon;
  report(3, "contrastive minimizer", worst < 1e-3 && supcon < 1e-3, out.str());
}

void degeneracy() {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> nd(0.0, 5.0);
  double prob_gap = 0;
  for (int t = 0; t < 1000; ++t) {
    Vector o(7);
    for (Index j = 0; j < 7; ++j) o(j) = nd(rng);
    prob_gap = std::max(prob_gap, (balanced_probability(o, ClassPrior(std::vector<long>(7, 12))) - softmax(o))
                                      .cwiseAbs()
                                      .maxCoeff());
  }
  MotifSplitSpec spec;
  spec.corpus.noise = 0.1;
  spec.imbalance_factor = 1.0;
  const Splits s = motif_splits(spec);
  std::vector<long> counts(5, 0);
  for (const auto& g : s.train) ++counts[static_cast<std::size_t>(g.label)];
  const ClassPrior prior(counts);
  TrainConfig c = desk_config();
  ResolvedConfig on = resolve(c, 5), off = on;
  off.switches.bpp = false;
  nn::ExpertShape shape;
  shape.input_dim = s.train[0].feature_dim();
  shape.hidden = c.hidden;
  shape.z_dim = c.z_dim;
  shape.classes = 5;
  std::vector<std::size_t> batch(32);
  std::iota(batch.begin(), batch.end(), 0);
  nn::ExpertBank b1 = nn::make_bank(3, shape, 5), b2 = nn::make_bank(3, shape, 5);
  ad::Tape t1, t2;
  const auto a = build_step(t1, b1, on, prior, s.train, batch, 0);
  const auto b = build_step(t2, b2, off, prior, s.train, batch, 0);
  const double step_gap = std::abs(a.values.total - b.values.total);
  std::ostringstream out;
  out << "probability gap " << prob_gap << ", step-0 loss gap " << step_gap;
  report(4, "equal-count degeneracy", prob_gap < 1e-12 && step_gap < 1e-10, out.str());
}

void zipf_builder() {
  const auto sizes = data::zipf_class_sizes(100, 10, 100);
  const bool exact = sizes == std::vector<long>{100, 25, 11, 6, 4, 3, 2, 2, 1, 1};
  const double realized = static_cast<double>(sizes.front()) / static_cast<double>(sizes.back());
  bool monotone = true;
  int splits = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    data::MotifSpec corpus;
    corpus.seed = seed;
    corpus.noise = 0.1;
    corpus.per_class = 100;
    corpus.num_classes = 10;
    const auto graphs = data::generate_motif_corpus(corpus);
    for (double f : {1.0, 5.0, 20.0, 100.0}) {
      data::LongTailSpec lt;
      lt.imbalance_factor = f;
      lt.seed = seed;
      monotone = monotone && data::make_long_tailed(graphs, lt).stats.is_monotone();
      ++splits;
    }
    monotone = monotone && data::compute_stats(motif(seed).train).is_monotone();
    ++splits;
  }
  std::ostringstream out;
  out << "sizes " << (exact ? "match" : "differ") << ", realized imbalance " << realized << ", " << splits
      << " splits monotone: " << (monotone ? "yes" : "no");
  report(5, "long-tail builder", exact && std::abs(realized - 100) < 1e-9 && monotone, out.str());
}

std::string group_text(const std::array<std::optional<double>, 3>& g) {
  std::ostringstream s;
  s.precision(3);
  s << "head " << g[0].value_or(NAN) << " medium " << g[1].value_or(NAN) << " tail " << g[2].value_or(NAN);
  return s.str();
}

void end_to_end() {
  const std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  const auto t0 = Clock::now();
  const std::vector<Variant> variants{
      {"M1", parse_switches("contrast=none,hcm=off,gating=off,distill=off,bpp=on")},
      {"M3", parse_switches("contrast=balanced,hcm=off,gating=off,distill=off,bpp=on")},
      {"M4", parse_switches("contrast=balanced,hcm=on,gating=off,distill=off,bpp=on")},
      {"M7", Switches{}},
  };
  const auto rows = run_ablation(desk_config(), variants, seeds, motif);
  const double ablation_secs = seconds_since(t0);

  // The full-switch row is the come method; train the single-expert baseline on the same seeds.
  const auto t1 = Clock::now();
  double ce_acc = 0;
  std::array<double, 3> ce_group{};
  for (auto seed : seeds) {
    TrainConfig c = desk_config();
    c.method = Method::CeBaseline;
    c.seed = seed;
    const TrainResult r = train::train(c, motif(seed));
    if (!r.converged) throw std::runtime_error("ce-baseline did not converge: " + r.failure);
    ce_acc += r.test->accuracy / seeds.size();
    for (int g = 0; g < 3; ++g) ce_group[static_cast<std::size_t>(g)] += r.test->group[static_cast<std::size_t>(g)].value_or(0) / seeds.size();
  }
  const auto& come = rows[3];
  const double come_secs = ablation_secs / 4 + seconds_since(t1);
  std::array<double, 3> gain{};
  for (std::size_t g = 0; g < 3; ++g) gain[g] = come.mean_group[g].value_or(0) - ce_group[g];
  const bool tail_largest = gain[2] >= gain[0] && gain[2] >= gain[1];
  const double margin = come.mean_accuracy - ce_acc;
  std::ostringstream out6;
  out6.precision(4);
  out6 << "come " << come.mean_accuracy << " vs ce " << ce_acc << " (" << std::showpos << 100 * margin << std::noshowpos << " points); gains head "
       << gain[0] << " medium " << gain[1] << " tail " << gain[2] << "; " << come_secs << " s";
  report(6, "come beats the ce baseline", margin >= 0.05 && tail_largest && come_secs < 600, out6.str());

  const double d13 = rows[1].mean_accuracy - rows[0].mean_accuracy;
  const double d47 = rows[3].mean_accuracy - rows[2].mean_accuracy;
  std::ostringstream out7;
  out7.precision(4);
  for (const auto& r : rows) out7 << r.variant.name << " " << r.mean_accuracy << " (" << group_text(r.mean_group) << "); ";
  out7 << "M1->M3 " << d13 << ", M4->M7 " << d47;
  report(7, "ablation direction", d13 >= 0 && d47 >= 0, out7.str());
}

void determinism() {
  const Splits s = motif(21);
  TrainConfig c = desk_config();
  c.epochs = 5;
  c.seed = 21;
  const TrainResult a = train::train(c, s), b = train::train(c, s);
  bool same = a.converged && b.converged && a.history.size() == b.history.size() &&
              a.step_losses.size() == b.step_losses.size();
  for (std::size_t i = 0; same && i < a.step_losses.size(); ++i) same = a.step_losses[i].total == b.step_losses[i].total;
  same = same && a.test->accuracy == b.test->accuracy && a.test->nll == b.test->nll;

  const auto file = std::filesystem::temp_directory_path() / "tailgraph_acceptance_ckpt.json";
  nn::save_checkpoint(file, a.bank, "{}");
  const nn::ExpertBank back = nn::load_checkpoint(file);
  bool exact = back.size() == a.bank.size();
  for (std::size_t k = 0; exact && k < back.size(); ++k) {
    const auto p = a.bank[k].parameters();
    const auto q = back[k].parameters();
    for (std::size_t i = 0; i < p.size(); ++i) exact = exact && p[i]->value == q[i]->value;
  }
  const Metrics m = evaluate(back, s.test, a.train_counts);
  exact = exact && m.accuracy == a.test->accuracy && m.nll == a.test->nll && m.per_class.size() == a.test->per_class.size();
  std::filesystem::remove(file);
  std::ostringstream out;
  out << "repeat run " << (same ? "identical" : "differs") << ", checkpoint " << (exact ? "bit-exact" : "differs");
  report(8, "determinism and checkpoint", same && exact, out.str());
}

template <typename F>
void guarded(int id, const char* title, F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    report(id, title, false, std::string("exception: ") + e.what());
  }
}

}  // namespace

int main() {
  guarded(1, "gradient suite", gradient_suite);
  guarded(2, "KL split identity", kl_identity);
  guarded(3, "contrastive minimizer", simplex_minimizer);
  guarded(4, "equal-count degeneracy", degeneracy);
  guarded(5, "long-tail builder", zipf_builder);
  try {
    end_to_end();
  } catch (const std::exception& e) {
    report(6, "come beats the ce baseline", false, std::string("exception: ") + e.what());
    report(7, "ablation direction", false, std::string("exception: ") + e.what());
  }
  guarded(8, "determinism and checkpoint", determinism);
  std::printf("%d of 8 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
