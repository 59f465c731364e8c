#include "tailgraph/ablation.hpp"
#include "tailgraph/trainer.hpp"

#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <numeric>
#include <random>

using namespace tailgraph;
using namespace tailgraph::train;

namespace {

Splits small_splits(std::uint64_t seed, double noise = 0.1, double imbalance = 20) {
  MotifSplitSpec spec;
  spec.corpus.seed = seed;
  spec.corpus.noise = noise;
  spec.imbalance_factor = imbalance;
  return motif_splits(spec);
}

TrainConfig quick_config() {
  TrainConfig c;
  c.learning_rate = 0.005;
  c.epochs = 3;
  c.patience = 3;
  c.hidden = 16;
  c.z_dim = 16;
  return c;
}

bool same_metrics(const Metrics& a, const Metrics& b) {
  if (a.accuracy != b.accuracy || a.nll != b.nll || a.samples != b.samples) return false;
  for (std::size_t j = 0; j < a.per_class.size(); ++j)
    if (!(a.per_class[j] == b.per_class[j] || (std::isnan(a.per_class[j]) && std::isnan(b.per_class[j])))) return false;
  return a.group == b.group;
}

}  // namespace

TEST_CASE("config parsing and overrides") {
  const TrainConfig c = config_from_json_text(R"({
    // comment
    "method": "ce-baseline", "experts": 4, "learning_rate": 0.01, "tau": 0.5,
    "contrast": "supervised", "gating": false, "augmentations": "mask+drop,drop+perturb"
  })");
  CHECK(c.method == Method::CeBaseline);
  CHECK(c.experts == 4);
  CHECK(c.learning_rate == 0.01);
  CHECK(c.bcl.tau == 0.5);
  CHECK(c.switches.contrast == ContrastSwitch::Supervised);
  CHECK_FALSE(c.switches.gating);
  CHECK(c.view_pairs.size() == 2);

  TrainConfig d;
  apply_override(d, "epochs=7");
  apply_override(d, "method=supcon");
  apply_override(d, "distill=plain");
  CHECK(d.epochs == 7);
  CHECK(d.method == Method::SupconBaseline);
  CHECK(d.switches.distill == DistillSwitch::PlainKl);
  CHECK_THROWS_AS(apply_override(d, "no_such_key=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(d, "epochs"), ConfigError);
  TrainConfig bad;
  apply_override(bad, "learning_rate=-1");
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(config_from_json_text(R"({"experts": 0})"), ConfigError);

  const TrainConfig back = config_from_json_text(config_to_json(c));
  CHECK(back.method == c.method);
  CHECK(back.switches == c.switches);
  CHECK(back.view_pairs.size() == 2);
  CHECK_NOTHROW(config_from_json_text(default_config_text()));

  ::setenv(kSeedEnvVar, "1234", 1);
  apply_seed_env(d);
  CHECK(d.seed == 1234u);
  ::setenv(kSeedEnvVar, "x", 1);
  CHECK_THROWS_AS(apply_seed_env(d), ConfigError);
  ::unsetenv(kSeedEnvVar);
}

TEST_CASE("switch strings") {
  const Switches s = parse_switches("contrast=unsupervised,hcm=off,bpp=off");
  CHECK(s.contrast == ContrastSwitch::Unsupervised);
  CHECK_FALSE(s.hcm);
  CHECK(s.gating);
  CHECK(parse_switches(to_string(s)) == s);
  CHECK_THROWS_AS(parse_switches("bogus=on"), ConfigError);
  CHECK_THROWS_AS(parse_switches("hcm=maybe"), ConfigError);
  CHECK_THROWS_AS(parse_variant("M9:colour=red"), ConfigError);
  CHECK(parse_variant("base:bpp=on").switches.contrast == ContrastSwitch::None);
}

TEST_CASE("resolved configurations of the baselines") {
  TrainConfig c;
  c.method = Method::CeBaseline;
  const auto ce = resolve(c, 5);
  CHECK(ce.experts == 1);
  CHECK(ce.switches.contrast == ContrastSwitch::None);
  CHECK_FALSE(ce.switches.bpp);
  c.method = Method::OversampleBaseline;
  CHECK(resolve(c, 5).oversample);
  c.method = Method::SupconBaseline;
  CHECK(resolve(c, 5).switches.contrast == ContrastSwitch::Supervised);
  c.method = Method::Come;
  const auto come = resolve(c, 5);
  CHECK(come.experts == 3);
  CHECK(come.m_hard == 2);
  CHECK(come.view_pairs.size() == 3);
  CHECK(resolve(c, 2).m_hard == 1);
}

TEST_CASE("scoring and class groups") {
  const std::vector<long> counts{40, 11, 5, 3, 2};
  const auto groups = class_groups(counts);
  CHECK(groups == std::vector<Group>{Group::Head, Group::Head, Group::Medium, Group::Tail, Group::Tail});
  const std::vector<long> three{9, 30, 1};
  CHECK(class_groups(three) == std::vector<Group>{Group::Medium, Group::Head, Group::Tail});

  const std::vector<int> labels{0, 0, 1, 1, 2, 2, 3, 4};
  const Metrics all = score(labels, labels, counts, 5);
  CHECK(all.accuracy == 1.0);
  for (const auto& g : all.group) CHECK(g.value() == 1.0);

  const std::vector<int> y3{0, 0, 1, 1, 2, 2, 2}, p3{0, 1, 1, 1, 0, 2, 2};
  const Metrics m3 = score(p3, y3, three, 3);
  CHECK(*m3.group[0] == m3.per_class[1]);
  CHECK(*m3.group[1] == m3.per_class[0]);
  CHECK(*m3.group[2] == m3.per_class[2]);
  CHECK(m3.accuracy == doctest::Approx(5.0 / 7.0));

  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> pick(0, 4);
  std::vector<int> y, p;
  for (int i = 0; i < 5000; ++i) {
    y.push_back(i % 5);
    p.push_back(pick(rng));
  }
  const double se = std::sqrt(0.2 * 0.8 / 5000.0);
  CHECK(std::abs(score(p, y, counts, 5).accuracy - 0.2) < 4 * se);

  CHECK_THROWS_AS(score({}, {}, counts, 5), DataError);
  nn::ExpertShape shape;
  shape.input_dim = 7;
  shape.classes = 5;
  CHECK_THROWS_AS(evaluate(nn::make_bank(1, shape, 0), {}, counts), DataError);
}

TEST_CASE("equal counts: prior-weighted step equals the plain softmax step") {
  Splits s = small_splits(3, 0.1, 1.0);
  std::vector<long> counts(5, 0);
  for (const auto& g : s.train) ++counts[static_cast<std::size_t>(g.label)];
  REQUIRE(std::adjacent_find(counts.begin(), counts.end(), std::not_equal_to<>()) == counts.end());
  const ClassPrior prior(counts);
  TrainConfig c = quick_config();
  ResolvedConfig on = resolve(c, 5), off = on;
  off.switches.bpp = false;
  nn::ExpertShape shape;
  shape.input_dim = s.train[0].feature_dim();
  shape.hidden = c.hidden;
  shape.z_dim = c.z_dim;
  shape.classes = 5;
  std::vector<std::size_t> batch(32);
  std::iota(batch.begin(), batch.end(), 0);
  nn::ExpertBank b1 = nn::make_bank(3, shape, 9), b2 = nn::make_bank(3, shape, 9);
  ad::Tape t1, t2;
  const auto a = build_step(t1, b1, on, prior, s.train, batch, 0);
  const auto b = build_step(t2, b2, off, prior, s.train, batch, 0);
  CHECK(std::abs(a.values.total - b.values.total) < 1e-10);
  CHECK(std::abs(a.values.inter - b.values.inter) < 1e-10);
}

TEST_CASE("one small Adam step decreases the loss on a frozen batch") {
  Splits s = small_splits(4);
  std::vector<long> counts(5, 0);
  for (const auto& g : s.train) ++counts[static_cast<std::size_t>(g.label)];
  const ClassPrior prior(counts);
  TrainConfig c = quick_config();
  const ResolvedConfig rc = resolve(c, 5);
  nn::ExpertShape shape;
  shape.input_dim = s.train[0].feature_dim();
  shape.hidden = c.hidden;
  shape.z_dim = c.z_dim;
  shape.classes = 5;
  std::vector<std::size_t> batch(s.train.size());
  std::iota(batch.begin(), batch.end(), 0);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    nn::ExpertBank bank = nn::make_bank(3, shape, seed);
    auto params = bank_parameters(bank);
    Adam adam(1e-5);
    ad::Tape tape;
    const auto before = build_step(tape, bank, rc, prior, s.train, batch, 0);
    for (auto* p : params) p->zero_grad();
    tape.backward(before.total);
    adam.step(params);
    ad::Tape again;
    const auto after = build_step(again, bank, rc, prior, s.train, batch, 0);
    CHECK(after.values.total < before.values.total);
  }
}

TEST_CASE("step time grows linearly in the number of experts") {
  Splits s = small_splits(5);
  std::vector<long> counts(5, 0);
  for (const auto& g : s.train) ++counts[static_cast<std::size_t>(g.label)];
  const ClassPrior prior(counts);
  TrainConfig c;
  c.hidden = 32;
  c.z_dim = 32;
  std::vector<std::size_t> batch(32);
  std::iota(batch.begin(), batch.end(), 0);
  std::vector<double> ks, ts;
  for (int k = 1; k <= 4; ++k) {
    c.experts = k;
    const ResolvedConfig rc = resolve(c, 5);
    nn::ExpertShape shape;
    shape.input_dim = s.train[0].feature_dim();
    shape.hidden = c.hidden;
    shape.z_dim = c.z_dim;
    shape.classes = 5;
    nn::ExpertBank bank = nn::make_bank(k, shape, 1);
    std::vector<double> reps;
    for (int r = 0; r < 7; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      ad::Tape tape;
      const auto step = build_step(tape, bank, rc, prior, s.train, batch, static_cast<std::uint64_t>(r));
      tape.backward(step.total);
      reps.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    std::nth_element(reps.begin(), reps.begin() + 3, reps.end());
    ks.push_back(k);
    ts.push_back(reps[3]);
  }
  const double mk = std::accumulate(ks.begin(), ks.end(), 0.0) / 4, mt = std::accumulate(ts.begin(), ts.end(), 0.0) / 4;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    sxy += (ks[i] - mk) * (ts[i] - mt);
    sxx += (ks[i] - mk) * (ks[i] - mk);
    syy += (ts[i] - mt) * (ts[i] - mt);
  }
  const double r2 = sxy * sxy / (sxx * syy);
  MESSAGE("step seconds by K: " << ts[0] << " " << ts[1] << " " << ts[2] << " " << ts[3] << "  R^2 " << r2);
  CHECK(sxy > 0);
  CHECK(r2 > 0.95);
}

TEST_CASE("training is deterministic and checkpoints reproduce metrics") {
  const Splits s = small_splits(6);
  const TrainConfig c = quick_config();
  const TrainResult a = train::train(c, s), b = train::train(c, s);
  REQUIRE(a.converged);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t e = 0; e < a.history.size(); ++e) {
    CHECK(a.history[e].mean_loss.total == b.history[e].mean_loss.total);
    CHECK(a.history[e].val_accuracy == b.history[e].val_accuracy);
  }
  CHECK(same_metrics(*a.test, *b.test));
  CHECK(a.step_losses.size() == b.step_losses.size());

  const auto file = std::filesystem::temp_directory_path() / "tailgraph_harness_ckpt.json";
  nn::save_checkpoint(file, a.bank, "{}");
  const nn::ExpertBank back = nn::load_checkpoint(file);
  CHECK(same_metrics(evaluate(back, s.test, a.train_counts), *a.test));
}

TEST_CASE("oversampling balances every class") {
  const Splits s = small_splits(7);
  const auto over = oversample(s.train, 5, 1);
  std::vector<long> counts(5, 0);
  for (const auto& g : over) ++counts[static_cast<std::size_t>(g.label)];
  for (long n : counts) CHECK(n == counts[0]);
  CHECK(counts[0] == 40);
}

TEST_CASE("baselines train end to end") {
  const Splits s = small_splits(8);
  TrainConfig c = quick_config();
  c.epochs = 2;
  for (Method m : {Method::CeBaseline, Method::OversampleBaseline, Method::SupconBaseline}) {
    c.method = m;
    const TrainResult r = train::train(c, s);
    CHECK(r.converged);
    CHECK(r.bank.size() == 1);
    CHECK(r.test.has_value());
  }
}

TEST_CASE("noise-free motif classes are separable") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Splits s = small_splits(seed, 0.0, 1.0);
    TrainConfig c;
    c.method = Method::CeBaseline;
    c.learning_rate = 0.005;
    c.epochs = 150;
    c.hidden = 32;
    c.z_dim = 32;
    c.seed = seed;
    const TrainResult r = train::train(c, s);
    REQUIRE(r.converged);
    CHECK(r.test->accuracy >= 0.95);
  }
}

TEST_CASE("ablation with every switch on reproduces a direct run") {
  TrainConfig c = quick_config();
  c.epochs = 2;
  const Variant full{"full", Switches{}};
  const std::uint64_t seeds[] = {11};
  const auto rows = run_ablation(c, std::span<const Variant>(&full, 1), seeds,
                                 [](std::uint64_t seed) { return small_splits(seed); });
  REQUIRE(rows.size() == 1);
  c.seed = 11;
  const TrainResult direct = train::train(c, small_splits(11));
  CHECK(same_metrics(rows[0].runs[0], *direct.test));
  CHECK(rows[0].delta == 0.0);
  const auto csv = ablation_csv(rows);
  CHECK(csv.rfind("variant,switches,seeds,accuracy,delta,head,medium,tail", 0) == 0);

  const auto table = table_variants();
  REQUIRE(table.size() == 7);
  CHECK(table[0].switches == parse_switches("contrast=none,hcm=off,gating=off,distill=off,bpp=on"));
  CHECK(table[6].switches == Switches{});
}
