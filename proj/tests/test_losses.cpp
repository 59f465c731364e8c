#include "oracles.hpp"
#include "tailgraph/kernels.hpp"
#include "tailgraph/losses.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace tailgraph;
using ad::Tape;

namespace {

Matrix unit_rows(std::initializer_list<Index> axes, Index dim) {
  Matrix m = Matrix::Zero(static_cast<Index>(axes.size()), dim);
  Index r = 0;
  for (Index a : axes) m(r++, a) = 1.0;
  return m;
}

Matrix random_matrix(Index r, Index c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

}  // namespace

TEST_CASE("contrastive loss with uniform scores and only the anchor positive is ln 5") {
  // B = 2 with distinct labels: 3 view candidates plus 2 anchors, every dot product zero.
  const Matrix z1 = unit_rows({0, 1}, 4), z2 = unit_rows({2, 3}, 4);
  const Matrix h1 = unit_rows({2, 3}, 4), anchors = unit_rows({0, 1}, 4);
  const int labels[] = {0, 1};
  loss::BclConfig cfg;
  cfg.tau = 1.0;
  cfg.alpha = 0.0;
  Tape tape;
  const loss::ContrastViews views{tape.constant(z1), tape.constant(z2), tape.constant(h1), {}};
  const auto c = loss::balanced_contrastive_loss(views, tape.constant(anchors), labels, cfg);
  CHECK(c.value()(0, 0) == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  CHECK(c.value()(1, 0) == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  CHECK(loss::balanced_contrastive_loss_single(0, z1, z2, h1, anchors, labels, cfg) ==
        doctest::Approx(std::log(5.0)).epsilon(1e-12));
  // The twin view has the same label, so a positive alpha adds alpha ln 5.
  cfg.alpha = 0.3;
  const auto c2 = loss::balanced_contrastive_loss(views, tape.constant(anchors), labels, cfg);
  CHECK(c2.value()(0, 0) == doctest::Approx(1.3 * std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("alpha = 0 leaves only the anchor term") {
  std::mt19937_64 rng(3);
  const int labels[] = {0, 1, 0, 2, 1};
  for (int trial = 0; trial < 20; ++trial) {
    Matrix z1 = random_matrix(5, 6, rng), z2 = random_matrix(5, 6, rng);
    z1.rowwise().normalize();
    z2.rowwise().normalize();
    const Matrix h1 = random_matrix(5, 6, rng), anchors = random_matrix(3, 6, rng);
    loss::BclConfig cfg;
    cfg.alpha = 0.0;
    Tape tape;
    const loss::ContrastViews views{tape.constant(z1), tape.constant(z2), tape.constant(h1), {}};
    const auto c = loss::balanced_contrastive_loss(views, tape.constant(anchors), labels, cfg);
    for (Index i = 0; i < 5; ++i) {
      // Direct evaluation: -log of the anchor's share of the candidate softmax.
      std::vector<double> s;
      for (Index j = 0; j < 10; ++j)
        if (j != i) s.push_back((j < 5 ? z1.row(j) : z2.row(j - 5)).dot(z1.row(i)) / cfg.tau);
      for (Index m = 0; m < 3; ++m) s.push_back(anchors.row(m).dot(h1.row(i)) / cfg.tau);
      double denom = 0;
      for (double v : s) denom += std::exp(v);
      const double anchor = anchors.row(labels[i]).dot(h1.row(i)) / cfg.tau;
      CHECK(c.value()(i, 0) == doctest::Approx(std::log(denom) - anchor).epsilon(1e-10));
      CHECK(loss::balanced_contrastive_loss_single(i, z1, z2, h1, anchors, labels, cfg) ==
            doctest::Approx(c.value()(i, 0)).epsilon(1e-12));
    }
  }
}

TEST_CASE("tape contrastive loss agrees with the direct single-query form") {
  std::mt19937_64 rng(4);
  const int labels[] = {2, 0, 2, 2, 1, 0};
  Matrix z1 = random_matrix(6, 5, rng), z2 = random_matrix(6, 5, rng);
  z1.rowwise().normalize();
  z2.rowwise().normalize();
  const Matrix h1 = random_matrix(6, 5, rng), anchors = random_matrix(3, 5, rng);
  loss::BclConfig cfg;
  Tape tape;
  const loss::ContrastViews views{tape.constant(z1), tape.constant(z2), tape.constant(h1), {}};
  const auto c = loss::balanced_contrastive_loss(views, tape.constant(anchors), labels, cfg);
  for (Index i = 0; i < 6; ++i)
    CHECK(c.value()(i, 0) == doctest::Approx(loss::balanced_contrastive_loss_single(i, z1, z2, h1, anchors, labels, cfg))
                                 .epsilon(1e-12));
}

TEST_CASE("invalid temperature is rejected") {
  loss::BclConfig cfg;
  cfg.tau = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("simplex minimizer matches the closed form") {
  SUBCASE("W = 3, alpha = 0.05") {
    std::vector<double> w(3, 0.05);
    w.push_back(1.0);
    w.insert(w.end(), 4, 0.0);
    const auto p = oracle::simplex_minimizer(w);
    CHECK(p[0] == doctest::Approx(0.05 / 1.15).epsilon(1e-4));
    CHECK(p[3] == doctest::Approx(1.0 / 1.15).epsilon(1e-4));
    CHECK(p[5] < 1e-6);
  }
  SUBCASE("unweighted, no anchors: every positive gets 1/W") {
    for (int wcount : {1, 2, 5}) {
      std::vector<double> w(static_cast<std::size_t>(wcount), 1.0);
      w.insert(w.end(), 3, 0.0);
      const auto p = oracle::simplex_minimizer(w);
      for (int k = 0; k < wcount; ++k) CHECK(p[static_cast<std::size_t>(k)] == doctest::Approx(1.0 / wcount).epsilon(1e-4));
    }
  }
}

TEST_CASE("weighted positives shrink the head/tail gap") {
  for (double alpha : {0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 1.0})
    for (int wt = 1; wt <= 30; ++wt)
      for (int wh = wt + 1; wh <= 31; ++wh) {
        const double weighted = 1.0 / (wt + 1.0 / alpha) - 1.0 / (wh + 1.0 / alpha);
        const double plain = 1.0 / wt - 1.0 / wh;
        CHECK(weighted < plain);
      }
}

TEST_CASE("prior-weighted probability") {
  CHECK(balanced_probability(Vector::Zero(2), ClassPrior({3, 1}))(0) == doctest::Approx(0.75).epsilon(1e-14));
  Vector o(2);
  o << std::log(2.0), std::log(4.0);
  const Vector p = balanced_probability(o, ClassPrior({2, 1}));
  CHECK(p(0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(p(1) == doctest::Approx(0.5).epsilon(1e-14));

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Vector l = random_matrix(7, 1, rng, 4.0);
    const Vector eq = balanced_probability(l, ClassPrior(std::vector<long>(7, 9)));
    CHECK((eq - softmax(l)).cwiseAbs().maxCoeff() < 1e-12);
    const ClassPrior prior({50, 20, 9, 5, 3, 2, 1});
    const Vector b = balanced_probability(l, prior);
    CHECK(std::abs(b.sum() - 1.0) < 1e-12);
    CHECK((b.array() > 0).all());
    CHECK((b - balanced_probability(Vector(l.array() + 13.5), prior)).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK_THROWS_AS(balanced_probability(Vector::Zero(3), ClassPrior({1, 1})), ShapeError);
  CHECK_THROWS(ClassPrior({2, 0}));
}

TEST_CASE("hard-class mining") {
  Vector o(4);
  o << 5, 1, 3, 2;
  const auto set = mine_hard_classes(o, 1, 2);
  CHECK(set.members == std::vector<Index>{0, 2, 1});
  CHECK(set.contains(1));
  CHECK(mine_hard_classes(o, 1, 3).size() == 4);
  CHECK(mine_hard_classes(Vector::Zero(3), 2, 1).members == std::vector<Index>{0, 2});
  CHECK_THROWS(mine_hard_classes(o, 1, 0));
  CHECK_THROWS(mine_hard_classes(o, 1, 4));

  Vector o2(3);
  o2 << 0, 10, 0;
  const auto s2 = mine_hard_classes(o2, 0, 1);
  CHECK(s2.members == std::vector<Index>{1, 0});
  const auto hp = hard_balanced_probability(o2, ClassPrior::uniform(3), s2);
  CHECK(hp.at(0) == doctest::Approx(1.0 / (1.0 + std::exp(10.0))).epsilon(1e-12));
  CHECK(hp.at(0) == doctest::Approx(4.54e-5).epsilon(1e-3));
  CHECK_THROWS_AS(hp.at(2), std::out_of_range);

  const ClassPrior prior({5, 3, 2, 1});
  const auto full = hard_balanced_probability(o, prior, mine_hard_classes(o, 1, 3));
  const Vector bp = balanced_probability(o, prior);
  for (Index j = 0; j < 4; ++j) CHECK(full.at(j) == doctest::Approx(bp(j)).epsilon(1e-12));

  const Matrix logits = o.transpose();
  const int y[] = {1};
  const Matrix mask = loss::hard_class_mask(logits, y, 2);
  CHECK(mask(0, 0) == 1.0);
  CHECK(mask(0, 1) == 1.0);
  CHECK(mask(0, 2) == 1.0);
  CHECK(mask(0, 3) == 0.0);
}

TEST_CASE("individual supervised loss") {
  CHECK(individual_supervised_loss(Vector::Zero(3), 0, ClassPrior::uniform(3), 1) ==
        doctest::Approx(std::log(3.0) + std::log(2.0)).epsilon(1e-12));

  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector o = random_matrix(2, 1, rng, 3.0);
    const ClassPrior prior({7, 2});
    const int y = trial % 2;
    CHECK(individual_supervised_loss(o, y, prior, 1) ==
          doctest::Approx(-2.0 * std::log(balanced_probability(o, prior)(y))).epsilon(1e-12));
  }
  Vector big(3);
  big << 0, 60, 0;
  CHECK(individual_supervised_loss(big, 1, ClassPrior::uniform(3), 1) < 1e-20);

  SUBCASE("tape version matches the value kernel and respects the switches") {
    const ClassPrior prior({40, 11, 5, 3, 2});
    const Matrix logits = random_matrix(8, 5, rng, 2.0);
    const std::vector<int> labels{0, 1, 2, 3, 4, 4, 1, 0};
    Tape tape;
    const auto o = tape.constant(logits);
    const auto s = loss::individual_supervised_loss(o, labels, prior, {true, true, 2});
    const auto global = loss::individual_supervised_loss(o, labels, prior, {true, false, 2});
    const auto plain = loss::individual_supervised_loss(o, labels, prior, {false, false, 2});
    for (Index i = 0; i < 8; ++i) {
      const Vector row = logits.row(i).transpose();
      const int y = labels[static_cast<std::size_t>(i)];
      CHECK(s.value()(i, 0) == doctest::Approx(individual_supervised_loss(row, y, prior, 2)).epsilon(1e-12));
      CHECK(global.value()(i, 0) == doctest::Approx(-std::log(balanced_probability(row, prior)(y))).epsilon(1e-12));
      CHECK(plain.value()(i, 0) == doctest::Approx(-std::log(softmax(row)(y))).epsilon(1e-12));
    }
  }

  SUBCASE("pinned hard sets are used as given") {
    const ClassPrior prior = ClassPrior::uniform(4);
    Matrix logits(1, 4);
    logits << 5, 1, 3, 2;
    const int y[] = {1};
    Matrix pinned = Matrix::Zero(1, 4);
    pinned(0, 1) = pinned(0, 3) = 1.0;
    Tape tape;
    const auto s = loss::individual_supervised_loss(tape.constant(logits), y, prior, {true, true, 1}, &pinned);
    const double global = -std::log(softmax(logits.row(0).transpose())(1));
    const double hard = -(1.0 - std::log(std::exp(1.0) + std::exp(2.0)));
    CHECK(s.value()(0, 0) == doctest::Approx(global + hard).epsilon(1e-12));
  }
}
