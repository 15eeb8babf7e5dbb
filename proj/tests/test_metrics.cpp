#include <gtest/gtest.h>

#include "besn/ensemble.hpp"
#include "besn/metrics.hpp"
#include "besn/rng.hpp"

using namespace besn;

namespace {

Eigen::MatrixXd random_probs(Philox& rng, int n, int T) {
  Eigen::MatrixXd p(n, T);
  for (auto& v : p.reshaped()) v = rng.uniform();
  return p;
}

Eigen::MatrixXd random_outcomes(Philox& rng, int n, int T) {
  Eigen::MatrixXd y(n, T);
  for (auto& v : y.reshaped()) v = rng.bernoulli(0.3) ? 1.0 : 0.0;
  return y;
}

}  // namespace

TEST(Brier, Examples) {
  Philox rng(1);
  const Eigen::MatrixXd O = random_outcomes(rng, 6, 4);
  EXPECT_EQ(brier_score(O, O), 0.0);
  EXPECT_DOUBLE_EQ(brier_score(Eigen::MatrixXd::Constant(6, 4, 0.5), O), 0.25);
  EXPECT_THROW(brier_score(Eigen::MatrixXd::Zero(5, 4), O), DimensionError);
  Eigen::MatrixXd bad = O;
  bad(0, 0) = 1.5;
  EXPECT_THROW(brier_score(bad, O), Error);
}

TEST(Brier, ComplementAndPerTimeDecomposition) {
  Philox rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::MatrixXd P = random_probs(rng, 7, 5);
    const Eigen::MatrixXd O = random_outcomes(rng, 7, 5);
    const Eigen::MatrixXd Pc = 1.0 - P.array();
    const Eigen::MatrixXd Oc = 1.0 - O.array();
    EXPECT_NEAR(brier_score(P, O), brier_score(Pc, Oc), 1e-15);
    Eigen::VectorXd mask = Eigen::VectorXd::Ones(7);
    mask(rep % 7) = 0.0;
    std::vector<TimeBrier> per;
    const double b = brier_score(P, O, mask, &per);
    ASSERT_EQ(per.size(), 5u);
    double weighted = 0.0;
    int cells = 0;
    for (const auto& tb : per) {
      weighted += tb.brier * tb.cells;
      cells += tb.cells;
    }
    EXPECT_EQ(cells, 30);
    EXPECT_NEAR(b, weighted / cells, 1e-15);
    // Order invariance: shuffled rows give the same score.
    Eigen::MatrixXd Ps = P, Os = O;
    Ps.row(0).swap(Ps.row(3));
    Os.row(0).swap(Os.row(3));
    EXPECT_NEAR(brier_score(Ps, Os), brier_score(P, O), 1e-15);
  }
}

TEST(Brier, SeriesOverloadUsesActiveMask) {
  GridSpec g(2, 2, {1, 1, 0, 1});
  StateMatrix v = StateMatrix::Zero(4, 3);
  v(0, 2) = 1;
  BinarySeries s(g, v);
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(4, 1);
  P(2, 0) = 1.0;  // inactive cell, ignored
  EXPECT_NEAR(brier_score(P, s, 2), 1.0 / 3.0, 1e-15);
}

TEST(Coverage, Examples) {
  const Eigen::VectorXd o = (Eigen::VectorXd(4) << 1, 0, 1, 0).finished();
  EXPECT_EQ(empirical_coverage(Eigen::VectorXd::Zero(4), Eigen::VectorXd::Ones(4), o), 1.0);
  EXPECT_EQ(empirical_coverage(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Constant(3, 0.4), Eigen::VectorXd::Ones(3)),
            0.0);
  const Eigen::VectorXd lo = (Eigen::VectorXd(4) << 0.6, 0.6, 0.1, 0.1).finished();
  const Eigen::VectorXd hi = (Eigen::VectorXd(4) << 0.9, 0.9, 0.4, 0.4).finished();
  EXPECT_EQ(empirical_coverage(lo, hi, o), 0.5);
  const Eigen::VectorXd mask = (Eigen::VectorXd(4) << 1, 0, 0, 1).finished();
  EXPECT_EQ(empirical_coverage(lo, hi, o, mask), 1.0);
  EXPECT_THROW(empirical_coverage(Eigen::VectorXd(), Eigen::VectorXd(), Eigen::VectorXd()), EmptyInputError);
  EXPECT_THROW(empirical_coverage(hi, lo, o), DimensionError);
}

TEST(Coverage, KnownProbabilityMonteCarlo) {
  // Cells with known p; the "posterior" is Beta(1 + k, 1 + m - k) after m Bernoulli
  // trials, and its 95% HPD interval is scored against a fresh outcome.
  Philox rng(3);
  const int cells = 400, m = 30, S = 400;
  Eigen::VectorXd lo(cells), hi(cells), o(cells), p(cells);
  for (int i = 0; i < cells; ++i) {
    p(i) = rng.uniform();
    int k = 0;
    for (int t = 0; t < m; ++t) k += rng.bernoulli(p(i)) ? 1 : 0;
    std::vector<double> draws;
    for (int s = 0; s < S; ++s) {
      // Beta(a, b) via order statistics of uniforms: the a-th smallest of a+b-1.
      std::vector<double> u(m + 1);
      for (auto& x : u) x = rng.uniform();
      std::nth_element(u.begin(), u.begin() + k, u.end());
      draws.push_back(u[k]);
    }
    const auto [a, b] = hpd_interval(draws, 0.95);
    lo(i) = a;
    hi(i) = b;
    o(i) = rng.bernoulli(p(i)) ? 1.0 : 0.0;
  }
  EXPECT_NEAR(interval_contains(lo, hi, p), 0.95, 0.1);
  const double cov = empirical_coverage(lo, hi, o);
  EXPECT_GE(cov, 0.5);
  EXPECT_LE(cov, 1.0);
}
