#include <gtest/gtest.h>

#include "besn/grid.hpp"
#include "besn/rng.hpp"

using namespace besn;

namespace {

StateVector field_of(std::initializer_list<int> v) {
  StateVector f(static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (int x : v) f(k++) = static_cast<std::uint8_t>(x);
  return f;
}

StateVector random_field(Philox& rng, int n, double p = 0.4) {
  StateVector f(n);
  for (int i = 0; i < n; ++i) f(i) = rng.bernoulli(p) ? 1 : 0;
  return f;
}

}  // namespace

TEST(GridSpec, IndexRoundTrip) {
  GridSpec g(4, 7);
  EXPECT_EQ(g.size(), 28);
  for (int i = 0; i < g.size(); ++i) EXPECT_EQ(g.index(g.row_of(i), g.col_of(i)), i);
  EXPECT_EQ(g.index(1, 0), 7);
  EXPECT_THROW(GridSpec(0, 3), DimensionError);
  EXPECT_THROW(GridSpec(2, 2, {1, 0, 1}), DimensionError);
  EXPECT_EQ(GridSpec(2, 2, {1, 0, 1, 1}).active_count(), 3);
}

TEST(NeighborCounts, SaturatedInteriorAndCorner) {
  GridSpec g(5, 5);
  const StateVector ones = StateVector::Ones(25);
  const Eigen::VectorXi c = queen_neighbor_counts(ones, g);
  EXPECT_EQ(c(g.index(2, 2)), 8);
  EXPECT_EQ(c(g.index(0, 0)), 3);
  EXPECT_EQ(c(g.index(4, 4)), 3);
  EXPECT_EQ(c(g.index(0, 2)), 5);
}

TEST(NeighborCounts, CenterOnlyOnThreeByThree) {
  GridSpec g(3, 3);
  const Eigen::VectorXi c = queen_neighbor_counts(field_of({0, 0, 0, 0, 1, 0, 0, 0, 0}), g);
  for (int i = 0; i < 9; ++i) EXPECT_EQ(c(i), i == 4 ? 0 : 1) << "cell " << i;
}

TEST(NeighborCounts, LengthMismatchThrows) {
  EXPECT_THROW(queen_neighbor_counts(field_of({1, 0, 1}), GridSpec(2, 2)), DimensionError);
}

TEST(NeighborCounts, BoundsAndSymmetryProperty) {
  Philox rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    const int R = 1 + static_cast<int>(rng.uniform_int(0, 6));
    const int C = 1 + static_cast<int>(rng.uniform_int(0, 6));
    GridSpec g(R, C);
    const Eigen::VectorXi c = queen_neighbor_counts(random_field(rng, g.size()), g);
    for (int i = 0; i < g.size(); ++i) {
      const bool row_edge = g.row_of(i) == 0 || g.row_of(i) == R - 1;
      const bool col_edge = g.col_of(i) == 0 || g.col_of(i) == C - 1;
      EXPECT_GE(c(i), 0);
      EXPECT_LE(c(i), 8);
      if (row_edge && col_edge) EXPECT_LE(c(i), 3);
      if (row_edge || col_edge) EXPECT_LE(c(i), 5);
    }
    // If i counts j then j counts i: single-cell fields give the adjacency matrix.
    for (int i = 0; i < g.size(); ++i) {
      StateVector ei = StateVector::Zero(g.size());
      ei(i) = 1;
      const Eigen::VectorXi ci = queen_neighbor_counts(ei, g);
      for (int j = 0; j < g.size(); ++j) {
        StateVector ej = StateVector::Zero(g.size());
        ej(j) = 1;
        EXPECT_EQ(ci(j), queen_neighbor_counts(ej, g)(i));
      }
    }
  }
}

TEST(NeighborCounts, EquivariantUnderMirror) {
  Philox rng(5);
  GridSpec g(4, 6);
  const StateVector f = random_field(rng, g.size());
  StateVector m(g.size());
  for (int i = 0; i < g.size(); ++i) m(g.index(g.row_of(i), g.cols() - 1 - g.col_of(i))) = f(i);
  const Eigen::VectorXi cf = queen_neighbor_counts(f, g);
  const Eigen::VectorXi cm = queen_neighbor_counts(m, g);
  for (int i = 0; i < g.size(); ++i) EXPECT_EQ(cm(g.index(g.row_of(i), g.cols() - 1 - g.col_of(i))), cf(i));
}

TEST(Covariates, ZeroSeriesNoMasks) {
  GridSpec g(3, 4);
  BinarySeries s(g, StateMatrix::Zero(12, 5));
  const CovariateTensor x = build_covariates(s, {});
  EXPECT_EQ(x.n_x(), 1);
  EXPECT_EQ(x.steps(), 5);
  for (const auto& sl : x.slices()) EXPECT_EQ(sl.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Covariates, AllOnesMaskBroadcast) {
  GridSpec g(3, 4);
  BinarySeries s(g, StateMatrix::Zero(12, 3));
  const CovariateTensor x = build_covariates(s, {{"all", Eigen::VectorXd::Ones(12)}});
  ASSERT_EQ(x.n_x(), 2);
  for (const auto& sl : x.slices()) EXPECT_TRUE((sl.col(1).array() == 1.0).all());
}

TEST(Covariates, LeftHalfIsQuadrantsTwoAndThree) {
  GridSpec g(10, 12);
  const RegionMask left = left_half_mask(g);
  const std::vector<int> q = quadrant_regions(g);
  for (int i = 0; i < g.size(); ++i) EXPECT_EQ(left.values(i) == 1.0, q[i] == 2 || q[i] == 3) << "cell " << i;
  EXPECT_EQ(q[g.index(0, 11)], 1);
  EXPECT_EQ(q[g.index(0, 0)], 2);
  EXPECT_EQ(q[g.index(9, 0)], 3);
  EXPECT_EQ(q[g.index(9, 11)], 4);
}

TEST(Covariates, LagOne) {
  GridSpec g(3, 3);
  StateMatrix v = StateMatrix::Zero(9, 3);
  v(4, 1) = 1;  // centre switches on at t = 1
  BinarySeries s(g, v);
  const CovariateTensor x = build_covariates(s, {});
  EXPECT_EQ(x.slice(0).col(0).sum(), 0.0);  // t = 0 uses the initial field
  EXPECT_EQ(x.slice(1).col(0).sum(), 0.0);  // t = 1 sees field 0
  EXPECT_EQ(x.slice(2).col(0).sum(), 8.0);  // t = 2 sees field 1
  EXPECT_EQ(covariate_slice(s, {}, 3).col(0).sum(), 0.0);
  const Eigen::MatrixXd z = lagged_neighbor_inputs(s, 4);
  EXPECT_EQ(z.col(2).sum(), 8.0);
  EXPECT_THROW(lagged_neighbor_inputs(s, 5), DimensionError);
}

TEST(Covariates, DeterministicAndEmptyRejected) {
  Philox rng(3);
  GridSpec g(4, 5);
  StateMatrix v(20, 6);
  for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = rng.bernoulli(0.3) ? 1 : 0;
  BinarySeries s(g, v);
  const auto a = build_covariates(s, {left_half_mask(g)});
  const auto b = build_covariates(s, {left_half_mask(g)});
  for (int t = 0; t < 6; ++t) EXPECT_EQ(a.slice(t), b.slice(t));
  EXPECT_THROW(build_covariates(BinarySeries(g, StateMatrix(20, 0)), {}), EmptyInputError);
  EXPECT_THROW(build_covariates(s, {{"bad", Eigen::VectorXd::Ones(3)}}), DimensionError);
}

TEST(BinarySeries, RejectsNonBinary) {
  StateMatrix v = StateMatrix::Zero(4, 1);
  v(2, 0) = 2;
  EXPECT_THROW(BinarySeries(GridSpec(2, 2), v), ParseError);
  EXPECT_THROW(BinarySeries(GridSpec(2, 2), StateMatrix::Zero(3, 1)), DimensionError);
}

TEST(Rng, DeterministicStreams) {
  Philox a(42), b(42), c(43), d(42, 1);
  for (int k = 0; k < 100; ++k) {
    const auto x = a();
    EXPECT_EQ(x, b());
    EXPECT_NE(x, c());
    EXPECT_NE(x, d());
  }
  EXPECT_NE(derive_seed(1, 2), derive_seed(2, 1));
  EXPECT_EQ(tag("member"), tag("member"));
}

TEST(Rng, UniformAndNormalMoments) {
  Philox rng(9);
  const int N = 200000;
  double su = 0, sn = 0, sn2 = 0;
  for (int k = 0; k < N; ++k) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  EXPECT_NEAR(su / N, 0.5, 4 * std::sqrt(1.0 / 12 / N));
  EXPECT_NEAR(sn / N, 0.0, 4 / std::sqrt(N));
  EXPECT_NEAR(sn2 / N, 1.0, 4 * std::sqrt(2.0 / N));
  for (int k = 0; k < 1000; ++k) {
    const auto v = rng.uniform_int(-2, 3);
    ASSERT_GE(v, -2);
    ASSERT_LE(v, 3);
  }
}
