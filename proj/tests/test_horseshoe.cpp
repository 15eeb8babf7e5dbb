#include <gtest/gtest.h>

#include <cmath>

#include "besn/horseshoe.hpp"
#include "oracles.hpp"

using namespace besn;

namespace {

double rel_err(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale < 1e-12 ? std::abs(a - b) : std::abs(a - b) / scale;
}

HorseshoeConfig fixed_config() {
  HorseshoeConfig c;
  c.scale_global = 0.3;
  return c;
}

}  // namespace

TEST(LogitProbs, Examples) {
  ModelState s;
  s.alpha = Eigen::VectorXd::Zero(3);
  s.beta = Eigen::VectorXd::Zero(2);
  s.V = Eigen::MatrixXd::Zero(3, 4);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 2);
  const Eigen::VectorXd h = Eigen::VectorXd::Random(4);
  EXPECT_TRUE((logit_probs(s, x, h).array() == 0.5).all());
  s.alpha(1) = std::log(0.9 / 0.1);
  EXPECT_NEAR(logit_probs(s, x, h)(1), 0.9, 1e-15);
  s.alpha(0) = 800.0;
  s.alpha(2) = -800.0;
  const Eigen::VectorXd p = logit_probs(s, x, h);
  EXPECT_GT(p(2), 0.0);
  EXPECT_LT(p(0), 1.0);
  s.alpha(0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(logit_probs(s, x, h), NumericalError);
  EXPECT_THROW(logit_probs(s, x, Eigen::VectorXd::Zero(2)), DimensionError);
}

TEST(LogitProbs, MatchesScalarOracle) {
  Philox rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    const ModelState base = oracle::random_state(rng, 5, 3, 2);
    ModelState s = base;
    refresh_output_weights(s, 2.0);
    Eigen::MatrixXd x(5, 2);
    for (auto& v : x.reshaped()) v = rng.normal();
    Eigen::VectorXd h(3);
    for (auto& v : h) v = rng.normal();
    const Eigen::VectorXd p = logit_probs(s, x, h);
    for (int i = 0; i < 5; ++i) {
      double eta = s.alpha(i);
      for (int b = 0; b < 2; ++b) eta += x(i, b) * s.beta(b);
      for (int j = 0; j < 3; ++j) eta += s.V(i, j) * h(j);
      EXPECT_NEAR(p(i), 1.0 / (1.0 + std::exp(-eta)), 1e-12);
    }
  }
}

TEST(LogPosterior, MatchesTermByTermOracle) {
  Philox rng(7);
  for (int rep = 0; rep < 25; ++rep) {
    const bool shared = rep % 5 == 4;
    const int nh = rep % 7 == 3 ? 0 : 2;
    FitData d = oracle::random_fit_data(rng, 2, 2, nh, 1);
    if (rep % 3 == 1) d.mask(1, 0) = 0.0;
    HorseshoeConfig c = fixed_config();
    c.shared_intercept = shared;
    c.nu_local = 1.0 + rep % 3;
    c.slab_df = 4.0 + rep % 2;
    const ModelState s = oracle::random_state(rng, 2, nh, 1, shared);
    const double ref = oracle::log_posterior(s, d, c, 0.3);
    EXPECT_LE(std::abs(log_posterior(s, d, c) - ref), 1e-10 * std::max(1.0, std::abs(ref))) << "rep " << rep;
  }
}

TEST(LogPosterior, HeuristicGlobalScale) {
  Philox rng(8);
  FitData d = oracle::random_fit_data(rng, 3, 4, 2, 1);
  d.mask(0, 0) = 0.0;
  HorseshoeConfig c;
  c.expected_nonzero_fraction = 0.2;
  const double tau0 = 0.2 / 0.8 * 2.0 / std::sqrt(11.0);
  EXPECT_NEAR(BinaryCaModel(d, c).scale_global(), tau0, 1e-15);
  const ModelState s = oracle::random_state(rng, 3, 2, 1);
  EXPECT_NEAR(log_posterior(s, d, c), oracle::log_posterior(s, d, c, tau0), 1e-9);
}

TEST(LogPosterior, InvariantToTimeReordering) {
  Philox rng(9);
  const FitData d = oracle::random_fit_data(rng, 4, 6, 3, 2);
  const ModelState s = oracle::random_state(rng, 4, 3, 2);
  FitData r = d;
  const std::vector<int> perm{3, 0, 5, 1, 4, 2};
  for (int t = 0; t < 6; ++t) {
    r.y.col(t) = d.y.col(perm[t]);
    r.h.col(t) = d.h.col(perm[t]);
    r.x[t] = d.x[perm[t]];
  }
  EXPECT_NEAR(log_posterior(s, d, fixed_config()), log_posterior(s, r, fixed_config()), 1e-10);
}

TEST(Gradient, MatchesFiniteDifferences) {
  Philox rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const bool shared = rep % 4 == 3;
    FitData d = oracle::random_fit_data(rng, 3, 4, rep % 5 == 2 ? 0 : 4, 2);
    HorseshoeConfig c = fixed_config();
    c.shared_intercept = shared;
    c.at_risk_only = rep % 2 == 1;
    if (c.at_risk_only) d.mask = likelihood_mask(d.y, {}, true);
    const BinaryCaModel m(d, c);
    const Eigen::VectorXd theta = m.pack(oracle::random_state(rng, 3, d.n_h(), 2, shared));
    Eigen::VectorXd g;
    m.log_density_gradient(theta, g);
    const Eigen::VectorXd fd = oracle::fd_gradient([&](const Eigen::VectorXd& q) { return m.log_density(q); }, theta);
    for (Eigen::Index k = 0; k < g.size(); ++k) EXPECT_LE(rel_err(g(k), fd(k)), 1e-5) << "rep " << rep << " k " << k;
  }
}

TEST(Gradient, OneCellClosedForm) {
  FitData d;
  d.y = Eigen::MatrixXd::Ones(1, 1);
  d.x = {Eigen::MatrixXd::Constant(1, 1, 2.0)};
  d.h = Eigen::MatrixXd(0, 1);
  d.mask = Eigen::MatrixXd::Ones(1, 1);
  HorseshoeConfig c = fixed_config();
  const BinaryCaModel m(d, c);
  Eigen::VectorXd theta(2);
  theta << 0.3, -0.4;  // alpha, beta
  Eigen::VectorXd g;
  m.log_density_gradient(theta, g);
  const double p = 1.0 / (1.0 + std::exp(-(0.3 - 0.8)));
  EXPECT_NEAR(g(0), (1.0 - p) - 0.3 / 25.0, 1e-14);
  EXPECT_NEAR(g(1), 2.0 * (1.0 - p) + 0.4 / 25.0, 1e-14);
}

TEST(Gradient, HalfProbabilityScore) {
  Philox rng(12);
  FitData d = oracle::random_fit_data(rng, 3, 5, 2, 1);
  const BinaryCaModel m(d, fixed_config());
  ModelState s = oracle::random_state(rng, 3, 2, 1);
  s.alpha.setZero();
  s.beta.setZero();
  s.z.setZero();  // V = 0
  Eigen::VectorXd g;
  m.log_density_gradient(m.pack(s), g);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(g(m.alpha_offset() + i), (d.y.row(i).array() - 0.5).sum(), 1e-14);
}

TEST(Gradient, StableForLargePredictors) {
  Philox rng(13);
  FitData d = oracle::random_fit_data(rng, 2, 3, 2, 1);
  const BinaryCaModel m(d, fixed_config());
  ModelState s = oracle::random_state(rng, 2, 2, 1);
  s.alpha << 60.0, -60.0;
  Eigen::VectorXd g;
  const double lp = m.log_density_gradient(m.pack(s), g);
  EXPECT_TRUE(std::isfinite(lp));
  EXPECT_TRUE(g.allFinite());
  EXPECT_NEAR(lp, oracle::log_posterior(s, d, fixed_config(), 0.3), 1e-8 * std::abs(lp));
}

TEST(PackUnpack, RoundTrip) {
  Philox rng(14);
  const FitData d = oracle::random_fit_data(rng, 3, 2, 2, 2);
  const BinaryCaModel m(d, fixed_config());
  EXPECT_EQ(m.dim(), 2 * 6 + 3 + 2 + 2);
  Eigen::VectorXd theta(m.dim());
  for (auto& v : theta) v = rng.normal();
  EXPECT_LT((m.pack(m.unpack(theta)) - theta).cwiseAbs().maxCoeff(), 1e-14);
  const ModelState s = m.unpack(theta);
  const double c = slab_width(2.0, s.c_aux);
  for (int k = 0; k < 6; ++k)
    EXPECT_NEAR(s.V(k), s.z(k) * s.tau * regularized_local_scale(s.lambda(k), s.tau, c), 1e-15);
}

TEST(RegularizedScale, Limits) {
  for (double c : {0.5, 2.0, 7.0})
    for (double tau : {0.01, 0.3, 4.0}) {
      const double small = 0.01 * c / tau;  // tau * lambda / c = 0.01
      EXPECT_LE(std::abs(regularized_local_scale(small, tau, c) / small - 1.0), 0.01);
      const double big = 100.0 * c / tau;  // tau * lambda / c = 100
      const double lt = regularized_local_scale(big, tau, c);
      EXPECT_LE(std::abs(lt * lt / (c * c / (tau * tau)) - 1.0), 0.01);
      EXPECT_LE(std::abs(tau * lt / c - 1.0), 0.01);  // V prior scale tends to c
    }
}

TEST(LikelihoodMask, AtRiskAndActive) {
  Eigen::MatrixXd y(2, 3);
  y << 0, 1, 1, 0, 0, 1;
  const Eigen::MatrixXd m = likelihood_mask(y, {1, 0}, true);
  EXPECT_EQ(m(0, 0), 1.0);
  EXPECT_EQ(m(0, 1), 1.0);
  EXPECT_EQ(m(0, 2), 0.0);
  EXPECT_EQ(m.row(1).sum(), 0.0);
  EXPECT_EQ(likelihood_mask(y, {}, false).sum(), 6.0);
}

TEST(FitDataValidation, Errors) {
  Philox rng(15);
  FitData d = oracle::random_fit_data(rng, 2, 3, 1, 1);
  d.y(0, 0) = 0.5;
  EXPECT_THROW(BinaryCaModel(d, fixed_config()), ParseError);
  d = oracle::random_fit_data(rng, 2, 3, 1, 1);
  d.h = Eigen::MatrixXd::Zero(1, 2);
  EXPECT_THROW(BinaryCaModel(d, fixed_config()), DimensionError);
  d = oracle::random_fit_data(rng, 2, 3, 1, 1);
  HorseshoeConfig c = fixed_config();
  c.slab_df = 0.5;
  EXPECT_THROW(BinaryCaModel(d, c), ConfigError);
}
