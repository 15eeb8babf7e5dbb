#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "besn/bayes_fit.hpp"
#include "oracles.hpp"

using namespace besn;

namespace {

struct StdNormal {
  int d = 5;
  int dim() const { return d; }
  double log_density_gradient(const Eigen::VectorXd& x, Eigen::VectorXd& g) const {
    g = -x;
    return -0.5 * x.squaredNorm();
  }
};

struct CorrelatedNormal {
  Eigen::Matrix2d prec;
  CorrelatedNormal() {
    Eigen::Matrix2d cov;
    cov << 1.0, 0.9, 0.9, 1.0;
    prec = cov.inverse();
  }
  int dim() const { return 2; }
  double log_density_gradient(const Eigen::VectorXd& x, Eigen::VectorXd& g) const {
    g = -prec * x;
    return -0.5 * x.dot(prec * x);
  }
};

/// Monte Carlo standard error of the mean by non-overlapping batch means.
double batch_mcse(const Eigen::VectorXd& v, int batches = 25) {
  const Eigen::Index b = v.size() / batches;
  Eigen::VectorXd m(batches);
  for (int k = 0; k < batches; ++k) m(k) = v.segment(k * b, b).mean();
  const double var = (m.array() - m.mean()).square().sum() / (batches - 1);
  return std::sqrt(var / batches);
}

Eigen::MatrixXd pooled(const std::vector<ChainResult>& chains) {
  Eigen::MatrixXd all(chains.front().draws.rows(), 0);
  for (const auto& c : chains) {
    Eigen::MatrixXd next(all.rows(), all.cols() + c.draws.cols());
    next << all, c.draws;
    all = std::move(next);
  }
  return all;
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

SamplerConfig quick(int chains, int warmup, int samples, std::uint64_t seed) {
  SamplerConfig s;
  s.chains = chains;
  s.warmup = warmup;
  s.samples = samples;
  s.seed = seed;
  return s;
}

}  // namespace

TEST(Nuts, StandardNormalMoments) {
  const auto chains = run_nuts(StdNormal{}, quick(4, 1000, 1000, 3));
  const Eigen::MatrixXd all = pooled(chains);
  for (int k = 0; k < 5; ++k) {
    const Eigen::VectorXd v = all.row(k).transpose();
    EXPECT_LE(std::abs(v.mean()), 3 * batch_mcse(v)) << "coordinate " << k;
    const double var = (v.array() - v.mean()).square().mean();
    EXPECT_NEAR(var, 1.0, 0.1) << "coordinate " << k;
  }
  for (const auto& c : chains) {
    EXPECT_EQ(c.diagnostics.divergences, 0);
    EXPECT_GT(c.diagnostics.mean_accept_stat, 0.6);
  }
}

TEST(Nuts, CorrelatedNormalCovariance) {
  const Eigen::MatrixXd all = pooled(run_nuts(CorrelatedNormal{}, quick(4, 1000, 1500, 5)));
  const Eigen::VectorXd mu = all.rowwise().mean();
  const Eigen::MatrixXd c = all.colwise() - mu;
  const Eigen::Matrix2d cov = c * c.transpose() / static_cast<double>(all.cols() - 1);
  EXPECT_NEAR(cov(0, 0), 1.0, 0.1);
  EXPECT_NEAR(cov(1, 1), 1.0, 0.1);
  EXPECT_NEAR(cov(0, 1), 0.9, 0.1);
}

TEST(Nuts, SeededDeterminismIndependentOfWorkers) {
  SamplerConfig s = quick(3, 150, 100, 9);
  const auto a = run_nuts(StdNormal{}, s);
  s.workers = 3;
  const auto b = run_nuts(StdNormal{}, s);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(a[c].draws, b[c].draws);
  s.seed = 10;
  EXPECT_NE(run_nuts(StdNormal{}, s)[0].draws, a[0].draws);
}

TEST(Nuts, ConfigValidation) {
  SamplerConfig s;
  s.chains = 0;
  EXPECT_THROW(run_nuts(StdNormal{}, s), ConfigError);
  s = {};
  s.adapt_delta = 1.0;
  EXPECT_THROW(run_nuts(StdNormal{}, s), ConfigError);
}

TEST(SplitRhat, Behaviour) {
  Philox rng(1);
  std::vector<Eigen::VectorXd> same(4, Eigen::VectorXd(500));
  for (auto& c : same)
    for (auto& v : c) v = rng.normal();
  EXPECT_LT(split_rhat(same), 1.02);
  auto shifted = same;
  shifted[0].array() += 3.0;
  EXPECT_GT(split_rhat(shifted), 1.5);
}

TEST(SamplePosterior, PriorOnlyAlphaSymmetric) {
  Philox rng(2);
  FitData d = oracle::random_fit_data(rng, 2, 3, 2, 1);
  d.mask.setZero();
  HorseshoeConfig c;
  c.scale_global = 0.5;
  const PosteriorDraws p = sample_posterior(d, c, quick(4, 1000, 1000, 4));
  for (int i = 0; i < 2; ++i) {
    const Eigen::VectorXd a = p.alpha.row(i).transpose();
    EXPECT_LE(std::abs(a.mean()), 3 * batch_mcse(a));
  }
}

TEST(SamplePosterior, PriorOnlyVMatchesGenerativeSimulation) {
  Philox rng(3);
  FitData d = oracle::random_fit_data(rng, 2, 2, 2, 0);
  d.mask.setZero();
  HorseshoeConfig c;
  c.scale_global = 0.5;
  SamplerConfig s = quick(4, 1000, 200, 6);
  s.thin = 10;
  s.adapt_delta = 0.95;
  const PosteriorDraws p = sample_posterior(d, c, s);
  // Direct simulation of the prior: tau ~ half-Cauchy(0, 1), lambda ~ half-Cauchy(0, 1),
  // c_aux ~ InvGamma(2, 2), z ~ N(0, 1).
  Philox g(44);
  std::vector<double> direct;
  for (int k = 0; k < 40000; ++k) {
    const double tau = std::abs(2.0 * c.scale_global * std::tan(std::numbers::pi * (g.uniform() - 0.5)));
    const double lam = std::abs(std::tan(std::numbers::pi * (g.uniform() - 0.5)));
    double gsum = 0.0;  // Gamma(2, 2) as a sum of two exponentials with rate 2
    for (int e = 0; e < 2; ++e) gsum += -std::log(g.uniform_open()) / 2.0;
    const double caux = 1.0 / gsum;
    direct.push_back(g.normal() * tau * regularized_local_scale(lam, tau, 2.0 * std::sqrt(caux)));
  }
  const double crit = 1.95 * std::sqrt(1.0 / 800.0 + 1.0 / 40000.0);  // two-sample KS at the 0.001 level
  for (int k = 0; k < 4; ++k) {
    std::vector<double> mc;
    for (int col = 0; col < p.size(); ++col) mc.push_back(p.V(k, col));
    ASSERT_EQ(mc.size(), 800u);
    EXPECT_LT(ks_statistic(mc, direct), crit) << "V entry " << k;
  }
}

TEST(SamplePosterior, DeterministicAndDiagnostics) {
  Philox rng(4);
  const FitData d = oracle::random_fit_data(rng, 3, 6, 2, 1);
  HorseshoeConfig c;
  SamplerConfig s = quick(2, 100, 50, 8);
  const PosteriorDraws a = sample_posterior(d, c, s);
  const PosteriorDraws b = sample_posterior(d, c, s);
  EXPECT_EQ(a.V, b.V);
  EXPECT_EQ(a.alpha, b.alpha);
  EXPECT_EQ(a.size(), 100);
  EXPECT_EQ(a.diagnostics.step_sizes.size(), 2u);
  EXPECT_EQ(a.diagnostics.rhat.size(), static_cast<std::size_t>(2 + 3 + 1 + 6));
  s.max_rhat = 1.0 + 1e-12;
  const PosteriorDraws w = sample_posterior(d, c, s);
  EXPECT_EQ(w.diagnostics.status, FitStatus::Warning);
  EXPECT_FALSE(w.diagnostics.warnings.empty());
  FitOptions keep;
  keep.keep_lambda = true;
  EXPECT_EQ(sample_posterior(d, c, quick(1, 20, 10, 1), keep).lambda.cols(), 10);
}

TEST(PredictiveProbs, OraclesAndSpecialCases) {
  Philox rng(5);
  PosteriorDraws p;
  p.n = 4;
  p.n_h = 3;
  p.n_x = 2;
  const int S = 7;
  p.V.resize(12, S);
  p.alpha.resize(4, S);
  p.beta.resize(2, S);
  for (auto* m : {&p.V, &p.alpha, &p.beta})
    for (auto& v : m->reshaped()) v = rng.normal();
  Eigen::MatrixXd x(4, 2);
  for (auto& v : x.reshaped()) v = rng.normal();
  Eigen::VectorXd h(3);
  for (auto& v : h) v = rng.normal();
  const Eigen::MatrixXd out = predictive_probs(p, x, h);
  for (int s = 0; s < S; ++s) EXPECT_EQ(out.col(s), logit_probs(p.state(s), x, h));

  PosteriorDraws same = p;
  for (int s = 1; s < S; ++s) {
    same.V.col(s) = same.V.col(0);
    same.alpha.col(s) = same.alpha.col(0);
    same.beta.col(s) = same.beta.col(0);
  }
  const Eigen::MatrixXd o2 = predictive_probs(same, x, h);
  for (int s = 1; s < S; ++s) EXPECT_EQ(o2.col(s), o2.col(0));

  PosteriorDraws flat = p;
  flat.V.setZero();
  flat.beta.setZero();
  const Eigen::MatrixXd o3 = predictive_probs(flat, x, h);
  for (int s = 0; s < S; ++s)
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(o3(i, s), 1.0 / (1.0 + std::exp(-flat.alpha(i, s))), 1e-15);

  EXPECT_THROW(predictive_probs(p, x, Eigen::VectorXd::Zero(2)), DimensionError);
  EXPECT_THROW(predictive_probs(p, Eigen::MatrixXd::Zero(3, 2), h), DimensionError);
  EXPECT_EQ(p.truncated(3).size(), 3);
}
