#pragma once

// End-to-end forecasting on one binary series: data preparation, reservoir
// ensembles, per-member posterior fits, weighting and the one-step forecast.

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "besn/bayes_fit.hpp"
#include "besn/ensemble.hpp"
#include "besn/esn.hpp"
#include "besn/grid.hpp"
#include "besn/parallel.hpp"
#include "besn/rng.hpp"
#include "besn/tuner.hpp"

namespace besn {

enum class ModelKind { BesnPlus, Besn, Logistic };

inline std::string model_name(ModelKind k) {
  switch (k) {
    case ModelKind::BesnPlus: return "besn_plus";
    case ModelKind::Besn: return "besn";
    case ModelKind::Logistic: return "logistic";
  }
  return "unknown";
}

inline bool uses_reservoir(ModelKind k) { return k != ModelKind::Logistic; }
inline bool uses_covariates(ModelKind k) { return k != ModelKind::Besn; }

/// Training view of a series. Fields 0..train_steps-1 are observed; responses
/// are fields 1..train_steps-1 and the forecast target is field train_steps.
/// Reservoir input column j is the lag-1 neighbour count for response time j+1.
struct PreparedData {
  int train_steps = 0;
  Eigen::MatrixXd y;                // n x T, T = train_steps - 1
  std::vector<Eigen::MatrixXd> x;   // T slices, n x n_x
  Eigen::MatrixXd x_future;         // n x n_x
  Eigen::MatrixXd inputs;           // n x (T + 1)
  Eigen::MatrixXd mask;             // n x T likelihood mask
  std::vector<std::uint8_t> active;

  int n() const { return static_cast<int>(y.rows()); }
  int steps() const { return static_cast<int>(y.cols()); }

  TuningData tuning_data() const { return {y, inputs.leftCols(steps()), active}; }
};

inline PreparedData prepare_data(const BinarySeries& series, const std::vector<RegionMask>& masks, int train_steps,
                                 bool at_risk_only = false) {
  if (train_steps < 3 || train_steps > series.steps())
    throw DimensionError("training window must cover at least 3 observed fields");
  const BinarySeries train = series.head(train_steps);
  PreparedData d;
  d.train_steps = train_steps;
  const int T = train_steps - 1;
  d.y = train.as_double().rightCols(T);
  for (int t = 1; t <= T; ++t) d.x.push_back(covariate_slice(train, masks, t));
  d.x_future = covariate_slice(train, masks, train_steps);
  d.inputs = lagged_neighbor_inputs(train, train_steps + 1).rightCols(T + 1);
  d.active = train.grid().active_mask();
  d.mask = likelihood_mask(d.y, d.active, at_risk_only);
  if (at_risk_only)
    for (Eigen::Index i = 0; i < d.y.rows(); ++i)
      if (train.at(static_cast<int>(i), 0) == 1) d.mask(i, 0) = 0.0;
  return d;
}

/// Reservoir parameters for ensemble member k, drawn uniformly from the tuned
/// ranges. Depends only on (ranges, seed, k).
inline ReservoirParams draw_member(const TuningRanges& ranges, std::uint64_t seed, int k) {
  Philox rng(derive_seed(seed, tag("member"), static_cast<std::uint64_t>(k)));
  ReservoirParams p = ranges.sample(rng);
  p.seed = derive_seed(seed, tag("reservoir"), static_cast<std::uint64_t>(k));
  return p;
}

/// States h_1..h_{T+1} (n_h x (T+1)); inputs are standardised on the first T columns.
inline Eigen::MatrixXd member_states(const ReservoirParams& p, const PreparedData& d) {
  const InputScaler scaler = InputScaler::fit(d.inputs.leftCols(d.steps()));
  const ReservoirWeights w = generate_weights(p, static_cast<int>(d.inputs.rows()));
  return run_reservoir(w, scaler.apply(d.inputs), p.nu).H;
}

inline FitData member_fit_data(const PreparedData& d, ModelKind kind, const Eigen::MatrixXd& states) {
  FitData f;
  f.y = d.y;
  f.mask = d.mask;
  if (uses_covariates(kind))
    f.x = d.x;
  else
    f.x.assign(d.steps(), Eigen::MatrixXd(d.n(), 0));
  if (uses_reservoir(kind)) f.h = states.leftCols(d.steps());
  return f;
}

struct MemberFit {
  PosteriorDraws draws;
  Eigen::MatrixXd in_sample_mean;  // n x T
  Eigen::MatrixXd forecast;        // n x S
};

inline MemberFit fit_member(const PreparedData& d, ModelKind kind, const Eigen::MatrixXd& states,
                            const HorseshoeConfig& hs, const SamplerConfig& sampler) {
  const FitData f = member_fit_data(d, kind, states);
  MemberFit m;
  m.draws = sample_posterior(f, hs, sampler);
  m.in_sample_mean = mean_probabilities(m.draws, f.x, f.h, d.steps());
  const Eigen::MatrixXd x_next = uses_covariates(kind) ? d.x_future : Eigen::MatrixXd(d.n(), 0);
  const Eigen::VectorXd h_next = uses_reservoir(kind) ? Eigen::VectorXd(states.col(d.steps())) : Eigen::VectorXd();
  m.forecast = predictive_probs(m.draws, x_next, h_next);
  return m;
}

struct WorkflowConfig {
  TuningGrid grid;
  std::size_t top_k = 100;
  int members = 20;
  HorseshoeConfig horseshoe;
  SamplerConfig sampler;
  double gamma = 0.95;
  std::uint64_t seed = 1;
  int workers = 1;
};

struct ModelForecast {
  ModelKind kind = ModelKind::BesnPlus;
  std::vector<MemberFit> members;
  EnsembleWeights weights;
  ForecastDistribution forecast;
  std::vector<std::string> warnings;
};

struct WorkflowResult {
  PreparedData data;
  TuningResult tuning;
  std::vector<ReservoirParams> member_params;
  std::vector<ModelForecast> models;
};

inline SamplerConfig member_sampler(const SamplerConfig& base, std::uint64_t seed, ModelKind kind, int k) {
  SamplerConfig s = base;
  s.seed = derive_seed(seed, tag(model_name(kind)), static_cast<std::uint64_t>(k));
  s.workers = 1;
  return s;
}

/// Combines member fits: weights from posterior-mean in-sample probabilities,
/// then the weighted predictive distribution of the forecast step.
inline void combine_members(ModelForecast& m, const PreparedData& d, double gamma, std::uint64_t seed) {
  std::vector<Eigen::MatrixXd> in_sample, forecasts;
  for (const auto& f : m.members) {
    in_sample.push_back(f.in_sample_mean);
    forecasts.push_back(f.forecast);
    for (const auto& w : f.draws.diagnostics.warnings) m.warnings.push_back(w);
  }
  WeightOptions opt;
  opt.seed = derive_seed(seed, tag("weights"));
  m.weights = optimize_weights(in_sample, d.y, d.mask, opt);
  if (!m.weights.warning.empty()) m.warnings.push_back(m.weights.warning);
  m.forecast = weighted_predictive(forecasts, m.weights.w, gamma);
}

/// Fits the requested models to `series` trained on its first `train_steps`
/// fields and forecasts field `train_steps`.
inline WorkflowResult run_workflow(const BinarySeries& series, const std::vector<RegionMask>& masks, int train_steps,
                                   const WorkflowConfig& cfg, const std::vector<ModelKind>& kinds) {
  WorkflowResult r;
  r.data = prepare_data(series, masks, train_steps, cfg.horseshoe.at_risk_only);
  const PreparedData& d = r.data;

  bool need_reservoir = false;
  for (auto k : kinds) need_reservoir = need_reservoir || uses_reservoir(k);
  std::vector<Eigen::MatrixXd> states;
  if (need_reservoir) {
    r.tuning = search(cfg.grid, d.tuning_data(), derive_seed(cfg.seed, tag("tune")), cfg.top_k, cfg.workers);
    for (int k = 0; k < cfg.members; ++k) r.member_params.push_back(draw_member(r.tuning.ranges, cfg.seed, k));
    states.resize(cfg.members);
    parallel_for(states.size(), cfg.workers, [&](std::size_t k) {
      states[k] = member_states(r.member_params[k], d);
    });
  }

  struct Job {
    std::size_t model;
    int member;
  };
  std::vector<Job> jobs;
  r.models.resize(kinds.size());
  for (std::size_t m = 0; m < kinds.size(); ++m) {
    r.models[m].kind = kinds[m];
    const int count = uses_reservoir(kinds[m]) ? cfg.members : 1;
    r.models[m].members.resize(count);
    for (int k = 0; k < count; ++k) jobs.push_back({m, k});
  }
  parallel_for(jobs.size(), cfg.workers, [&](std::size_t j) {
    const auto [m, k] = jobs[j];
    const ModelKind kind = kinds[m];
    const Eigen::MatrixXd& h = uses_reservoir(kind) ? states[k] : Eigen::MatrixXd();
    r.models[m].members[k] = fit_member(d, kind, h, cfg.horseshoe, member_sampler(cfg.sampler, cfg.seed, kind, k));
  });
  for (auto& m : r.models) combine_members(m, d, cfg.gamma, cfg.seed);
  return r;
}

}  // namespace besn
