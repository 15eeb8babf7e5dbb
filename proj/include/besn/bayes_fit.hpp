#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "besn/horseshoe.hpp"
#include "besn/nuts.hpp"

namespace besn {

enum class FitStatus { Ok, Warning };

struct SamplerDiagnostics {
  FitStatus status = FitStatus::Ok;
  std::vector<std::string> warnings;
  int divergences = 0;
  int transitions = 0;
  double mean_accept_stat = 0.0;
  double mean_tree_depth = 0.0;
  int max_depth_hits = 0;
  std::vector<double> step_sizes;
  long long gradient_evaluations = 0;
  /// Split R-hat per stored scalar, in storage order (tau, c_aux, alpha, beta, V).
  std::vector<double> rhat;
  double max_rhat = 1.0;
};

/// Retained draws on the constrained scale. Each matrix holds one column per
/// draw; V columns are n x n_h matrices flattened column-major.
struct PosteriorDraws {
  int n = 0;
  int n_h = 0;
  int n_x = 0;
  bool shared_intercept = false;
  double slab_scale = 2.0;
  Eigen::MatrixXd V;       // (n*n_h) x S
  Eigen::MatrixXd alpha;   // n_alpha x S
  Eigen::MatrixXd beta;    // n_x x S
  Eigen::RowVectorXd tau;  // 1 x S
  Eigen::RowVectorXd c_aux;
  Eigen::MatrixXd lambda;  // (n*n_h) x S, empty unless requested
  std::vector<int> chain;  // chain id per draw
  SamplerDiagnostics diagnostics;

  int size() const { return static_cast<int>(alpha.cols()); }

  /// Parameters of draw s needed for prediction (z and lambda are not kept).
  ModelState state(int s) const {
    ModelState m;
    m.V = Eigen::Map<const Eigen::MatrixXd>(V.col(s).data(), n, n_h);
    m.alpha = alpha.col(s);
    m.beta = beta.col(s);
    m.tau = tau.size() > 0 ? tau(s) : 0.0;
    m.c_aux = c_aux.size() > 0 ? c_aux(s) : 0.0;
    if (lambda.cols() > s) m.lambda = Eigen::Map<const Eigen::MatrixXd>(lambda.col(s).data(), n, n_h);
    return m;
  }

  /// First `count` draws.
  PosteriorDraws truncated(int count) const {
    PosteriorDraws d = *this;
    d.V = V.leftCols(count);
    d.alpha = alpha.leftCols(count);
    d.beta = beta.leftCols(count);
    if (tau.size() > 0) d.tau = tau.head(count);
    if (c_aux.size() > 0) d.c_aux = c_aux.head(count);
    if (lambda.cols() > 0) d.lambda = lambda.leftCols(count);
    d.chain.resize(count);
    return d;
  }
};

struct FitOptions {
  bool keep_lambda = false;
  /// Optional unconstrained starting point shared by all chains.
  const Eigen::VectorXd* init = nullptr;
};

namespace detail {

inline void fill_rhat(PosteriorDraws& d, int chains, int per_chain) {
  Eigen::MatrixXd scalars(2, d.size());
  int rows = 0;
  if (d.tau.size() > 0) {
    scalars.row(0) = d.tau;
    scalars.row(1) = d.c_aux;
    rows = 2;
  }
  auto rhat_of = [&](auto row) {
    std::vector<Eigen::VectorXd> per;
    for (int c = 0; c < chains; ++c) per.emplace_back(row.segment(c * per_chain, per_chain).transpose());
    return split_rhat(per);
  };
  auto& diag = d.diagnostics;
  for (int r = 0; r < rows; ++r) diag.rhat.push_back(rhat_of(scalars.row(r)));
  for (const Eigen::MatrixXd* m : {&d.alpha, &d.beta, &d.V})
    for (Eigen::Index r = 0; r < m->rows(); ++r) diag.rhat.push_back(rhat_of(m->row(r)));
  diag.max_rhat = 1.0;
  for (double r : diag.rhat)
    if (std::isfinite(r)) diag.max_rhat = std::max(diag.max_rhat, r);
}

}  // namespace detail

/// Draws from the posterior of one model with NUTS. A run whose divergence
/// fraction or worst split R-hat exceeds the configured limits is returned with
/// status Warning and a message per failed check.
inline PosteriorDraws sample_posterior(const FitData& data, const HorseshoeConfig& config,
                                       const SamplerConfig& sampler, const FitOptions& options = {}) {
  const BinaryCaModel model(data, config);
  const std::vector<ChainResult> chains = run_nuts(model, sampler, options.init);

  PosteriorDraws d;
  d.n = data.n();
  d.n_h = data.n_h();
  d.n_x = data.n_x();
  d.shared_intercept = config.shared_intercept;
  d.slab_scale = config.slab_scale;
  const int per_chain = sampler.samples;
  const int S = per_chain * sampler.chains;
  const int nn = d.n * d.n_h;
  d.V.resize(nn, S);
  d.alpha.resize(config.shared_intercept ? 1 : d.n, S);
  d.beta.resize(d.n_x, S);
  if (model.has_reservoir()) {
    d.tau.resize(S);
    d.c_aux.resize(S);
  }
  if (options.keep_lambda && model.has_reservoir()) d.lambda.resize(nn, S);

  auto& diag = d.diagnostics;
  double accept = 0.0, depth = 0.0;
  for (int c = 0; c < sampler.chains; ++c) {
    const ChainResult& chain = chains[c];
    for (int s = 0; s < per_chain; ++s) {
      const int col = c * per_chain + s;
      const ModelState st = model.unpack(chain.draws.col(s));
      d.V.col(col) = Eigen::Map<const Eigen::VectorXd>(st.V.data(), nn);
      d.alpha.col(col) = st.alpha;
      d.beta.col(col) = st.beta;
      if (model.has_reservoir()) {
        d.tau(col) = st.tau;
        d.c_aux(col) = st.c_aux;
      }
      if (d.lambda.size() > 0) d.lambda.col(col) = Eigen::Map<const Eigen::VectorXd>(st.lambda.data(), nn);
      d.chain.push_back(c);
    }
    diag.divergences += chain.diagnostics.divergences;
    diag.max_depth_hits += chain.diagnostics.max_depth_hits;
    diag.gradient_evaluations += chain.diagnostics.gradient_evaluations;
    diag.step_sizes.push_back(chain.diagnostics.step_size);
    accept += chain.diagnostics.mean_accept_stat;
    depth += chain.diagnostics.mean_tree_depth;
  }
  diag.transitions = S * sampler.thin;
  diag.mean_accept_stat = accept / sampler.chains;
  diag.mean_tree_depth = depth / sampler.chains;
  detail::fill_rhat(d, sampler.chains, per_chain);

  const double div_frac = static_cast<double>(diag.divergences) / diag.transitions;
  if (div_frac > sampler.max_divergence_fraction) {
    diag.status = FitStatus::Warning;
    diag.warnings.push_back("divergent transitions: " + std::to_string(diag.divergences) + " of " +
                            std::to_string(diag.transitions));
  }
  if (sampler.chains > 1 && diag.max_rhat > sampler.max_rhat) {
    diag.status = FitStatus::Warning;
    diag.warnings.push_back("max split R-hat " + std::to_string(diag.max_rhat) + " exceeds " +
                            std::to_string(sampler.max_rhat));
  }
  return d;
}

/// Transition probabilities for every retained draw: column s is logit_probs
/// of draw s at the given covariates and reservoir state.
inline Eigen::MatrixXd predictive_probs(const PosteriorDraws& draws, const Eigen::MatrixXd& x_future,
                                        const Eigen::VectorXd& h_future) {
  detail::require_dims(x_future.rows() == draws.n && x_future.cols() == draws.n_x, "future covariates have wrong shape");
  detail::require_dims(h_future.size() == draws.n_h, "future reservoir state has wrong dimension");
  if (draws.size() == 0) throw EmptyInputError("no posterior draws");
  Eigen::MatrixXd out(draws.n, draws.size());
  for (int s = 0; s < draws.size(); ++s) out.col(s) = logit_probs(draws.state(s), x_future, h_future);
  return out;
}

/// Posterior-mean transition probabilities for times [0, T): n x T.
inline Eigen::MatrixXd mean_probabilities(const PosteriorDraws& draws, const std::vector<Eigen::MatrixXd>& x,
                                          const Eigen::MatrixXd& h, int T) {
  detail::require_dims(static_cast<int>(x.size()) >= T && (draws.n_h == 0 || h.cols() >= T),
                       "covariates or states shorter than requested horizon");
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(draws.n, T);
  for (int t = 0; t < T; ++t) {
    const Eigen::VectorXd h_t = draws.n_h > 0 ? Eigen::VectorXd(h.col(t)) : Eigen::VectorXd();
    mean.col(t) = predictive_probs(draws, x[t], h_t).rowwise().mean();
  }
  return mean;
}

}  // namespace besn
