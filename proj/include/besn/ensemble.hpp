#pragma once

// Model averaging over K reservoir fits: simplex-constrained log-loss weights,
// weighted posterior-predictive draws and highest-posterior-density intervals.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "besn/error.hpp"
#include "besn/rng.hpp"

namespace besn {

inline constexpr double kProbabilityFloor = 1e-12;

struct EnsembleLoss {
  double value = 0.0;
  /// Number of (i, t) terms whose combined probability had to be clamped.
  long long clamped = 0;
};

namespace detail {

inline void check_members(const std::vector<Eigen::MatrixXd>& P, const Eigen::MatrixXd& y) {
  if (P.empty()) throw EmptyInputError("no ensemble members");
  for (const auto& p : P) require_dims(p.rows() == y.rows() && p.cols() == y.cols(), "member probabilities shape");
}

inline Eigen::MatrixXd combine(const std::vector<Eigen::MatrixXd>& P, const Eigen::VectorXd& w) {
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(P.front().rows(), P.front().cols());
  for (std::size_t k = 0; k < P.size(); ++k) q += w(static_cast<Eigen::Index>(k)) * P[k];
  return q;
}

}  // namespace detail

/// Mean Bernoulli log-loss of the w-weighted probabilities over the cells
/// selected by `mask` (all cells when empty).
inline EnsembleLoss ensemble_loss(const Eigen::VectorXd& w, const std::vector<Eigen::MatrixXd>& P,
                                  const Eigen::MatrixXd& y, const Eigen::MatrixXd& mask = {}) {
  detail::check_members(P, y);
  detail::require_dims(w.size() == static_cast<Eigen::Index>(P.size()), "weight vector length differs from K");
  const Eigen::MatrixXd q = detail::combine(P, w);
  EnsembleLoss out;
  double total = 0.0;
  double count = 0.0;
  for (Eigen::Index t = 0; t < y.cols(); ++t)
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      if (mask.size() > 0 && mask(i, t) == 0.0) continue;
      double p = q(i, t);
      if (p < kProbabilityFloor || p > 1.0 - kProbabilityFloor) {
        ++out.clamped;
        p = std::clamp(p, kProbabilityFloor, 1.0 - kProbabilityFloor);
      }
      total += y(i, t) * std::log(p) + (1.0 - y(i, t)) * std::log1p(-p);
      count += 1.0;
    }
  if (count == 0.0) throw EmptyInputError("no observations in ensemble loss");
  out.value = -total / count;
  return out;
}

/// Euclidean projection onto the probability simplex.
inline Eigen::VectorXd project_to_simplex(const Eigen::VectorXd& v) {
  std::vector<double> u(v.data(), v.data() + v.size());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0;
  double theta = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumsum += u[j];
    const double t = (cumsum - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) theta = t;
  }
  return (v.array() - theta).max(0.0);
}

struct EnsembleWeights {
  Eigen::VectorXd w;
  double loss_at_optimum = 0.0;
  int iterations = 0;
  int starts = 0;
  bool converged = true;
  std::string warning;
};

struct WeightOptions {
  int max_iter = 5000;
  double tol = 1e-12;
  int random_starts = 3;
  std::uint64_t seed = 7;
};

namespace detail {

inline Eigen::VectorXd loss_gradient(const Eigen::VectorXd& w, const std::vector<Eigen::MatrixXd>& P,
                                     const Eigen::MatrixXd& y, const Eigen::MatrixXd& mask) {
  const Eigen::MatrixXd q = combine(P, w);
  Eigen::MatrixXd dq(y.rows(), y.cols());
  double count = 0.0;
  for (Eigen::Index t = 0; t < y.cols(); ++t)
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      if (mask.size() > 0 && mask(i, t) == 0.0) {
        dq(i, t) = 0.0;
        continue;
      }
      const double p = std::clamp(q(i, t), kProbabilityFloor, 1.0 - kProbabilityFloor);
      dq(i, t) = y(i, t) / p - (1.0 - y(i, t)) / (1.0 - p);
      count += 1.0;
    }
  Eigen::VectorXd g(w.size());
  for (std::size_t k = 0; k < P.size(); ++k) g(static_cast<Eigen::Index>(k)) = -(P[k].cwiseProduct(dq)).sum() / count;
  return g;
}

/// Spectral projected gradient with a non-monotone Armijo line search.
inline EnsembleWeights spg_minimize(Eigen::VectorXd w, const std::vector<Eigen::MatrixXd>& P, const Eigen::MatrixXd& y,
                                    const Eigen::MatrixXd& mask, const WeightOptions& opt) {
  w = project_to_simplex(w);
  double f = ensemble_loss(w, P, y, mask).value;
  Eigen::VectorXd g = loss_gradient(w, P, y, mask);
  double step = 1.0;
  std::deque<double> history{f};
  EnsembleWeights out;
  out.converged = false;
  int it = 0;
  for (; it < opt.max_iter; ++it) {
    const Eigen::VectorXd d = project_to_simplex(w - step * g) - w;
    if (d.lpNorm<Eigen::Infinity>() < opt.tol) {
      out.converged = true;
      break;
    }
    const double f_ref = *std::max_element(history.begin(), history.end());
    const double slope = g.dot(d);
    double lam = 1.0;
    Eigen::VectorXd w_new;
    double f_new = f;
    bool accepted = false;
    while (lam > 1e-18) {
      w_new = w + lam * d;
      f_new = ensemble_loss(w_new, P, y, mask).value;
      if (f_new <= f_ref + 1e-4 * lam * slope) {
        accepted = true;
        break;
      }
      lam *= 0.5;
    }
    if (!accepted) {
      out.converged = true;  // no further descent possible at machine precision
      break;
    }
    const Eigen::VectorXd g_new = loss_gradient(w_new, P, y, mask);
    const Eigen::VectorXd s = w_new - w;
    const Eigen::VectorXd yk = g_new - g;
    const double sy = s.dot(yk);
    step = sy > 0.0 ? std::clamp(s.squaredNorm() / sy, 1e-10, 1e10) : 1e10;
    w = w_new;
    f = f_new;
    g = g_new;
    history.push_back(f);
    if (history.size() > 10) history.pop_front();
  }
  out.w = w;
  out.loss_at_optimum = f;
  out.iterations = it;
  return out;
}

}  // namespace detail

/// Minimises ensemble_loss over the simplex from several starting points
/// (uniform, every vertex, random Dirichlet(1) draws) and keeps the best.
inline EnsembleWeights optimize_weights(const std::vector<Eigen::MatrixXd>& P, const Eigen::MatrixXd& y,
                                        const Eigen::MatrixXd& mask = {}, const WeightOptions& opt = {}) {
  detail::check_members(P, y);
  const auto K = static_cast<Eigen::Index>(P.size());
  if (K == 1) {
    EnsembleWeights one;
    one.w = Eigen::VectorXd::Ones(1);
    one.loss_at_optimum = ensemble_loss(one.w, P, y, mask).value;
    one.starts = 1;
    return one;
  }
  std::vector<Eigen::VectorXd> starts;
  starts.push_back(Eigen::VectorXd::Constant(K, 1.0 / static_cast<double>(K)));
  for (Eigen::Index k = 0; k < K; ++k) starts.push_back(Eigen::VectorXd::Unit(K, k));
  Philox rng(opt.seed);
  for (int r = 0; r < opt.random_starts; ++r) {
    Eigen::VectorXd e(K);
    for (Eigen::Index k = 0; k < K; ++k) e(k) = -std::log(rng.uniform_open());
    starts.push_back(e / e.sum());
  }

  EnsembleWeights best;
  bool have = false;
  int total_iter = 0;
  for (const auto& s : starts) {
    EnsembleWeights r = detail::spg_minimize(s, P, y, mask, opt);
    total_iter += r.iterations;
    if (!have || r.loss_at_optimum < best.loss_at_optimum) {
      best = std::move(r);
      have = true;
    }
  }
  best.w = best.w.cwiseMax(0.0);
  best.w /= best.w.sum();
  best.loss_at_optimum = ensemble_loss(best.w, P, y, mask).value;
  best.iterations = total_iter;
  best.starts = static_cast<int>(starts.size());
  if (!best.converged) best.warning = "weight optimiser hit its iteration cap; returning best weights found";
  return best;
}

/// Highest-posterior-density interval: the narrowest [x_(i), x_(i+m)] over the
/// sorted samples with index span m = min(S - 1, ceil(gamma S)). Ties go to the
/// lowest start.
inline std::pair<double, double> hpd_interval(std::vector<double> samples, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("HPD level must lie in (0, 1]");
  const auto S = samples.size();
  if (S < 2) throw EmptyInputError("HPD interval needs at least 2 samples");
  std::sort(samples.begin(), samples.end());
  const auto span = std::min<std::size_t>(S - 1, static_cast<std::size_t>(std::ceil(gamma * S - 1e-9)));
  std::size_t best = 0;
  double width = samples[span] - samples[0];
  for (std::size_t i = 1; i + span < S; ++i) {
    const double w = samples[i + span] - samples[i];
    if (w < width) {
      width = w;
      best = i;
    }
  }
  return {samples[best], samples[best + span]};
}

struct ForecastDistribution {
  Eigen::MatrixXd draws;  // n x S weighted probabilities
  Eigen::VectorXd mean;
  Eigen::VectorXd low;
  Eigen::VectorXd high;
  double gamma = 0.95;
};

/// Combines per-member predictive draws (each n x S_k) draw by draw. Members
/// are aligned by truncation to the smallest S_k.
inline ForecastDistribution weighted_predictive(const std::vector<Eigen::MatrixXd>& member_draws,
                                                const Eigen::VectorXd& w, double gamma = 0.95) {
  if (member_draws.empty()) throw EmptyInputError("no ensemble members");
  detail::require_dims(w.size() == static_cast<Eigen::Index>(member_draws.size()), "weight vector length differs from K");
  Eigen::Index S = member_draws.front().cols();
  const Eigen::Index n = member_draws.front().rows();
  for (const auto& m : member_draws) {
    detail::require_dims(m.rows() == n, "members disagree on cell count");
    S = std::min(S, m.cols());
  }
  if (S == 0) throw EmptyInputError("ensemble member has no draws");
  ForecastDistribution out;
  out.gamma = gamma;
  out.draws = Eigen::MatrixXd::Zero(n, S);
  for (std::size_t k = 0; k < member_draws.size(); ++k)
    out.draws += w(static_cast<Eigen::Index>(k)) * member_draws[k].leftCols(S);
  out.mean = out.draws.rowwise().mean();
  out.low.resize(n);
  out.high.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (S < 2) {
      out.low(i) = out.high(i) = out.draws(i, 0);
      continue;
    }
    std::vector<double> v(S);
    for (Eigen::Index s = 0; s < S; ++s) v[s] = out.draws(i, s);
    const auto [lo, hi] = hpd_interval(std::move(v), gamma);
    out.low(i) = lo;
    out.high(i) = hi;
  }
  return out;
}

}  // namespace besn
