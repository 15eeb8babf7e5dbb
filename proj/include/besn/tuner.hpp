#pragma once

// Exhaustive ridge-regression search over reservoir tuning parameters. Every
// candidate reservoir is scored by the one-step-ahead MSE of a ridge readout,
// and the 10th/90th percentiles of the best candidates become uniform prior
// ranges for the Bayesian stage.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <exception>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "besn/esn.hpp"
#include "besn/parallel.hpp"
#include "besn/rng.hpp"

namespace besn {

/// Solves V (H H' + ridge I) = Y H' for V (n x n_h) by a Cholesky solve.
/// H is n_h x m, Y is n x m.
inline Eigen::MatrixXd ridge_output_weights(const Eigen::MatrixXd& H, const Eigen::MatrixXd& Y, double ridge) {
  detail::require_dims(H.cols() == Y.cols(), "state and response column counts differ");
  if (!(ridge > 0.0)) throw ConfigError("ridge penalty must be positive");
  if (!H.allFinite() || !Y.allFinite()) throw NumericalError("ridge inputs must be finite");
  Eigen::MatrixXd A = H * H.transpose();
  A.diagonal().array() += ridge;
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success) throw NumericalError("ridge normal equations are not positive definite");
  Eigen::MatrixXd Vt = llt.solve(H * Y.transpose());
  if (!Vt.allFinite()) throw NumericalError("ridge solution is not finite");
  return Vt.transpose();
}

struct TuningCandidate {
  double nu = 0.5;
  double pi_w = 0.1;
  double pi_u = 0.1;
  double a_w = 0.1;
  double a_u = 0.1;
  int n_h = 20;
  double ridge = 0.1;

  /// Reservoir seed: a function of the base seed and the parameter values only,
  /// so a candidate scores identically in any grid that contains it.
  std::uint64_t reservoir_seed(std::uint64_t base) const {
    return derive_seed(base, seed_from_double(nu), seed_from_double(pi_w), seed_from_double(pi_u),
                       seed_from_double(a_w), seed_from_double(a_u), static_cast<std::uint64_t>(n_h));
  }

  ReservoirParams reservoir(std::uint64_t base_seed) const {
    return {n_h, nu, pi_w, pi_u, a_w, a_u, reservoir_seed(base_seed)};
  }
};

struct TuningGrid {
  std::vector<double> nu{0.5};
  std::vector<double> pi_w{0.1};
  std::vector<double> pi_u{0.1};
  std::vector<double> a_w{0.1};
  std::vector<double> a_u{0.1};
  std::vector<int> n_h{20};
  std::vector<double> ridge{0.1};

  std::size_t size() const {
    return nu.size() * pi_w.size() * pi_u.size() * a_w.size() * a_u.size() * n_h.size() * ridge.size();
  }

  /// Mixed-radix decoding; ridge varies slowest, nu fastest.
  TuningCandidate at(std::size_t c) const {
    TuningCandidate out;
    auto take = [&c](const auto& list) {
      const auto& v = list[c % list.size()];
      c /= list.size();
      return v;
    };
    out.nu = take(nu);
    out.pi_w = take(pi_w);
    out.pi_u = take(pi_u);
    out.a_w = take(a_w);
    out.a_u = take(a_u);
    out.n_h = take(n_h);
    out.ridge = take(ridge);
    return out;
  }

  void validate() const {
    if (size() == 0) throw ConfigError("tuning grid has an empty candidate list");
    for (double r : ridge)
      if (!(r > 0.0)) throw ConfigError("ridge penalties must be positive");
  }
};

/// Responses (n x T, treated as continuous) and reservoir inputs (n_z x T).
/// Column t of `inputs` must only use information available before time t.
struct TuningData {
  Eigen::MatrixXd y;
  Eigen::MatrixXd inputs;
  /// Optional per-cell indicator restricting the MSE to active cells.
  std::vector<std::uint8_t> active;
};

/// Reservoir states h_1..h_T for a candidate, with inputs standardised on the
/// first T-1 columns.
inline Eigen::MatrixXd candidate_states(const TuningCandidate& candidate, const TuningData& data,
                                        std::uint64_t base_seed) {
  const auto T = data.y.cols();
  detail::require_dims(data.inputs.cols() == T, "inputs and responses have different lengths");
  const InputScaler scaler = InputScaler::fit(data.inputs.leftCols(T - 1));
  const ReservoirWeights weights =
      generate_weights(candidate.reservoir(base_seed), static_cast<int>(data.inputs.rows()));
  return run_reservoir(weights, scaler.apply(data.inputs), candidate.nu).H;
}

inline double score_candidate(const TuningCandidate& candidate, const TuningData& data, std::uint64_t base_seed) {
  const auto T = data.y.cols();
  if (T < 3) throw DimensionError("tuning needs at least 3 time points");
  const Eigen::MatrixXd H = candidate_states(candidate, data, base_seed);
  const Eigen::MatrixXd V = ridge_output_weights(H.leftCols(T - 1), data.y.leftCols(T - 1), candidate.ridge);
  const Eigen::VectorXd forecast = V * H.col(T - 1);
  double sse = 0.0;
  int count = 0;
  for (Eigen::Index i = 0; i < data.y.rows(); ++i) {
    if (!data.active.empty() && data.active[i] == 0) continue;
    const double e = data.y(i, T - 1) - forecast(i);
    sse += e * e;
    ++count;
  }
  if (count == 0) throw EmptyInputError("no active cells to score");
  return sse / count;
}

struct ParamRange {
  double low = 0.0;
  double high = 0.0;
  bool contains(double v) const { return v >= low && v <= high; }
};

struct TuningRanges {
  ParamRange nu, pi_w, pi_u, a_w, a_u, n_h, ridge;

  /// Uniform draw of reservoir parameters within the ranges; n_h uniform over
  /// the integers in [low, high].
  ReservoirParams sample(Philox& rng) const {
    ReservoirParams p;
    p.nu = rng.uniform(nu.low, nu.high);
    p.pi_w = rng.uniform(pi_w.low, pi_w.high);
    p.pi_u = rng.uniform(pi_u.low, pi_u.high);
    p.a_w = rng.uniform(a_w.low, a_w.high);
    p.a_u = rng.uniform(a_u.low, a_u.high);
    p.n_h = static_cast<int>(rng.uniform_int(static_cast<std::int64_t>(n_h.low), static_cast<std::int64_t>(n_h.high)));
    return p;
  }
};

struct ScoredCandidate {
  std::size_t index = 0;
  TuningCandidate candidate;
  double mse = 0.0;
};

struct TuningResult {
  TuningRanges ranges;
  /// Successful candidates sorted by (mse, index).
  std::vector<ScoredCandidate> ranked;
  std::size_t top_k_used = 0;
  std::vector<std::string> failures;
};

/// Empirical quantile with linear interpolation between order statistics.
inline double quantile_linear(std::vector<double> v, double q) {
  if (v.empty()) throw EmptyInputError("quantile of empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

class TuningError : public Error {
 public:
  TuningError(const std::string& what, std::vector<std::string> failures)
      : Error(what), failures_(std::move(failures)) {}
  const std::vector<std::string>& failures() const { return failures_; }

 private:
  std::vector<std::string> failures_;
};

inline TuningResult search(const TuningGrid& grid, const TuningData& data, std::uint64_t base_seed,
                           std::size_t top_k = 100, int workers = 1) {
  grid.validate();
  const std::size_t C = grid.size();
  std::vector<std::optional<double>> mse(C);
  std::vector<std::string> errors(C);
  parallel_for(C, workers, [&](std::size_t c) {
    try {
      mse[c] = score_candidate(grid.at(c), data, base_seed);
    } catch (const std::exception& e) {
      errors[c] = e.what();
    }
  });

  TuningResult result;
  for (std::size_t c = 0; c < C; ++c) {
    if (mse[c] && std::isfinite(*mse[c]))
      result.ranked.push_back({c, grid.at(c), *mse[c]});
    else
      result.failures.push_back("candidate " + std::to_string(c) + ": " +
                                (errors[c].empty() ? std::string("non-finite MSE") : errors[c]));
  }
  if (result.ranked.empty()) throw TuningError("every tuning candidate failed", result.failures);
  std::sort(result.ranked.begin(), result.ranked.end(), [](const ScoredCandidate& a, const ScoredCandidate& b) {
    return a.mse != b.mse ? a.mse < b.mse : a.index < b.index;
  });

  result.top_k_used = std::min(top_k, result.ranked.size());
  auto range_of = [&](auto field) {
    std::vector<double> v;
    for (std::size_t r = 0; r < result.top_k_used; ++r) v.push_back(static_cast<double>(field(result.ranked[r].candidate)));
    return ParamRange{quantile_linear(v, 0.10), quantile_linear(v, 0.90)};
  };
  auto& R = result.ranges;
  R.nu = range_of([](const TuningCandidate& c) { return c.nu; });
  R.pi_w = range_of([](const TuningCandidate& c) { return c.pi_w; });
  R.pi_u = range_of([](const TuningCandidate& c) { return c.pi_u; });
  R.a_w = range_of([](const TuningCandidate& c) { return c.a_w; });
  R.a_u = range_of([](const TuningCandidate& c) { return c.a_u; });
  R.ridge = range_of([](const TuningCandidate& c) { return c.ridge; });
  R.n_h = range_of([](const TuningCandidate& c) { return c.n_h; });
  R.n_h.low = std::floor(R.n_h.low);
  R.n_h.high = std::ceil(R.n_h.high);
  return result;
}

}  // namespace besn
