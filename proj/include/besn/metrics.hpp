#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "besn/error.hpp"
#include "besn/grid.hpp"

namespace besn {

struct TimeBrier {
  int t = 0;
  int cells = 0;
  double brier = 0.0;
};

struct MetricReport {
  double brier = 0.0;
  int scored = 0;
  std::vector<TimeBrier> per_time;
  double coverage = 0.0;
  double mean_interval_width = 0.0;
  std::string coverage_rule = "covered iff (o = 1 and high >= 0.5) or (o = 0 and low <= 0.5)";
};

/// Brier score of P (n x T) against O (n x T, entries 0/1) over cells with
/// mask(i) != 0 (all cells when mask is empty). Fills `per_time` when given.
inline double brier_score(const Eigen::MatrixXd& P, const Eigen::MatrixXd& O, const Eigen::VectorXd& mask = {},
                          std::vector<TimeBrier>* per_time = nullptr) {
  detail::require_dims(P.rows() == O.rows() && P.cols() == O.cols(), "probability and outcome shapes differ");
  detail::require_dims(mask.size() == 0 || mask.size() == P.rows(), "mask length differs from cell count");
  if ((P.array() < 0.0).any() || (P.array() > 1.0).any() || !P.allFinite())
    throw DimensionError("probabilities must lie in [0, 1]");
  double total = 0.0;
  long long count = 0;
  for (Eigen::Index t = 0; t < P.cols(); ++t) {
    double st = 0.0;
    int ct = 0;
    for (Eigen::Index i = 0; i < P.rows(); ++i) {
      if (mask.size() > 0 && mask(i) == 0.0) continue;
      const double d = P(i, t) - O(i, t);
      st += d * d;
      ++ct;
    }
    if (per_time) per_time->push_back({static_cast<int>(t), ct, ct > 0 ? st / ct : 0.0});
    total += st;
    count += ct;
  }
  if (count == 0) throw EmptyInputError("no cells to score");
  return total / static_cast<double>(count);
}

/// Scores P (n x T) against series steps [t0, t0 + T).
inline double brier_score(const Eigen::MatrixXd& P, const BinarySeries& O, int t0 = 0,
                          std::vector<TimeBrier>* per_time = nullptr) {
  detail::require_dims(t0 >= 0 && t0 + P.cols() <= O.steps(), "outcome series too short");
  Eigen::VectorXd mask;
  if (O.grid().has_mask()) {
    mask.resize(O.cells());
    for (int i = 0; i < O.cells(); ++i) mask(i) = O.grid().is_active(i) ? 1.0 : 0.0;
  }
  std::vector<TimeBrier> local;
  const double b = brier_score(P, O.as_double().middleCols(t0, P.cols()), mask, per_time ? &local : nullptr);
  if (per_time)
    for (auto& row : local) per_time->push_back({row.t + t0, row.cells, row.brier});
  return b;
}

/// Fraction of cells whose interval is consistent with the observed outcome:
/// covered iff (o = 1 and high >= 0.5) or (o = 0 and low <= 0.5).
inline double empirical_coverage(const Eigen::VectorXd& low, const Eigen::VectorXd& high, const Eigen::VectorXd& o,
                                 const Eigen::VectorXd& mask = {}) {
  detail::require_dims(low.size() == high.size() && low.size() == o.size(), "interval and outcome lengths differ");
  detail::require_dims(mask.size() == 0 || mask.size() == o.size(), "mask length differs from cell count");
  if (o.size() == 0) throw EmptyInputError("no intervals");
  int covered = 0, total = 0;
  for (Eigen::Index i = 0; i < o.size(); ++i) {
    if (mask.size() > 0 && mask(i) == 0.0) continue;
    if (!(low(i) <= high(i))) throw DimensionError("interval with low > high");
    ++total;
    if ((o(i) == 1.0 && high(i) >= 0.5) || (o(i) == 0.0 && low(i) <= 0.5)) ++covered;
  }
  if (total == 0) throw EmptyInputError("no intervals in scope");
  return static_cast<double>(covered) / total;
}

/// Fraction of cells whose interval contains a known probability.
inline double interval_contains(const Eigen::VectorXd& low, const Eigen::VectorXd& high, const Eigen::VectorXd& p,
                                const Eigen::VectorXd& mask = {}) {
  detail::require_dims(low.size() == high.size() && low.size() == p.size(), "interval and truth lengths differ");
  int inside = 0, total = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (mask.size() > 0 && mask(i) == 0.0) continue;
    ++total;
    if (low(i) <= p(i) && p(i) <= high(i)) ++inside;
  }
  if (total == 0) throw EmptyInputError("no intervals in scope");
  return static_cast<double>(inside) / total;
}

}  // namespace besn
