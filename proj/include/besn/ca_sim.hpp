#pragma once

// Stochastic cellular automaton used to generate synthetic binary spread data.

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <map>
#include <vector>

#include "besn/error.hpp"
#include "besn/grid.hpp"
#include "besn/rng.hpp"

namespace besn {

struct CaRules {
  /// Probability increment per state-1 neighbour.
  double per_neighbor_prob = 0.05;
  /// Region id per cell; empty means every cell is region 0.
  std::vector<int> regions;
  /// Region id -> boost b; the transition probability is scaled by (1 + b).
  std::map<int, double> region_boost;
  /// State 1 is absorbing.
  bool frozen = true;
  StateVector initial_field;

  double boost_for(int cell) const {
    if (regions.empty()) return 0.0;
    auto it = region_boost.find(regions[cell]);
    return it == region_boost.end() ? 0.0 : it->second;
  }

  void validate(const GridSpec& grid) const {
    if (!(per_neighbor_prob >= 0.0 && per_neighbor_prob <= 0.125))
      throw ConfigError("per_neighbor_prob must lie in [0, 1/8]");
    for (const auto& [id, b] : region_boost)
      if (!(b >= 0.0)) throw ConfigError("region boosts must be nonnegative");
    detail::require_dims(initial_field.size() == grid.size(), "initial field length does not match grid");
    detail::require_dims(regions.empty() || static_cast<int>(regions.size()) == grid.size(),
                         "region map length does not match grid");
  }
};

inline double transition_prob(int neighbor_count, double region_boost, const CaRules& rules) {
  if (neighbor_count < 0 || neighbor_count > 8) throw DimensionError("neighbor count must be in [0, 8]");
  const double p = rules.per_neighbor_prob * neighbor_count * (1.0 + region_boost);
  return std::clamp(p, 0.0, 1.0);
}

/// Runs the automaton for `steps` time points; column 0 is the initial field.
/// One uniform draw is consumed per cell per step in row-major order, whether
/// or not the cell can change.
inline BinarySeries simulate(const GridSpec& grid, const CaRules& rules, int steps, std::uint64_t seed) {
  rules.validate(grid);
  if (steps < 1) throw DimensionError("simulation needs at least one time step");
  const int n = grid.size();
  StateMatrix y(n, steps);
  y.col(0) = rules.initial_field;
  for (int i = 0; i < n; ++i)
    if (!grid.is_active(i)) y(i, 0) = 0;
  Philox rng(seed);
  for (int t = 1; t < steps; ++t) {
    const Eigen::VectorXi counts = queen_neighbor_counts(y.col(t - 1), grid);
    for (int i = 0; i < n; ++i) {
      const double u = rng.uniform();
      if (!grid.is_active(i)) {
        y(i, t) = 0;
        continue;
      }
      const double p = transition_prob(counts(i), rules.boost_for(i), rules);
      if (y(i, t - 1) == 0) {
        y(i, t) = u < p ? 1 : 0;
      } else if (rules.frozen) {
        y(i, t) = 1;
      } else {
        // Experimental non-absorbing dynamics: a burning cell stays on with p.
        y(i, t) = u < p ? 1 : 0;
      }
    }
  }
  return BinarySeries(grid, std::move(y));
}

/// True probability that each cell is in state 1 at time t given field t-1,
/// for t >= 1. Column 0 is the initial field itself.
inline Eigen::MatrixXd true_state_probabilities(const BinarySeries& series, const CaRules& rules, int n_steps) {
  if (n_steps < 1 || n_steps > series.steps() + 1) throw DimensionError("probability horizon out of range");
  const GridSpec& grid = series.grid();
  Eigen::MatrixXd p(grid.size(), n_steps);
  p.col(0) = series.field(0).cast<double>();
  for (int t = 1; t < n_steps; ++t) {
    const Eigen::VectorXi counts = queen_neighbor_counts(series.field(t - 1), grid);
    for (int i = 0; i < grid.size(); ++i) {
      const double q = grid.is_active(i) ? transition_prob(counts(i), rules.boost_for(i), rules) : 0.0;
      p(i, t) = (series.at(i, t - 1) == 1 && rules.frozen) ? 1.0 : q;
    }
  }
  return p;
}

/// The diffusive spread experiment: 5% per burning neighbour, +10% in quadrant
/// II, +25% in quadrant III, frozen state 1, four centre cells initially on.
inline CaRules quadrant_spread_rules(const GridSpec& grid) {
  CaRules rules;
  rules.per_neighbor_prob = 0.05;
  rules.regions = quadrant_regions(grid);
  rules.region_boost = {{2, 0.10}, {3, 0.25}};
  rules.frozen = true;
  rules.initial_field = StateVector::Zero(grid.size());
  const int r0 = grid.rows() / 2 - 1;
  const int c0 = grid.cols() / 2 - 1;
  for (int dr = 0; dr < 2; ++dr)
    for (int dc = 0; dc < 2; ++dc)
      if (grid.contains(r0 + dr, c0 + dc)) rules.initial_field(grid.index(r0 + dr, c0 + dc)) = 1;
  return rules;
}

}  // namespace besn
