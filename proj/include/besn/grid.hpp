#pragma once

// Grid geometry, binary state series and local-rule covariates.
//
// Time is 0-based throughout the library: column t of a BinarySeries is the
// field at the (t+1)-th observation time.

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "besn/error.hpp"

namespace besn {

using StateMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;
using StateVector = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>;

class GridSpec {
 public:
  GridSpec() = default;

  GridSpec(int n_rows, int n_cols) : rows_(n_rows), cols_(n_cols) {
    if (n_rows <= 0 || n_cols <= 0) throw DimensionError("grid dimensions must be positive");
  }

  /// Bounding grid with an active-cell mask (1 = active). Inactive cells are
  /// excluded from likelihoods and metrics.
  GridSpec(int n_rows, int n_cols, std::vector<std::uint8_t> active)
      : GridSpec(n_rows, n_cols) {
    if (static_cast<int>(active.size()) != size())
      throw DimensionError("active mask length does not match grid size");
    active_ = std::move(active);
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int size() const { return rows_ * cols_; }

  int index(int row, int col) const { return row * cols_ + col; }
  int row_of(int i) const { return i / cols_; }
  int col_of(int i) const { return i % cols_; }

  bool contains(int row, int col) const {
    return row >= 0 && row < rows_ && col >= 0 && col < cols_;
  }

  bool has_mask() const { return !active_.empty(); }
  bool is_active(int i) const { return active_.empty() || active_[i] != 0; }
  const std::vector<std::uint8_t>& active_mask() const { return active_; }

  int active_count() const {
    if (active_.empty()) return size();
    return static_cast<int>(std::count(active_.begin(), active_.end(), std::uint8_t{1}));
  }

  bool operator==(const GridSpec&) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<std::uint8_t> active_;
};

class BinarySeries {
 public:
  BinarySeries() = default;

  BinarySeries(GridSpec grid, StateMatrix values) : grid_(std::move(grid)), values_(std::move(values)) {
    if (values_.rows() != grid_.size())
      throw DimensionError("series has " + std::to_string(values_.rows()) + " cells, grid has " +
                           std::to_string(grid_.size()));
    for (Eigen::Index t = 0; t < values_.cols(); ++t)
      for (Eigen::Index i = 0; i < values_.rows(); ++i)
        if (values_(i, t) > 1)
          throw ParseError("non-binary value at cell " + std::to_string(i) + ", time " +
                           std::to_string(t));
  }

  const GridSpec& grid() const { return grid_; }
  int cells() const { return grid_.size(); }
  int steps() const { return static_cast<int>(values_.cols()); }
  bool empty() const { return values_.cols() == 0; }

  const StateMatrix& values() const { return values_; }
  auto field(int t) const { return values_.col(t); }
  std::uint8_t at(int cell, int t) const { return values_(cell, t); }

  /// First `n_steps` time points.
  BinarySeries head(int n_steps) const {
    if (n_steps < 0 || n_steps > steps()) throw DimensionError("head length out of range");
    return BinarySeries(grid_, values_.leftCols(n_steps));
  }

  Eigen::MatrixXd as_double() const { return values_.cast<double>(); }

  bool operator==(const BinarySeries& o) const {
    return grid_ == o.grid_ && values_.rows() == o.values_.rows() &&
           values_.cols() == o.values_.cols() && values_ == o.values_;
  }

 private:
  GridSpec grid_;
  StateMatrix values_;
};

/// Static per-cell covariate broadcast over time (e.g. a region indicator).
struct RegionMask {
  std::string name;
  Eigen::VectorXd values;
};

class CovariateTensor {
 public:
  CovariateTensor() = default;

  CovariateTensor(GridSpec grid, std::vector<std::string> names, std::vector<Eigen::MatrixXd> slices)
      : grid_(std::move(grid)), names_(std::move(names)), slices_(std::move(slices)) {
    for (const auto& s : slices_) {
      if (s.rows() != grid_.size() || s.cols() != static_cast<Eigen::Index>(names_.size()))
        throw DimensionError("covariate slice dimensions are inconsistent");
      if (!s.allFinite()) throw NumericalError("covariates must be finite");
    }
  }

  const GridSpec& grid() const { return grid_; }
  int steps() const { return static_cast<int>(slices_.size()); }
  int n_x() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }
  const Eigen::MatrixXd& slice(int t) const { return slices_.at(t); }
  const std::vector<Eigen::MatrixXd>& slices() const { return slices_; }

  CovariateTensor head(int n_steps) const {
    return CovariateTensor(grid_, names_,
                           std::vector<Eigen::MatrixXd>(slices_.begin(), slices_.begin() + n_steps));
  }

 private:
  GridSpec grid_;
  std::vector<std::string> names_;
  std::vector<Eigen::MatrixXd> slices_;
};

/// Count of state-1 cells among the (at most 8) queen neighbours of every cell.
/// Neighbourhoods are truncated at the boundary.
template <typename Field>
Eigen::VectorXi queen_neighbor_counts(const Eigen::MatrixBase<Field>& field, const GridSpec& grid) {
  detail::require_dims(field.size() == grid.size(), "field length does not match grid size");
  Eigen::VectorXi counts = Eigen::VectorXi::Zero(grid.size());
  for (int r = 0; r < grid.rows(); ++r) {
    for (int c = 0; c < grid.cols(); ++c) {
      int k = 0;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          if ((dr == 0 && dc == 0) || !grid.contains(r + dr, c + dc)) continue;
          k += field(grid.index(r + dr, c + dc)) != 0 ? 1 : 0;
        }
      counts(grid.index(r, c)) = k;
    }
  }
  return counts;
}

/// Covariate slice at time `t` in [0, steps]. The neighbour count is lagged by
/// one step; t = 0 uses the initial field, t = steps is the one-step-ahead
/// slice built from the last observed field.
inline Eigen::MatrixXd covariate_slice(const BinarySeries& series, const std::vector<RegionMask>& masks,
                                       int t) {
  if (series.empty()) throw EmptyInputError("series has no time points");
  if (t < 0 || t > series.steps()) throw DimensionError("covariate time out of range");
  const int n = series.cells();
  Eigen::MatrixXd x(n, 1 + static_cast<Eigen::Index>(masks.size()));
  const int source = t == 0 ? 0 : t - 1;
  x.col(0) = queen_neighbor_counts(series.field(source), series.grid()).cast<double>();
  for (std::size_t m = 0; m < masks.size(); ++m) {
    detail::require_dims(masks[m].values.size() == n, "region mask '" + masks[m].name + "' has wrong length");
    x.col(static_cast<Eigen::Index>(m) + 1) = masks[m].values;
  }
  return x;
}

inline CovariateTensor build_covariates(const BinarySeries& series, const std::vector<RegionMask>& masks) {
  if (series.empty()) throw EmptyInputError("series has no time points");
  std::vector<std::string> names{"neighbors"};
  for (const auto& m : masks) names.push_back(m.name);
  std::vector<Eigen::MatrixXd> slices;
  slices.reserve(series.steps());
  for (int t = 0; t < series.steps(); ++t) slices.push_back(covariate_slice(series, masks, t));
  return CovariateTensor(series.grid(), std::move(names), std::move(slices));
}

/// Lag-1 neighbour counts as an n x n_steps input matrix for the reservoir.
/// Column t holds the counts of field t-1 (field 0 for t = 0); n_steps may be
/// one larger than the series to produce the forecast input.
inline Eigen::MatrixXd lagged_neighbor_inputs(const BinarySeries& series, int n_steps) {
  if (series.empty()) throw EmptyInputError("series has no time points");
  if (n_steps < 1 || n_steps > series.steps() + 1) throw DimensionError("input length out of range");
  Eigen::MatrixXd z(series.cells(), n_steps);
  for (int t = 0; t < n_steps; ++t)
    z.col(t) = queen_neighbor_counts(series.field(t == 0 ? 0 : t - 1), series.grid()).cast<double>();
  return z;
}

/// Quadrant id per cell: 1 top-right, 2 top-left, 3 bottom-left, 4 bottom-right.
inline std::vector<int> quadrant_regions(const GridSpec& grid) {
  std::vector<int> q(grid.size());
  for (int i = 0; i < grid.size(); ++i) {
    const bool top = grid.row_of(i) < grid.rows() / 2;
    const bool left = grid.col_of(i) < grid.cols() / 2;
    q[i] = top ? (left ? 2 : 1) : (left ? 3 : 4);
  }
  return q;
}

inline RegionMask left_half_mask(const GridSpec& grid, std::string name = "left") {
  Eigen::VectorXd v(grid.size());
  for (int i = 0; i < grid.size(); ++i) v(i) = grid.col_of(i) < grid.cols() / 2 ? 1.0 : 0.0;
  return {std::move(name), v};
}

}  // namespace besn
