#pragma once

// Echo state network reservoirs: sparse random weights, spectral radius and
// the hidden-state recursion h_t = tanh((nu / rho(W)) W h_{t-1} + U z_t).

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "besn/error.hpp"
#include "besn/rng.hpp"

namespace besn {

enum class Activation { Tanh, Identity };

struct ReservoirParams {
  int n_h = 20;
  double nu = 0.5;
  double pi_w = 0.1;
  double pi_u = 0.1;
  double a_w = 0.1;
  double a_u = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_h < 1) throw ConfigError("n_h must be at least 1");
    if (!(nu > 0.0 && nu <= 1.0)) throw ConfigError("nu must lie in (0, 1]");
    if (!(pi_w > 0.0 && pi_w <= 1.0) || !(pi_u > 0.0 && pi_u <= 1.0))
      throw ConfigError("inclusion probabilities must lie in (0, 1]");
    if (!(a_w > 0.0) || !(a_u > 0.0)) throw ConfigError("uniform half-widths must be positive");
  }
};

struct ReservoirWeights {
  Eigen::MatrixXd W;
  Eigen::MatrixXd U;
  /// Spectral radius of the unscaled W.
  double spectral_radius_w = 0.0;
  /// Seed that produced the accepted draw (differs from params.seed after a retry).
  std::uint64_t seed_used = 0;

  int n_h() const { return static_cast<int>(W.rows()); }
  int n_z() const { return static_cast<int>(U.cols()); }
};

struct ReservoirStates {
  Eigen::MatrixXd H;  // n_h x T, column t is h_t
  Eigen::VectorXd h0;
};

class SpectralRadiusError : public NumericalError {
 public:
  SpectralRadiusError(const std::string& what, double last_estimate)
      : NumericalError(what), last_estimate_(last_estimate) {}
  double last_estimate() const { return last_estimate_; }

 private:
  double last_estimate_;
};

namespace detail {

/// True when the directed graph of nonzero entries has no cycle, in which case
/// W is permutation-similar to a strictly triangular matrix and every
/// eigenvalue is exactly zero.
inline bool structurally_nilpotent(const Eigen::MatrixXd& W) {
  const Eigen::Index n = W.rows();
  std::vector<int> indegree(n, 0);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (W(i, j) != 0.0) ++indegree[j];
  std::vector<Eigen::Index> ready;
  for (Eigen::Index j = 0; j < n; ++j)
    if (indegree[j] == 0) ready.push_back(j);
  Eigen::Index removed = 0;
  while (!ready.empty()) {
    const Eigen::Index i = ready.back();
    ready.pop_back();
    ++removed;
    for (Eigen::Index j = 0; j < n; ++j)
      if (W(i, j) != 0.0 && --indegree[j] == 0) ready.push_back(j);
  }
  return removed == n;
}

}  // namespace detail

/// Largest eigenvalue modulus of a square matrix.
///
/// Block power iteration: a b-column orthonormal block is repeatedly multiplied
/// by W and re-orthonormalised, and the Ritz values of the projected b x b
/// matrix give the eigenvalue estimates. A block (rather than a single vector)
/// handles complex-conjugate and +/- dominant pairs, which make scalar power
/// iteration oscillate. Stops when the residual of the dominant Ritz pair falls
/// below `tol` relative to the estimate.
inline double spectral_radius(const Eigen::MatrixXd& W, double tol = 1e-10, int max_iter = 50000) {
  using Eigen::Index;
  if (W.rows() != W.cols()) throw DimensionError("spectral radius needs a square matrix");
  if (!W.allFinite()) throw NumericalError("matrix has non-finite entries");
  const Index n = W.rows();
  if (n == 0) throw DimensionError("spectral radius of an empty matrix");
  if (detail::structurally_nilpotent(W)) return 0.0;

  const Index b = std::min<Index>(n, 12);
  Philox rng(0x5EC7A1ULL, static_cast<std::uint64_t>(n));
  Eigen::MatrixXd Q(n, b);
  for (Index j = 0; j < b; ++j)
    for (Index i = 0; i < n; ++i) Q(i, j) = rng.normal();
  Q = Eigen::HouseholderQR<Eigen::MatrixXd>(Q).householderQ() * Eigen::MatrixXd::Identity(n, b);

  double estimate = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::MatrixXd Z = W * Q;
    if (Z.cwiseAbs().maxCoeff() <= 1e-300) return 0.0;
    const Eigen::MatrixXd B = Q.transpose() * Z;
    Eigen::EigenSolver<Eigen::MatrixXd> es(B, true);
    if (es.info() != Eigen::Success) throw SpectralRadiusError("Ritz eigen-solve failed", estimate);
    Index top = 0;
    const auto theta = es.eigenvalues();
    for (Index j = 1; j < b; ++j)
      if (std::abs(theta(j)) > std::abs(theta(top))) top = j;
    estimate = std::abs(theta(top));

    const Eigen::VectorXcd y = es.eigenvectors().col(top);
    const Eigen::VectorXcd v = Q.cast<std::complex<double>>() * y;
    const Eigen::VectorXcd r = Z.cast<std::complex<double>>() * y - theta(top) * v;
    if (b == n || r.norm() <= tol * estimate * v.norm()) return estimate;

    Q = Eigen::HouseholderQR<Eigen::MatrixXd>(Z).householderQ() * Eigen::MatrixXd::Identity(n, b);
  }
  throw SpectralRadiusError("spectral radius did not converge", estimate);
}

namespace detail {

inline Eigen::MatrixXd sparse_uniform(Philox& rng, Eigen::Index rows, Eigen::Index cols, double pi, double a) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      const bool include = rng.uniform() < pi;
      const double value = rng.uniform(-a, a);
      m(i, j) = include ? value : 0.0;
    }
  return m;
}

}  // namespace detail

/// Draws W (n_h x n_h) and U (n_h x n_z) as spike-and-uniform mixtures. A draw
/// whose W has zero spectral radius is rejected and redrawn from the next seed.
inline ReservoirWeights generate_weights(const ReservoirParams& params, int n_z, int max_retries = 32) {
  params.validate();
  if (n_z < 1) throw DimensionError("input dimension must be at least 1");
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    const std::uint64_t seed = params.seed + static_cast<std::uint64_t>(attempt);
    Philox rng(seed);
    ReservoirWeights w;
    w.W = detail::sparse_uniform(rng, params.n_h, params.n_h, params.pi_w, params.a_w);
    w.U = detail::sparse_uniform(rng, params.n_h, n_z, params.pi_u, params.a_u);
    w.spectral_radius_w = spectral_radius(w.W);
    w.seed_used = seed;
    if (w.spectral_radius_w > 0.0) return w;
  }
  throw NumericalError("reservoir W had zero spectral radius after " + std::to_string(max_retries + 1) +
                       " draws");
}

/// Runs the recursion over the columns of `inputs` (n_z x T). h0 defaults to 0.
inline ReservoirStates run_reservoir(const ReservoirWeights& weights, const Eigen::MatrixXd& inputs, double nu,
                                     const std::optional<Eigen::VectorXd>& h0 = std::nullopt,
                                     Activation activation = Activation::Tanh) {
  detail::require_dims(inputs.rows() == weights.n_z(), "input dimension does not match U");
  if (!(weights.spectral_radius_w > 0.0)) throw NumericalError("reservoir has zero spectral radius");
  const int n_h = weights.n_h();
  ReservoirStates out;
  out.h0 = h0.value_or(Eigen::VectorXd::Zero(n_h));
  detail::require_dims(out.h0.size() == n_h, "initial state has wrong dimension");
  const Eigen::MatrixXd Ws = (nu / weights.spectral_radius_w) * weights.W;
  const Eigen::MatrixXd drive = weights.U * inputs;
  out.H.resize(n_h, inputs.cols());
  Eigen::VectorXd h = out.h0;
  for (Eigen::Index t = 0; t < inputs.cols(); ++t) {
    Eigen::VectorXd a = Ws * h + drive.col(t);
    if (activation == Activation::Tanh) a = a.array().tanh();
    h = std::move(a);
    out.H.col(t) = h;
  }
  return out;
}

/// Per-row centring and scaling of reservoir inputs, fitted on a training
/// window and reused for forecasting. Constant rows get scale 1.
struct InputScaler {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  static InputScaler fit(const Eigen::MatrixXd& z) {
    if (z.cols() == 0) throw EmptyInputError("cannot fit input scaler on zero columns");
    InputScaler s;
    s.mean = z.rowwise().mean();
    s.scale.resize(z.rows());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const double var = z.cols() > 1
                             ? (z.row(i).array() - s.mean(i)).square().sum() / static_cast<double>(z.cols() - 1)
                             : 0.0;
      s.scale(i) = var > 1e-12 ? std::sqrt(var) : 1.0;
    }
    return s;
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& z) const {
    detail::require_dims(z.rows() == mean.size(), "input scaler dimension mismatch");
    return (z.colwise() - mean).array().colwise() / scale.array();
  }
};

}  // namespace besn
