#pragma once

// Bayesian logistic CA model with an echo-state latent term:
//
//   logit p_t = alpha + X_t beta + V h_t
//   V[i,j] = z[i,j] * tau * lambda_tilde[i,j]
//   lambda_tilde^2 = c^2 lambda^2 / (c^2 + tau^2 lambda^2),  c = slab_scale sqrt(c_aux)
//   z ~ N(0,1), lambda ~ half-t(nu_local, 0, 1), tau ~ half-t(nu_global, 0, 2 scale_global)
//   c_aux ~ InvGamma(slab_df/2, slab_df/2), alpha ~ N(0, scale_icept^2), beta ~ N(0, scale_beta^2)
//
// The sampler works on the unconstrained vector
//   [ z (n*n_h) | log lambda (n*n_h) | alpha (n or 1) | beta (n_x) | log tau | log c_aux ]
// with matrices stored column-major. Models without a reservoir (n_h = 0)
// drop z, lambda, tau and c_aux.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

#include "besn/error.hpp"

namespace besn {

struct HorseshoeConfig {
  double scale_global = 0.0;  // <= 0 means: use the expected-nonzero heuristic
  double nu_global = 1.0;
  double nu_local = 1.0;
  double slab_scale = 2.0;
  double slab_df = 4.0;
  double scale_icept = 5.0;
  double scale_beta = 5.0;
  /// One intercept shared by every cell instead of a per-cell offset.
  bool shared_intercept = false;
  /// Restrict the likelihood to cells in state 0 at the previous step.
  bool at_risk_only = false;
  /// Prior guess of the fraction of nonzero output weights, for the heuristic.
  double expected_nonzero_fraction = 0.1;

  void validate() const {
    if (!(nu_global >= 1.0) || !(nu_local >= 1.0) || !(slab_df >= 1.0))
      throw ConfigError("degrees of freedom must be at least 1");
    if (!(slab_scale > 0.0) || !(scale_icept > 0.0) || !(scale_beta > 0.0))
      throw ConfigError("prior scales must be positive");
    if (!(expected_nonzero_fraction > 0.0 && expected_nonzero_fraction < 1.0))
      throw ConfigError("expected_nonzero_fraction must lie in (0, 1)");
  }

  /// Global scale from the expected number of relevant coefficients:
  /// p0 / (D - p0) * sigma / sqrt(N) with the logistic pseudo-sigma 2.
  double resolved_scale_global(int n_obs) const {
    if (scale_global > 0.0) return scale_global;
    const double f = expected_nonzero_fraction;
    return f / (1.0 - f) * 2.0 / std::sqrt(std::max(n_obs, 1));
  }
};

/// Observed data for one fit. `y` and `mask` are n x T; `x` has one n x n_x
/// slice per time; `h` is n_h x T (n_h may be 0).
struct FitData {
  Eigen::MatrixXd y;
  std::vector<Eigen::MatrixXd> x;
  Eigen::MatrixXd h;
  Eigen::MatrixXd mask;

  int n() const { return static_cast<int>(y.rows()); }
  int steps() const { return static_cast<int>(y.cols()); }
  int n_h() const { return static_cast<int>(h.rows()); }
  int n_x() const { return x.empty() ? 0 : static_cast<int>(x.front().cols()); }

  void validate() const {
    const auto T = y.cols();
    detail::require_dims(mask.rows() == y.rows() && mask.cols() == T, "likelihood mask has wrong shape");
    detail::require_dims(h.rows() == 0 || h.cols() == T, "reservoir states do not cover every time point");
    detail::require_dims(x.empty() || static_cast<Eigen::Index>(x.size()) == T, "one covariate slice per time");
    for (const auto& s : x)
      detail::require_dims(s.rows() == y.rows() && s.cols() == x.front().cols(), "covariate slice shape");
    for (Eigen::Index t = 0; t < T; ++t)
      for (Eigen::Index i = 0; i < y.rows(); ++i)
        if (y(i, t) != 0.0 && y(i, t) != 1.0) throw ParseError("responses must be 0 or 1");
  }
};

/// Constrained parameter values. V is derived from (z, lambda, tau, c_aux).
struct ModelState {
  Eigen::MatrixXd V;       // n x n_h
  Eigen::VectorXd alpha;   // n, or 1 when shared
  Eigen::VectorXd beta;    // n_x
  double tau = 1.0;
  Eigen::MatrixXd lambda;  // n x n_h
  double c_aux = 1.0;
  Eigen::MatrixXd z;       // n x n_h
};

inline double slab_width(double slab_scale, double c_aux) { return slab_scale * std::sqrt(c_aux); }

/// lambda_tilde for a single coefficient.
inline double regularized_local_scale(double lambda, double tau, double c) {
  const double c2 = c * c;
  return std::sqrt(c2 * lambda * lambda / (c2 + tau * tau * lambda * lambda));
}

/// Rebuilds V = z * tau * lambda_tilde.
inline void refresh_output_weights(ModelState& s, double slab_scale) {
  const double c = slab_width(slab_scale, s.c_aux);
  s.V.resize(s.z.rows(), s.z.cols());
  for (Eigen::Index k = 0; k < s.z.size(); ++k)
    s.V(k) = s.z(k) * s.tau * regularized_local_scale(s.lambda(k), s.tau, c);
}

namespace detail {

inline double log1p_exp(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double inv_logit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Elementwise log1p via log(u) x / (u - 1) with u = 1 + x, which vectorises.
template <typename Derived>
Eigen::ArrayXXd log1p_array(const Eigen::ArrayBase<Derived>& x) {
  const Eigen::ArrayXXd u = 1.0 + x;
  const Eigen::ArrayXXd scaled = u.log() * x / (u - 1.0);
  return (u == 1.0).select(x, scaled);
}

/// log of the half-t(nu, 0, s) density at x > 0, normalising constant included.
inline double log_half_t(double x, double nu, double s) {
  return std::log(2.0) + std::lgamma((nu + 1.0) / 2.0) - std::lgamma(nu / 2.0) - 0.5 * std::log(nu * std::numbers::pi) -
         std::log(s) - (nu + 1.0) / 2.0 * std::log1p((x / s) * (x / s) / nu);
}

inline double log_normal(double x, double sd) {
  return -0.5 * std::log(2.0 * std::numbers::pi) - std::log(sd) - 0.5 * (x / sd) * (x / sd);
}

inline double log_inv_gamma(double x, double a, double b) {
  return a * std::log(b) - std::lgamma(a) - (a + 1.0) * std::log(x) - b / x;
}

}  // namespace detail

/// Inverse-logit of alpha + X_t beta + V h_t, clamped strictly inside (0, 1).
/// x_t must be n x n_x even when n_x = 0; it fixes the number of cells.
inline Eigen::VectorXd logit_probs(const ModelState& s, const Eigen::MatrixXd& x_t, const Eigen::VectorXd& h_t) {
  const Eigen::Index n = x_t.rows();
  detail::require_dims(x_t.cols() == s.beta.size(), "covariate count does not match beta");
  detail::require_dims(s.alpha.size() == 1 || s.alpha.size() == n, "alpha length does not match cells");
  detail::require_dims(h_t.size() == s.V.cols(), "reservoir state does not match V");
  detail::require_dims(s.V.cols() == 0 || s.V.rows() == n, "V rows do not match cells");
  Eigen::VectorXd eta = s.alpha.size() == 1 ? Eigen::VectorXd::Constant(n, s.alpha(0)) : s.alpha;
  if (s.beta.size() > 0) eta += x_t * s.beta;
  if (s.V.cols() > 0) eta += s.V * h_t;
  if (!eta.allFinite()) throw NumericalError("linear predictor is not finite");
  constexpr double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  return eta.unaryExpr([&](double v) { return std::clamp(detail::inv_logit(v), lo, hi); });
}

/// Log posterior density and gradient on the unconstrained scale.
class BinaryCaModel {
 public:
  BinaryCaModel(FitData data, HorseshoeConfig config) : data_(std::move(data)), config_(config) {
    data_.validate();
    config_.validate();
    n_ = data_.n();
    n_h_ = data_.n_h();
    n_x_ = data_.n_x();
    n_alpha_ = config_.shared_intercept ? 1 : n_;
    const int n_obs = static_cast<int>(data_.mask.sum());
    scale_global_ = config_.resolved_scale_global(n_obs);
    tau_scale_ = 2.0 * scale_global_;
  }

  int dim() const { return has_reservoir() ? 2 * n_ * n_h_ + n_alpha_ + n_x_ + 2 : n_alpha_ + n_x_; }
  bool has_reservoir() const { return n_h_ > 0; }
  const FitData& data() const { return data_; }
  const HorseshoeConfig& config() const { return config_; }
  double scale_global() const { return scale_global_; }

  // Offsets into the unconstrained vector.
  int z_offset() const { return 0; }
  int log_lambda_offset() const { return n_ * n_h_; }
  int alpha_offset() const { return has_reservoir() ? 2 * n_ * n_h_ : 0; }
  int beta_offset() const { return alpha_offset() + n_alpha_; }
  int log_tau_offset() const { return beta_offset() + n_x_; }
  int log_caux_offset() const { return log_tau_offset() + 1; }

  ModelState unpack(const Eigen::VectorXd& theta) const {
    detail::require_dims(theta.size() == dim(), "parameter vector has wrong length");
    ModelState s;
    s.alpha = theta.segment(alpha_offset(), n_alpha_);
    s.beta = theta.segment(beta_offset(), n_x_);
    if (has_reservoir()) {
      s.z = Eigen::Map<const Eigen::MatrixXd>(theta.data() + z_offset(), n_, n_h_);
      s.lambda = Eigen::Map<const Eigen::MatrixXd>(theta.data() + log_lambda_offset(), n_, n_h_).array().exp();
      s.tau = std::exp(theta(log_tau_offset()));
      s.c_aux = std::exp(theta(log_caux_offset()));
      refresh_output_weights(s, config_.slab_scale);
    } else {
      s.z.resize(n_, 0);
      s.lambda.resize(n_, 0);
      s.V.resize(n_, 0);
    }
    return s;
  }

  Eigen::VectorXd pack(const ModelState& s) const {
    Eigen::VectorXd theta(dim());
    detail::require_dims(s.alpha.size() == n_alpha_ && s.beta.size() == n_x_, "state has wrong shape");
    theta.segment(alpha_offset(), n_alpha_) = s.alpha;
    theta.segment(beta_offset(), n_x_) = s.beta;
    if (has_reservoir()) {
      detail::require_dims(s.z.rows() == n_ && s.z.cols() == n_h_ && s.lambda.size() == s.z.size(),
                           "state has wrong shape");
      Eigen::Map<Eigen::MatrixXd>(theta.data() + z_offset(), n_, n_h_) = s.z;
      Eigen::Map<Eigen::MatrixXd>(theta.data() + log_lambda_offset(), n_, n_h_) = s.lambda.array().log();
      theta(log_tau_offset()) = std::log(s.tau);
      theta(log_caux_offset()) = std::log(s.c_aux);
    }
    return theta;
  }

  /// n x T linear predictor.
  Eigen::MatrixXd linear_predictor(const ModelState& s) const {
    const int T = data_.steps();
    Eigen::MatrixXd eta(n_, T);
    if (n_alpha_ == 1)
      eta.setConstant(s.alpha(0));
    else
      eta = s.alpha.replicate(1, T);
    if (n_x_ > 0)
      for (int t = 0; t < T; ++t) eta.col(t) += data_.x[t] * s.beta;
    if (has_reservoir()) eta.noalias() += s.V * data_.h;
    return eta;
  }

  double log_density(const Eigen::VectorXd& theta) const {
    Eigen::VectorXd unused;
    return evaluate(theta, unused, false);
  }

  double log_density_gradient(const Eigen::VectorXd& theta, Eigen::VectorXd& grad) const {
    return evaluate(theta, grad, true);
  }

 private:
  double evaluate(const Eigen::VectorXd& theta, Eigen::VectorXd& grad, bool want_grad) const {
    const ModelState s = unpack(theta);
    const Eigen::ArrayXXd eta = linear_predictor(s).array();
    const int T = data_.steps();

    const auto& mask = data_.mask.array();
    const auto& y = data_.y.array();
    const Eigen::ArrayXXd ex = (-eta.abs()).exp();
    const Eigen::ArrayXXd softplus = eta.max(0.0) + detail::log1p_array(ex);
    double lp = (mask * (y * eta - softplus)).sum();
    lp += static_cast<double>(n_alpha_) * log_normal_const(config_.scale_icept) -
          0.5 * s.alpha.squaredNorm() / (config_.scale_icept * config_.scale_icept);
    lp += static_cast<double>(n_x_) * log_normal_const(config_.scale_beta) -
          0.5 * s.beta.squaredNorm() / (config_.scale_beta * config_.scale_beta);

    Eigen::MatrixXd resid;  // d loglik / d eta
    if (want_grad) {
      const Eigen::ArrayXXd p = (eta >= 0.0).select(1.0 / (1.0 + ex), ex / (1.0 + ex));
      resid = (mask * (y - p)).matrix();
      grad.setZero(dim());
      if (n_alpha_ == 1)
        grad(alpha_offset()) = resid.sum();
      else
        grad.segment(alpha_offset(), n_) = resid.rowwise().sum();
      grad.segment(alpha_offset(), n_alpha_) -= s.alpha / (config_.scale_icept * config_.scale_icept);
      if (n_x_ > 0) {
        Eigen::VectorXd gb = Eigen::VectorXd::Zero(n_x_);
        for (int t = 0; t < T; ++t) gb.noalias() += data_.x[t].transpose() * resid.col(t);
        grad.segment(beta_offset(), n_x_) = gb - s.beta / (config_.scale_beta * config_.scale_beta);
      }
    }

    if (!has_reservoir()) {
      if (!std::isfinite(lp)) return -std::numeric_limits<double>::infinity();
      return lp;
    }

    const double nl = config_.nu_local;
    const double ng = config_.nu_global;
    const double a = config_.slab_df / 2.0;
    const double b = config_.slab_df / 2.0;
    const double u_tau = theta(log_tau_offset());
    const double u_caux = theta(log_caux_offset());
    const auto log_lambda = theta.segment(log_lambda_offset(), n_ * n_h_).array();
    const auto lambda = s.lambda.reshaped().array();

    // Priors with log-Jacobians of the log transforms.
    const auto N = static_cast<double>(s.z.size());
    lp += -0.5 * s.z.squaredNorm() + N * log_normal_const(1.0);
    lp += N * log_half_t_const(nl, 1.0) + (-(nl + 1.0) / 2.0 * detail::log1p_array(lambda.square() / nl) + log_lambda).sum();
    lp += detail::log_half_t(s.tau, ng, tau_scale_) + u_tau;
    lp += detail::log_inv_gamma(s.c_aux, a, b) + u_caux;

    if (want_grad) {
      const Eigen::MatrixXd dV = resid * data_.h.transpose();  // n x n_h
      const double c = slab_width(config_.slab_scale, s.c_aux);
      const double c2 = c * c;
      const double tau2 = s.tau * s.tau;
      const Eigen::ArrayXd lam2 = lambda.square();
      const Eigen::ArrayXd r = tau2 * lam2 / (c2 + tau2 * lam2);
      const Eigen::ArrayXd dv = dV.reshaped().array();
      const Eigen::ArrayXd z = s.z.reshaped().array();
      const Eigen::ArrayXd v = s.V.reshaped().array();
      const Eigen::ArrayXd dlogs = dv * v;  // d loglik / d log(scale)
      // scale = tau * lambda_tilde, written as c * tau * lambda / sqrt(c^2 + tau^2 lambda^2)
      const Eigen::ArrayXd scale = c * s.tau * lambda / (c2 + tau2 * lam2).sqrt();
      const auto NN = n_ * n_h_;
      grad.segment(z_offset(), NN) = (dv * scale - z).matrix();
      grad.segment(log_lambda_offset(), NN) = (dlogs * (1.0 - r) - (nl + 1.0) * lam2 / (nl + lam2) + 1.0).matrix();
      double g_tau = (dlogs * (1.0 - r)).sum();
      double g_caux = 0.5 * (dlogs * r).sum();
      const double ts2 = tau_scale_ * tau_scale_;
      g_tau += -(ng + 1.0) * tau2 / (ng * ts2 + tau2) + 1.0;
      g_caux += -a + b * std::exp(-u_caux);
      grad(log_tau_offset()) = g_tau;
      grad(log_caux_offset()) = g_caux;
    }
    if (!std::isfinite(lp)) return -std::numeric_limits<double>::infinity();
    return lp;
  }

  static double log_normal_const(double sd) { return -0.5 * std::log(2.0 * std::numbers::pi) - std::log(sd); }
  static double log_half_t_const(double nu, double s) {
    return std::log(2.0) + std::lgamma((nu + 1.0) / 2.0) - std::lgamma(nu / 2.0) - 0.5 * std::log(nu * std::numbers::pi) -
           std::log(s);
  }

  FitData data_;
  HorseshoeConfig config_;
  int n_ = 0;
  int n_h_ = 0;
  int n_x_ = 0;
  int n_alpha_ = 0;
  double scale_global_ = 1.0;
  double tau_scale_ = 1.0;
};

/// Builds the full-likelihood mask for n x T responses; with `at_risk_only`,
/// cells already in state 1 at t-1 are dropped. Inactive cells are always dropped.
inline Eigen::MatrixXd likelihood_mask(const Eigen::MatrixXd& y, const std::vector<std::uint8_t>& active,
                                       bool at_risk_only) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Ones(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    if (!active.empty() && active[i] == 0) m.row(i).setZero();
    if (at_risk_only)
      for (Eigen::Index t = 1; t < y.cols(); ++t)
        if (y(i, t - 1) == 1.0) m(i, t) = 0.0;
  }
  return m;
}

inline double log_posterior(const ModelState& s, const FitData& data, const HorseshoeConfig& config) {
  BinaryCaModel model(data, config);
  return model.log_density(model.pack(s));
}

inline Eigen::VectorXd grad_log_posterior(const ModelState& s, const FitData& data, const HorseshoeConfig& config) {
  BinaryCaModel model(data, config);
  Eigen::VectorXd g;
  model.log_density_gradient(model.pack(s), g);
  return g;
}

}  // namespace besn
