#pragma once

// No-U-Turn sampler with multinomial trajectory sampling, a diagonal metric
// and windowed warmup adaptation (dual-averaging step size, regularised
// variance estimate for the metric).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <vector>

#include "besn/error.hpp"
#include "besn/parallel.hpp"
#include "besn/rng.hpp"

namespace besn {

template <typename T>
concept DifferentiableDensity = requires(const T& t, const Eigen::VectorXd& x, Eigen::VectorXd& g) {
  { t.dim() } -> std::convertible_to<int>;
  { t.log_density_gradient(x, g) } -> std::convertible_to<double>;
};

struct SamplerConfig {
  int chains = 4;
  int warmup = 1000;
  int samples = 1000;  // retained per chain; each costs `thin` transitions
  int thin = 1;
  int max_depth = 10;
  double adapt_delta = 0.8;
  double init_radius = 2.0;
  std::uint64_t seed = 1;
  int workers = 1;
  /// Fraction of divergent post-warmup transitions above which a run is flagged.
  double max_divergence_fraction = 0.05;
  double max_rhat = 1.05;

  void validate() const {
    if (chains < 1) throw ConfigError("need at least one chain");
    if (warmup < 1) throw ConfigError("warmup must be at least 1");
    if (samples < 1 || thin < 1) throw ConfigError("samples and thin must be positive");
    if (max_depth < 1) throw ConfigError("max_depth must be positive");
    if (!(adapt_delta > 0.0 && adapt_delta < 1.0)) throw ConfigError("adapt_delta must lie in (0, 1)");
  }
};

struct ChainDiagnostics {
  int divergences = 0;
  double mean_accept_stat = 0.0;
  double step_size = 0.0;
  double mean_tree_depth = 0.0;
  int max_depth_hits = 0;
  long long gradient_evaluations = 0;
};

struct ChainResult {
  Eigen::MatrixXd draws;  // dim x retained, unconstrained scale
  ChainDiagnostics diagnostics;
};

namespace detail {

inline double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

/// Dual averaging of log step size towards a target acceptance statistic.
class StepSizeAdapter {
 public:
  explicit StepSizeAdapter(double delta) : delta_(delta) {}

  void restart(double epsilon) {
    mu_ = std::log(10.0 * epsilon);
    s_bar_ = 0.0;
    x_bar_ = 0.0;
    counter_ = 0;
  }

  double learn(double accept_stat) {
    ++counter_;
    const double eta = 1.0 / (counter_ + t0_);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - accept_stat);
    const double x = mu_ - s_bar_ * std::sqrt(static_cast<double>(counter_)) / gamma_;
    const double x_eta = std::pow(static_cast<double>(counter_), -kappa_);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    return std::exp(x);
  }

  double final_step() const { return std::exp(x_bar_); }

 private:
  double delta_;
  double mu_ = 0.0;
  double s_bar_ = 0.0;
  double x_bar_ = 0.0;
  double counter_ = 0;
  double gamma_ = 0.05;
  double kappa_ = 0.75;
  double t0_ = 10.0;
};

/// Warmup schedule: fast initial buffer, doubling slow windows for the metric,
/// fast terminal buffer.
class WindowSchedule {
 public:
  explicit WindowSchedule(int warmup) : warmup_(warmup) {
    if (warmup < 20) {
      init_buffer_ = warmup;
      term_buffer_ = 0;
      base_window_ = 0;
    } else if (75 + 50 + 25 > warmup) {
      init_buffer_ = static_cast<int>(0.15 * warmup);
      term_buffer_ = static_cast<int>(0.1 * warmup);
      base_window_ = warmup - (init_buffer_ + term_buffer_);
    }
    window_size_ = base_window_;
    window_end_ = init_buffer_ + window_size_;
    clamp_end();
  }

  bool in_slow_window(int iter) const {
    return base_window_ > 0 && iter >= init_buffer_ && iter < warmup_ - term_buffer_;
  }

  /// True when iteration `iter` closes a slow window; advances to the next one.
  bool end_of_window(int iter) {
    if (!in_slow_window(iter) || iter + 1 != window_end_) return false;
    window_size_ *= 2;
    window_end_ = iter + 1 + window_size_;
    clamp_end();
    return true;
  }

 private:
  void clamp_end() {
    const int slow_end = warmup_ - term_buffer_;
    // Stretch the last window when the next one would not fit.
    if (window_end_ + 2 * window_size_ > slow_end) window_end_ = slow_end;
  }

  int warmup_;
  int init_buffer_ = 75;
  int term_buffer_ = 50;
  int base_window_ = 25;
  int window_size_ = 25;
  int window_end_ = 0;
};

template <DifferentiableDensity Target>
class NutsChain {
 public:
  NutsChain(const Target& target, const SamplerConfig& config, std::uint64_t chain_seed)
      : target_(target), config_(config), rng_(chain_seed), dim_(target.dim()), adapter_(config.adapt_delta) {
    inv_metric_ = Eigen::VectorXd::Ones(dim_);
  }

  ChainResult run(const Eigen::VectorXd* init) {
    initialize(init);
    find_reasonable_step();
    adapter_.restart(epsilon_);

    WindowSchedule schedule(config_.warmup);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim_);
    Eigen::VectorXd m2 = Eigen::VectorXd::Zero(dim_);
    long long window_count = 0;

    for (int it = 0; it < config_.warmup; ++it) {
      const double accept = transition();
      epsilon_ = adapter_.learn(accept);
      if (schedule.in_slow_window(it)) {
        ++window_count;
        const Eigen::VectorXd d = q_ - mean;
        mean += d / static_cast<double>(window_count);
        m2 += d.cwiseProduct(q_ - mean);
      }
      if (schedule.end_of_window(it)) {
        const double nw = static_cast<double>(window_count);
        if (window_count > 2) {
          const Eigen::VectorXd var = m2 / (nw - 1.0);
          inv_metric_ = (nw / (nw + 5.0)) * var.array() + 1e-3 * (5.0 / (nw + 5.0));
        }
        mean.setZero();
        m2.setZero();
        window_count = 0;
        refresh_gradient();
        find_reasonable_step();
        adapter_.restart(epsilon_);
      }
    }
    epsilon_ = adapter_.final_step();

    ChainResult out;
    out.draws.resize(dim_, config_.samples);
    double accept_sum = 0.0;
    double depth_sum = 0.0;
    const long long grads_before = grad_evals_;
    for (int s = 0; s < config_.samples; ++s) {
      for (int k = 0; k < config_.thin; ++k) {
        divergent_ = false;
        accept_sum += transition();
        depth_sum += last_depth_;
        if (divergent_) ++out.diagnostics.divergences;
        if (last_depth_ >= config_.max_depth) ++out.diagnostics.max_depth_hits;
      }
      out.draws.col(s) = q_;
    }
    const double total = static_cast<double>(config_.samples) * config_.thin;
    out.diagnostics.mean_accept_stat = accept_sum / total;
    out.diagnostics.mean_tree_depth = depth_sum / total;
    out.diagnostics.step_size = epsilon_;
    out.diagnostics.gradient_evaluations = grad_evals_ - grads_before;
    return out;
  }

 private:
  struct Point {
    Eigen::VectorXd q, p, g;
    double logp = 0.0;
  };

  double eval(const Eigen::VectorXd& q, Eigen::VectorXd& g) {
    ++grad_evals_;
    const double lp = target_.log_density_gradient(q, g);
    if (!std::isfinite(lp) || !g.allFinite()) return -std::numeric_limits<double>::infinity();
    return lp;
  }

  void initialize(const Eigen::VectorXd* init) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      if (init != nullptr && attempt == 0) {
        detail::require_dims(init->size() == dim_, "initial point has wrong dimension");
        q_ = *init;
      } else {
        q_.resize(dim_);
        for (int i = 0; i < dim_; ++i) q_(i) = rng_.uniform(-config_.init_radius, config_.init_radius);
      }
      logp_ = eval(q_, g_);
      if (std::isfinite(logp_)) return;
    }
    throw NumericalError("could not find a finite initial point");
  }

  void refresh_gradient() { logp_ = eval(q_, g_); }

  double kinetic(const Eigen::VectorXd& p) const { return 0.5 * p.cwiseProduct(inv_metric_).dot(p); }

  Eigen::VectorXd draw_momentum() {
    Eigen::VectorXd p(dim_);
    for (int i = 0; i < dim_; ++i) p(i) = rng_.normal() / std::sqrt(inv_metric_(i));
    return p;
  }

  void leapfrog(Point& z, double eps) {
    z.p += 0.5 * eps * z.g;
    z.q += eps * inv_metric_.cwiseProduct(z.p);
    z.logp = eval(z.q, z.g);
    z.p += 0.5 * eps * z.g;
  }

  double hamiltonian(const Point& z) const { return -z.logp + kinetic(z.p); }

  void find_reasonable_step() {
    if (epsilon_ <= 0.0) epsilon_ = 1.0;
    Point z{q_, draw_momentum(), g_, logp_};
    const double h0 = hamiltonian(z);
    leapfrog(z, epsilon_);
    double delta = h0 - hamiltonian(z);
    if (!std::isfinite(delta)) delta = -std::numeric_limits<double>::infinity();
    const int direction = delta > std::log(0.8) ? 1 : -1;
    for (int k = 0; k < 100; ++k) {
      z = Point{q_, draw_momentum(), g_, logp_};
      const double h = hamiltonian(z);
      leapfrog(z, epsilon_);
      double d = h - hamiltonian(z);
      if (!std::isfinite(d)) d = -std::numeric_limits<double>::infinity();
      if (direction == 1 && !(d > std::log(0.8))) break;
      if (direction == -1 && !(d < std::log(0.8))) break;
      epsilon_ = direction == 1 ? 2.0 * epsilon_ : 0.5 * epsilon_;
      if (epsilon_ > 1e7 || epsilon_ < 1e-12) break;
    }
  }

  bool criterion(const Eigen::VectorXd& p_sharp_minus, const Eigen::VectorXd& p_sharp_plus,
                 const Eigen::VectorXd& rho) const {
    return p_sharp_plus.dot(rho) > 0.0 && p_sharp_minus.dot(rho) > 0.0;
  }

  Eigen::VectorXd sharp(const Eigen::VectorXd& p) const { return inv_metric_.cwiseProduct(p); }

  bool build_tree(int depth, Point& z, Point& z_propose, Eigen::VectorXd& p_sharp_beg, Eigen::VectorXd& p_sharp_end,
                  Eigen::VectorXd& rho, Eigen::VectorXd& p_beg, Eigen::VectorXd& p_end, double H0, double sign,
                  double& log_sum_weight, double& sum_metro_prob, int& n_leapfrog) {
    if (depth == 0) {
      leapfrog(z, sign * epsilon_);
      ++n_leapfrog;
      double h = hamiltonian(z);
      if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
      if (h - H0 > 1000.0) divergent_ = true;
      log_sum_weight = log_sum_exp(log_sum_weight, H0 - h);
      sum_metro_prob += H0 - h > 0.0 ? 1.0 : std::exp(H0 - h);
      z_propose = z;
      p_sharp_beg = sharp(z.p);
      p_sharp_end = p_sharp_beg;
      rho += z.p;
      p_beg = z.p;
      p_end = p_beg;
      return !divergent_;
    }

    double log_sum_weight_init = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd p_init_end(dim_), p_sharp_init_end(dim_), rho_init = Eigen::VectorXd::Zero(dim_);
    if (!build_tree(depth - 1, z, z_propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg, p_init_end, H0, sign,
                    log_sum_weight_init, sum_metro_prob, n_leapfrog))
      return false;

    Point z_propose_final = z;
    double log_sum_weight_final = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd p_final_beg(dim_), p_sharp_final_beg(dim_), rho_final = Eigen::VectorXd::Zero(dim_);
    if (!build_tree(depth - 1, z, z_propose_final, p_sharp_final_beg, p_sharp_end, rho_final, p_final_beg, p_end, H0,
                    sign, log_sum_weight_final, sum_metro_prob, n_leapfrog))
      return false;

    const double log_sum_weight_subtree = log_sum_exp(log_sum_weight_init, log_sum_weight_final);
    log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);
    if (log_sum_weight_final > log_sum_weight_subtree) {
      z_propose = z_propose_final;
    } else if (rng_.uniform() < std::exp(log_sum_weight_final - log_sum_weight_subtree)) {
      z_propose = z_propose_final;
    }

    const Eigen::VectorXd rho_subtree = rho_init + rho_final;
    rho += rho_subtree;
    bool persist = criterion(p_sharp_beg, p_sharp_end, rho_subtree);
    persist = persist && criterion(p_sharp_beg, p_sharp_final_beg, rho_init + p_final_beg);
    persist = persist && criterion(p_sharp_init_end, p_sharp_end, rho_final + p_init_end);
    return persist;
  }

  /// One NUTS transition from q_; returns the acceptance statistic.
  double transition() {
    Point z{q_, draw_momentum(), g_, logp_};
    const double H0 = hamiltonian(z);

    Point z_fwd = z, z_bck = z, z_sample = z, z_propose = z;
    Eigen::VectorXd p_sharp_fwd_bck = sharp(z.p), p_sharp_fwd_fwd = p_sharp_fwd_bck;
    Eigen::VectorXd p_sharp_bck_fwd = p_sharp_fwd_bck, p_sharp_bck_bck = p_sharp_fwd_bck;
    Eigen::VectorXd p_fwd_bck = z.p, p_fwd_fwd = z.p, p_bck_fwd = z.p, p_bck_bck = z.p;
    Eigen::VectorXd rho = z.p;

    double log_sum_weight = 0.0;
    double sum_metro_prob = 0.0;
    int n_leapfrog = 0;
    int depth = 0;
    divergent_ = false;

    while (depth < config_.max_depth) {
      Eigen::VectorXd rho_fwd = Eigen::VectorXd::Zero(dim_), rho_bck = Eigen::VectorXd::Zero(dim_);
      double log_sum_weight_subtree = -std::numeric_limits<double>::infinity();
      bool valid;
      if (rng_.uniform() > 0.5) {
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        p_sharp_bck_fwd = p_sharp_fwd_bck;
        Point& zz = z_fwd;
        valid = build_tree(depth, zz, z_propose, p_sharp_fwd_bck, p_sharp_fwd_fwd, rho_fwd, p_fwd_bck, p_fwd_fwd, H0,
                           1.0, log_sum_weight_subtree, sum_metro_prob, n_leapfrog);
      } else {
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        p_sharp_fwd_bck = p_sharp_bck_fwd;
        Point& zz = z_bck;
        valid = build_tree(depth, zz, z_propose, p_sharp_bck_fwd, p_sharp_bck_bck, rho_bck, p_bck_fwd, p_bck_bck, H0,
                           -1.0, log_sum_weight_subtree, sum_metro_prob, n_leapfrog);
      }
      if (!valid) break;
      ++depth;

      if (log_sum_weight_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (rng_.uniform() < std::exp(log_sum_weight_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);

      rho = rho_bck + rho_fwd;
      bool persist = criterion(p_sharp_bck_bck, p_sharp_fwd_fwd, rho);
      persist = persist && criterion(p_sharp_bck_bck, p_sharp_fwd_bck, rho_bck + p_fwd_bck);
      persist = persist && criterion(p_sharp_bck_fwd, p_sharp_fwd_fwd, rho_fwd + p_bck_fwd);
      if (!persist) break;
    }

    last_depth_ = depth;
    q_ = z_sample.q;
    g_ = z_sample.g;
    logp_ = z_sample.logp;
    return n_leapfrog > 0 ? sum_metro_prob / n_leapfrog : 0.0;
  }

  const Target& target_;
  SamplerConfig config_;
  Philox rng_;
  int dim_;
  StepSizeAdapter adapter_;
  Eigen::VectorXd inv_metric_;
  Eigen::VectorXd q_, g_;
  double logp_ = 0.0;
  double epsilon_ = 1.0;
  bool divergent_ = false;
  int last_depth_ = 0;
  long long grad_evals_ = 0;
};

}  // namespace detail

/// Split-chain potential scale reduction for one scalar; `chains` holds one
/// vector of draws per chain. Each chain is split into halves.
inline double split_rhat(const std::vector<Eigen::VectorXd>& chains) {
  std::vector<Eigen::VectorXd> parts;
  for (const auto& c : chains) {
    const Eigen::Index half = c.size() / 2;
    if (half < 2) return std::numeric_limits<double>::quiet_NaN();
    parts.push_back(c.head(half));
    parts.push_back(c.segment(c.size() - half, half));
  }
  const auto m = static_cast<double>(parts.size());
  const auto n = static_cast<double>(parts.front().size());
  Eigen::VectorXd means(parts.size()), vars(parts.size());
  for (std::size_t k = 0; k < parts.size(); ++k) {
    means(k) = parts[k].mean();
    vars(k) = (parts[k].array() - means(k)).square().sum() / (n - 1.0);
  }
  const double W = vars.mean();
  const double B = n * (means.array() - means.mean()).square().sum() / (m - 1.0);
  if (W <= 0.0) return B <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  const double var_plus = (n - 1.0) / n * W + B / n;
  return std::sqrt(var_plus / W);
}

/// Runs `config.chains` independent chains; chain c uses Philox stream c of
/// config.seed, so results do not depend on the worker count.
template <DifferentiableDensity Target>
std::vector<ChainResult> run_nuts(const Target& target, const SamplerConfig& config,
                                  const Eigen::VectorXd* init = nullptr) {
  config.validate();
  std::vector<ChainResult> out(config.chains);
  parallel_for(static_cast<std::size_t>(config.chains), config.workers, [&](std::size_t c) {
    detail::NutsChain<Target> chain(target, config, derive_seed(config.seed, tag("chain"), c));
    out[c] = chain.run(init);
  });
  return out;
}

}  // namespace besn
