#ifndef CSSM_SAMPLER_HPP
#define CSSM_SAMPLER_HPP

// Hamiltonian Monte Carlo on a differentiable log density: leapfrog
// integration, a fixed-length HMC transition, the No-U-Turn transition with
// multinomial sampling along the trajectory, and warmup adaptation of the step
// size (dual averaging) and a diagonal mass matrix (windowed variances).

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>

#include "cssm/distributions.hpp"
#include "cssm/model.hpp"
#include "cssm/random.hpp"

namespace cssm {

class SamplerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
concept DifferentiableTarget = requires(const T& t, const Eigen::VectorXd& q, Eigen::VectorXd& g) {
  { t.dim() } -> std::convertible_to<int>;
  { t.log_density_and_gradient(q, g) } -> std::convertible_to<double>;
};

struct SamplerConfig {
  int n_chains = 2;
  int n_iter = 2000;  // per chain, warmup included
  int n_burnin = 500;
  std::uint64_t seed = 1;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  bool adapt_step_size = true;
  bool adapt_metric = true;
  double step_size = 1.0;  // starting value, or the fixed value without adaptation
  bool parallel_chains = false;

  void validate() const {
    if (n_chains < 1) throw SamplerError("n_chains must be >= 1");
    if (n_burnin < 0 || n_iter <= n_burnin) throw SamplerError("need 0 <= n_burnin < n_iter");
    if (!(target_accept > 0.0 && target_accept < 1.0)) throw SamplerError("target_accept must lie in (0,1)");
    if (max_tree_depth < 0) throw SamplerError("max_tree_depth must be >= 0");
    if (!(step_size > 0.0) || !std::isfinite(step_size)) throw SamplerError("step_size must be positive");
  }
};

struct PhasePoint {
  Eigen::VectorXd q;
  Eigen::VectorXd p;
  double logp = 0.0;
  Eigen::VectorXd grad;

  bool finite() const { return std::isfinite(logp); }
};

template <DifferentiableTarget Target>
PhasePoint make_phase_point(const Target& target, Eigen::VectorXd q) {
  PhasePoint z;
  z.q = std::move(q);
  z.p = Eigen::VectorXd::Zero(z.q.size());
  z.logp = target.log_density_and_gradient(z.q, z.grad);
  if (!z.grad.allFinite()) z.logp = -std::numeric_limits<double>::infinity();
  return z;
}

inline double kinetic_energy(const Eigen::VectorXd& p, const Eigen::VectorXd& mass_diag) {
  return 0.5 * p.cwiseAbs2().cwiseQuotient(mass_diag).sum();
}

/// H(q, p) = -log pi(q) + p' M^{-1} p / 2; infinite when the density is not finite.
inline double hamiltonian(const PhasePoint& z, const Eigen::VectorXd& mass_diag) {
  if (!z.finite()) return std::numeric_limits<double>::infinity();
  const double h = -z.logp + kinetic_energy(z.p, mass_diag);
  return std::isnan(h) ? std::numeric_limits<double>::infinity() : h;
}

/**
 * Leapfrog steps (half kick, drift, half kick). Integration stops early when
 * the density or its gradient stops being finite; the returned point then has
 * logp = -infinity.
 */
template <DifferentiableTarget Target>
PhasePoint leapfrog(PhasePoint z, double step, int n_steps, const Eigen::VectorXd& mass_diag,
                    const Target& target) {
  for (int i = 0; i < n_steps && z.finite(); ++i) {
    z.p += 0.5 * step * z.grad;
    z.q += step * z.p.cwiseQuotient(mass_diag);
    z.logp = target.log_density_and_gradient(z.q, z.grad);
    if (!std::isfinite(z.logp) || !z.grad.allFinite()) {
      z.logp = -std::numeric_limits<double>::infinity();
      break;
    }
    z.p += 0.5 * step * z.grad;
  }
  return z;
}

inline void sample_momentum(PhasePoint& z, const Eigen::VectorXd& mass_diag, Rng& rng) {
  z.p.resize(z.q.size());
  for (Eigen::Index i = 0; i < z.p.size(); ++i) z.p[i] = std::sqrt(mass_diag[i]) * rng.normal();
}

struct HmcResult {
  PhasePoint state;
  bool accepted = false;
  bool divergent = false;
  double accept_prob = 0.0;
};

inline constexpr double kMaxEnergyError = 1000.0;

/// Metropolis acceptance probability for an energy change H(start) -> H(end).
inline double metropolis_accept_prob(double h_start, double h_end) {
  const double d = h_start - h_end;
  if (std::isnan(d)) return 0.0;
  return d >= 0.0 ? 1.0 : std::exp(d);
}

/// Fixed-length HMC step with a Metropolis correction.
template <DifferentiableTarget Target>
HmcResult hmc_transition(const PhasePoint& state, double step, int n_steps, const Eigen::VectorXd& mass_diag,
                         const Target& target, Rng& rng) {
  PhasePoint start = state;
  sample_momentum(start, mass_diag, rng);
  const double h0 = hamiltonian(start, mass_diag);
  PhasePoint prop = leapfrog(start, step, n_steps, mass_diag, target);
  const double h1 = hamiltonian(prop, mass_diag);
  HmcResult out;
  out.divergent = !std::isfinite(h1) || h1 - h0 > kMaxEnergyError;
  out.accept_prob = out.divergent ? 0.0 : metropolis_accept_prob(h0, h1);
  out.accepted = !out.divergent && rng.uniform() < out.accept_prob;
  out.state = out.accepted ? std::move(prop) : std::move(start);
  return out;
}

struct TransitionStats {
  double accept_stat = 0.0;
  int tree_depth = 0;
  int n_leapfrog = 0;
  bool divergent = false;
  double energy = 0.0;
};

/**
 * No-U-Turn transition with multinomial sampling and the generalized U-turn
 * criterion evaluated across merged subtrees.
 */
template <DifferentiableTarget Target>
class NutsKernel {
 public:
  NutsKernel(const Target& target, Eigen::VectorXd mass_diag, double step, int max_depth)
      : target_(target), mass_(std::move(mass_diag)), step_(step), max_depth_(max_depth) {}

  double step_size() const noexcept { return step_; }
  void set_step_size(double e) noexcept { step_ = e; }
  const Eigen::VectorXd& mass_diag() const noexcept { return mass_; }
  void set_mass_diag(Eigen::VectorXd m) { mass_ = std::move(m); }

  PhasePoint transition(const PhasePoint& init, Rng& rng, TransitionStats& stats) {
    const Eigen::Index d = init.q.size();
    z_ = init;
    sample_momentum(z_, mass_, rng);
    PhasePoint z_fwd = z_, z_bck = z_, z_sample = z_, z_propose = z_;

    Eigen::VectorXd p_sharp0 = sharp(z_.p);
    Eigen::VectorXd p_fwd_fwd = z_.p, p_sharp_fwd_fwd = p_sharp0;
    Eigen::VectorXd p_fwd_bck = z_.p, p_sharp_fwd_bck = p_sharp0;
    Eigen::VectorXd p_bck_fwd = z_.p, p_sharp_bck_fwd = p_sharp0;
    Eigen::VectorXd p_bck_bck = z_.p, p_sharp_bck_bck = p_sharp0;
    Eigen::VectorXd rho = z_.p;

    double log_sum_weight = 0.0;
    const double h0 = hamiltonian(z_, mass_);
    int n_leapfrog = 0;
    double sum_metro_prob = 0.0;
    int depth = 0;
    divergent_ = false;

    while (depth < max_depth_) {
      Eigen::VectorXd rho_fwd = Eigen::VectorXd::Zero(d), rho_bck = Eigen::VectorXd::Zero(d);
      bool valid = false;
      double log_sum_weight_subtree = kNegInf;
      if (rng.uniform() > 0.5) {
        z_ = z_fwd;
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        p_sharp_bck_fwd = p_sharp_fwd_bck;
        valid = build_tree(depth, z_propose, p_sharp_fwd_bck, p_sharp_fwd_fwd, rho_fwd, p_fwd_bck, p_fwd_fwd, h0,
                           1.0, n_leapfrog, log_sum_weight_subtree, sum_metro_prob, rng);
        z_fwd = z_;
      } else {
        z_ = z_bck;
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        p_sharp_fwd_bck = p_sharp_bck_fwd;
        valid = build_tree(depth, z_propose, p_sharp_bck_fwd, p_sharp_bck_bck, rho_bck, p_bck_fwd, p_bck_bck, h0,
                           -1.0, n_leapfrog, log_sum_weight_subtree, sum_metro_prob, rng);
        z_bck = z_;
      }
      if (!valid) break;
      ++depth;

      if (log_sum_weight_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (rng.uniform() < std::exp(log_sum_weight_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_add_exp(log_sum_weight, log_sum_weight_subtree);

      rho = rho_bck + rho_fwd;
      bool persist = no_u_turn(p_sharp_bck_bck, p_sharp_fwd_fwd, rho);
      persist = persist && no_u_turn(p_sharp_bck_bck, p_sharp_fwd_bck, rho_bck + p_fwd_bck);
      persist = persist && no_u_turn(p_sharp_bck_fwd, p_sharp_fwd_fwd, rho_fwd + p_bck_fwd);
      if (!persist) break;
    }

    stats.tree_depth = depth;
    stats.n_leapfrog = n_leapfrog;
    stats.divergent = divergent_;
    stats.accept_stat = n_leapfrog > 0 ? sum_metro_prob / n_leapfrog : 0.0;
    stats.energy = hamiltonian(z_sample, mass_);
    return z_sample;
  }

 private:
  static constexpr double kNegInf = -std::numeric_limits<double>::infinity();

  Eigen::VectorXd sharp(const Eigen::VectorXd& p) const { return p.cwiseQuotient(mass_); }

  static bool no_u_turn(const Eigen::VectorXd& p_sharp_minus, const Eigen::VectorXd& p_sharp_plus,
                        const Eigen::VectorXd& rho) {
    return p_sharp_plus.dot(rho) > 0.0 && p_sharp_minus.dot(rho) > 0.0;
  }

  bool build_tree(int depth, PhasePoint& z_propose, Eigen::VectorXd& p_sharp_beg, Eigen::VectorXd& p_sharp_end,
                  Eigen::VectorXd& rho, Eigen::VectorXd& p_beg, Eigen::VectorXd& p_end, double h0, double sign,
                  int& n_leapfrog, double& log_sum_weight, double& sum_metro_prob, Rng& rng) {
    if (depth == 0) {
      z_ = leapfrog(std::move(z_), sign * step_, 1, mass_, target_);
      ++n_leapfrog;
      const double h = hamiltonian(z_, mass_);
      if (h - h0 > kMaxEnergyError || !std::isfinite(h)) divergent_ = true;
      log_sum_weight = log_add_exp(log_sum_weight, h0 - h);
      sum_metro_prob += h0 - h > 0.0 ? 1.0 : std::exp(h0 - h);
      z_propose = z_;
      p_sharp_beg = sharp(z_.p);
      p_sharp_end = p_sharp_beg;
      rho += z_.p;
      p_beg = z_.p;
      p_end = p_beg;
      return !divergent_;
    }
    const Eigen::Index d = z_.q.size();

    double log_sum_weight_init = kNegInf;
    Eigen::VectorXd p_init_end(d), p_sharp_init_end(d), rho_init = Eigen::VectorXd::Zero(d);
    if (!build_tree(depth - 1, z_propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg, p_init_end, h0, sign,
                    n_leapfrog, log_sum_weight_init, sum_metro_prob, rng))
      return false;

    PhasePoint z_propose_final = z_;
    double log_sum_weight_final = kNegInf;
    Eigen::VectorXd p_final_beg(d), p_sharp_final_beg(d), rho_final = Eigen::VectorXd::Zero(d);
    if (!build_tree(depth - 1, z_propose_final, p_sharp_final_beg, p_sharp_end, rho_final, p_final_beg, p_end, h0,
                    sign, n_leapfrog, log_sum_weight_final, sum_metro_prob, rng))
      return false;

    const double log_sum_weight_subtree = log_add_exp(log_sum_weight_init, log_sum_weight_final);
    log_sum_weight = log_add_exp(log_sum_weight, log_sum_weight_subtree);
    if (log_sum_weight_final > log_sum_weight_subtree) {
      z_propose = std::move(z_propose_final);
    } else if (rng.uniform() < std::exp(log_sum_weight_final - log_sum_weight_subtree)) {
      z_propose = std::move(z_propose_final);
    }

    const Eigen::VectorXd rho_subtree = rho_init + rho_final;
    rho += rho_subtree;
    bool persist = no_u_turn(p_sharp_beg, p_sharp_end, rho_subtree);
    persist = persist && no_u_turn(p_sharp_beg, p_sharp_final_beg, rho_init + p_final_beg);
    persist = persist && no_u_turn(p_sharp_init_end, p_sharp_end, rho_final + p_init_end);
    return persist;
  }

  const Target& target_;
  Eigen::VectorXd mass_;
  double step_;
  int max_depth_;
  PhasePoint z_;
  bool divergent_ = false;
};

/// Dual-averaging step size adaptation toward a target acceptance statistic.
class DualAveraging {
 public:
  explicit DualAveraging(double target_accept) : delta_(target_accept) {}

  void set_mu(double mu) noexcept { mu_ = mu; }
  void restart() noexcept {
    counter_ = 0;
    s_bar_ = 0.0;
    x_bar_ = 0.0;
  }

  /// Returns the next step size.
  double learn(double accept_stat) noexcept {
    ++counter_;
    accept_stat = std::min(1.0, accept_stat);
    const double eta = 1.0 / (counter_ + kT0);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - accept_stat);
    const double x = mu_ - s_bar_ * std::sqrt(static_cast<double>(counter_)) / kGamma;
    const double x_eta = std::pow(static_cast<double>(counter_), -kKappa);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    return std::exp(x);
  }

  double final_step_size() const noexcept { return std::exp(x_bar_); }

 private:
  static constexpr double kGamma = 0.1;
  static constexpr double kT0 = 10.0;
  static constexpr double kKappa = 0.75;
  double delta_;
  double mu_ = std::log(10.0);
  double s_bar_ = 0.0;
  double x_bar_ = 0.0;
  long counter_ = 0;
};

/**
 * Windowed diagonal-variance estimation over warmup: an initial fast buffer,
 * doubling slow windows, and a terminal fast buffer. The default 500-iteration
 * warmup gives buffers 75 / 25, 50, 100, 200 / 50.
 */
class WindowedVariance {
 public:
  WindowedVariance(int n_warmup, Eigen::Index dim) : n_warmup_(n_warmup), dim_(dim) {
    if (n_warmup < 20) {
      disabled_ = true;
      return;
    }
    if (init_buffer_ + term_buffer_ + base_window_ > n_warmup) {
      init_buffer_ = static_cast<int>(0.15 * n_warmup);
      term_buffer_ = static_cast<int>(0.1 * n_warmup);
      base_window_ = n_warmup - (init_buffer_ + term_buffer_);
    }
    window_size_ = base_window_;
    next_window_ = init_buffer_ + window_size_ - 1;
    reset_estimator();
  }

  /// Feeds one warmup draw; returns true and fills `variance` at a window end.
  bool learn(const Eigen::VectorXd& q, Eigen::VectorXd& variance) {
    if (disabled_) return false;
    if (in_window()) add_sample(q);
    if (end_of_window()) {
      compute_next_window();
      const double n = static_cast<double>(n_);
      variance = m2_ / std::max(1.0, n - 1.0);
      variance = (n / (n + 5.0)) * variance.array() + 1e-3 * (5.0 / (n + 5.0));
      variance = variance.cwiseMax(1e-8);
      reset_estimator();
      ++counter_;
      return true;
    }
    ++counter_;
    return false;
  }

 private:
  bool in_window() const {
    return counter_ >= init_buffer_ && counter_ < n_warmup_ - term_buffer_ && counter_ != n_warmup_;
  }
  bool end_of_window() const { return counter_ == next_window_ && counter_ != n_warmup_; }
  void compute_next_window() {
    if (next_window_ == n_warmup_ - term_buffer_ - 1) return;
    window_size_ *= 2;
    next_window_ = counter_ + window_size_;
    if (next_window_ != n_warmup_ - term_buffer_ - 1) {
      if (next_window_ + 2 * window_size_ >= n_warmup_ - term_buffer_) next_window_ = n_warmup_ - term_buffer_ - 1;
    }
  }
  void reset_estimator() {
    n_ = 0;
    mean_ = Eigen::VectorXd::Zero(dim_);
    m2_ = Eigen::VectorXd::Zero(dim_);
  }
  void add_sample(const Eigen::VectorXd& q) {
    ++n_;
    const Eigen::VectorXd delta = q - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta.cwiseProduct(q - mean_);
  }

  int n_warmup_;
  Eigen::Index dim_;
  bool disabled_ = false;
  int init_buffer_ = 75;
  int term_buffer_ = 50;
  int base_window_ = 25;
  int window_size_ = 25;
  int next_window_ = 0;
  int counter_ = 0;
  long n_ = 0;
  Eigen::VectorXd mean_, m2_;
};

/**
 * Doubles or halves the step size until a single leapfrog step crosses an
 * acceptance probability of 0.8.
 */
template <DifferentiableTarget Target>
double heuristic_step_size(const PhasePoint& z0, double step, const Eigen::VectorXd& mass_diag,
                           const Target& target, Rng& rng) {
  const double log_08 = std::log(0.8);
  auto delta_h = [&](double e) {
    PhasePoint z = z0;
    sample_momentum(z, mass_diag, rng);
    const double h0 = hamiltonian(z, mass_diag);
    const double h = hamiltonian(leapfrog(z, e, 1, mass_diag, target), mass_diag);
    return h0 - h;
  };
  const int direction = delta_h(step) > log_08 ? 1 : -1;
  for (;;) {
    const double dh = delta_h(step);
    if (direction == 1 && !(dh > log_08)) break;
    if (direction == -1 && !(dh < log_08)) break;
    step = direction == 1 ? step * 2.0 : step * 0.5;
    if (step > 1e7) throw SamplerError("step size search diverged: posterior may be improper");
    if (step == 0.0) throw SamplerError("step size search collapsed to zero");
  }
  return step;
}

/// Unconstrained draws and diagnostics of one chain (warmup excluded).
struct ChainResult {
  Eigen::MatrixXd draws;  // rows: kept iterations, columns: coordinates
  std::vector<TransitionStats> stats;
  double step_size = 0.0;
  Eigen::VectorXd mass_diag;
  int warmup_divergences = 0;

  int divergences() const {
    return static_cast<int>(std::count_if(stats.begin(), stats.end(), [](const auto& s) { return s.divergent; }));
  }
  double divergence_rate() const { return stats.empty() ? 0.0 : double(divergences()) / stats.size(); }
  double mean_accept_stat() const {
    double s = 0.0;
    for (const auto& t : stats) s += t.accept_stat;
    return stats.empty() ? 0.0 : s / stats.size();
  }
  int max_depth_hits(int max_depth) const {
    return static_cast<int>(
        std::count_if(stats.begin(), stats.end(), [&](const auto& s) { return s.tree_depth >= max_depth; }));
  }
};

/// Draws a finite starting point uniformly in [-2, 2]^d (up to 100 attempts).
template <DifferentiableTarget Target>
PhasePoint random_initial_point(const Target& target, Rng& rng) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    Eigen::VectorXd q(target.dim());
    for (Eigen::Index i = 0; i < q.size(); ++i) q[i] = -2.0 + 4.0 * rng.uniform();
    PhasePoint z = make_phase_point(target, std::move(q));
    if (z.finite()) return z;
  }
  throw SamplerError("no finite initial point found in 100 attempts");
}

/// Runs one NUTS chain with warmup adaptation from the given start.
template <DifferentiableTarget Target>
ChainResult run_chain(const Target& target, const SamplerConfig& config, Rng& rng, PhasePoint z) {
  const Eigen::Index d = z.q.size();
  const int n_warmup = config.n_burnin;
  Eigen::VectorXd mass = Eigen::VectorXd::Ones(d);
  double step = config.step_size;
  if (config.adapt_step_size && n_warmup > 0) step = heuristic_step_size(z, step, mass, target, rng);

  NutsKernel<Target> kernel(target, mass, step, config.max_tree_depth);
  DualAveraging dual(config.target_accept);
  dual.set_mu(std::log(10.0 * step));
  WindowedVariance windows(n_warmup, d);

  ChainResult out;
  out.draws.resize(config.n_iter - n_warmup, d);
  out.stats.reserve(static_cast<std::size_t>(config.n_iter - n_warmup));
  Eigen::VectorXd variance;
  for (int it = 0; it < config.n_iter; ++it) {
    TransitionStats st;
    z = kernel.transition(z, rng, st);
    if (it < n_warmup) {
      if (st.divergent) ++out.warmup_divergences;
      if (config.adapt_step_size) kernel.set_step_size(dual.learn(st.accept_stat));
      if (config.adapt_metric && windows.learn(z.q, variance)) {
        kernel.set_mass_diag(variance.cwiseInverse());
        if (config.adapt_step_size) {
          kernel.set_step_size(heuristic_step_size(z, kernel.step_size(), kernel.mass_diag(), target, rng));
          dual.set_mu(std::log(10.0 * kernel.step_size()));
          dual.restart();
        }
      }
      if (it + 1 == n_warmup && config.adapt_step_size) kernel.set_step_size(dual.final_step_size());
    } else {
      out.draws.row(it - n_warmup) = z.q.transpose();
      out.stats.push_back(st);
    }
  }
  if (n_warmup > 0 && out.warmup_divergences == n_warmup)
    throw SamplerError("every warmup transition diverged (" + std::to_string(n_warmup) + " of " +
                       std::to_string(n_warmup) + ")");
  out.step_size = kernel.step_size();
  out.mass_diag = kernel.mass_diag();
  return out;
}

/**
 * Runs config.n_chains chains from random starting points. Chain k uses the
 * RNG substream (seed, k), so results do not depend on scheduling.
 */
template <DifferentiableTarget Target>
std::vector<ChainResult> sample(const Target& target, const SamplerConfig& config) {
  config.validate();
  std::vector<ChainResult> chains(static_cast<std::size_t>(config.n_chains));
  std::vector<std::exception_ptr> errors(chains.size());
  auto work = [&](std::size_t k) {
    try {
      Rng rng = Rng::substream(config.seed, {static_cast<std::uint64_t>(k)});
      PhasePoint z = random_initial_point(target, rng);
      chains[k] = run_chain(target, config, rng, std::move(z));
    } catch (...) {
      errors[k] = std::current_exception();
    }
  };
  if (config.parallel_chains && chains.size() > 1) {
    std::vector<std::jthread> threads;
    for (std::size_t k = 0; k < chains.size(); ++k) threads.emplace_back(work, k);
  } else {
    for (std::size_t k = 0; k < chains.size(); ++k) work(k);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return chains;
}

/// Posterior draws of one chain on the constrained scale.
struct ChainDraws {
  std::vector<double> tau_lat;
  std::vector<double> tau_obs;
  Eigen::MatrixXd latent;  // draws x T
  Eigen::MatrixXd loglik;  // draws x T, natural log of c_obs(u_t, v_t; tau_obs)
  std::vector<TransitionStats> stats;
  double step_size = 0.0;
  int warmup_divergences = 0;

  int size() const noexcept { return static_cast<int>(tau_lat.size()); }
  double divergence_rate() const {
    if (stats.empty()) return 0.0;
    return double(std::count_if(stats.begin(), stats.end(), [](const auto& s) { return s.divergent; })) /
           stats.size();
  }
  /// More than 10% of post-warmup transitions diverged.
  bool flagged() const { return divergence_rate() > 0.1; }
};

struct PosteriorDraws {
  ModelConfig model;
  std::vector<ChainDraws> chains;

  int n_draws() const {
    int n = 0;
    for (const auto& c : chains) n += c.size();
    return n;
  }
  Eigen::Index n_obs() const { return chains.empty() ? 0 : chains.front().latent.cols(); }

  std::vector<double> tau_lat_all() const { return concat(&ChainDraws::tau_lat); }
  std::vector<double> tau_obs_all() const { return concat(&ChainDraws::tau_obs); }
  Eigen::MatrixXd latent_all() const { return stack(&ChainDraws::latent); }
  Eigen::MatrixXd loglik_all() const { return stack(&ChainDraws::loglik); }

 private:
  std::vector<double> concat(std::vector<double> ChainDraws::*field) const {
    std::vector<double> out;
    for (const auto& c : chains) out.insert(out.end(), (c.*field).begin(), (c.*field).end());
    return out;
  }
  Eigen::MatrixXd stack(Eigen::MatrixXd ChainDraws::*field) const {
    Eigen::MatrixXd out(n_draws(), n_obs());
    Eigen::Index row = 0;
    for (const auto& c : chains) {
      out.middleRows(row, (c.*field).rows()) = c.*field;
      row += (c.*field).rows();
    }
    return out;
  }
};

/// Samples the copula state space posterior and maps draws to the constrained scale.
inline PosteriorDraws run(const PseudoSeries& data, const ModelConfig& model, const SamplerConfig& config) {
  const Posterior posterior(data, model);
  const auto raw = sample(posterior, config);
  const Eigen::Index n = static_cast<Eigen::Index>(data.size());
  PosteriorDraws out;
  out.model = model;
  for (const auto& chain : raw) {
    ChainDraws c;
    const Eigen::Index r = chain.draws.rows();
    c.latent.resize(r, n);
    c.loglik.resize(r, n);
    std::vector<double> v(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < r; ++i) {
      const double tau_lat = logistic(chain.draws(i, 0));
      c.tau_lat.push_back(tau_lat);
      c.tau_obs.push_back(tau_obs_from_tau_lat(tau_lat, model.c));
      for (Eigen::Index t = 0; t < n; ++t) v[t] = c.latent(i, t) = logistic(chain.draws(i, t + 1));
      const auto ll = posterior.pointwise_loglik(tau_lat, v.data());
      for (Eigen::Index t = 0; t < n; ++t) c.loglik(i, t) = ll[t];
    }
    c.stats = chain.stats;
    c.step_size = chain.step_size;
    c.warmup_divergences = chain.warmup_divergences;
    out.chains.push_back(std::move(c));
  }
  return out;
}

}  // namespace cssm

#endif  // CSSM_SAMPLER_HPP
