#ifndef CSSM_INFERENCE_HPP
#define CSSM_INFERENCE_HPP

// Posterior summaries: WAIC, KDE modes, empirical intervals, lag-1 contour
// grids, convergence diagnostics and model selection.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "cssm/model.hpp"

namespace cssm {

class InferenceError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/**
 * WAIC from pointwise log-likelihoods (draws x observations, natural log).
 *
 * Per observation: log of the posterior mean likelihood minus the unbiased
 * posterior variance of the log-likelihood. The mean term is a log-sum-exp.
 */
inline double waic(const Eigen::MatrixXd& loglik) {
  const Eigen::Index r = loglik.rows();
  if (r < 2) throw InferenceError("waic needs at least two draws");
  const double log_r = std::log(static_cast<double>(r));
  double total = 0.0;
  for (Eigen::Index t = 0; t < loglik.cols(); ++t) {
    const auto col = loglik.col(t);
    const double peak = col.maxCoeff();
    if (!std::isfinite(peak)) throw InferenceError("waic: non-finite log-likelihood");
    const double lse = peak + std::log((col.array() - peak).exp().sum());
    const double mean = col.mean();
    const double var = (col.array() - mean).square().sum() / static_cast<double>(r - 1);
    total += (lse - log_r) - var;
  }
  return -2.0 * total;
}

namespace detail {

inline std::vector<double> sorted_copy(std::span<const double> x) {
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  return s;
}

// Type-7 quantile of sorted data.
inline double quantile_sorted(const std::vector<double>& s, double p) {
  const double h = (static_cast<double>(s.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

inline double sample_sd(std::span<const double> x) {
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / (n - 1.0));
}

}  // namespace detail

/// Empirical quantile with linear interpolation between order statistics.
inline double quantile(std::span<const double> samples, double p) {
  if (samples.empty()) throw InferenceError("quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw InferenceError("quantile level outside [0, 1]");
  return detail::quantile_sorted(detail::sorted_copy(samples), p);
}

/// Silverman's rule of thumb, 0.9 min(sd, IQR/1.34) n^(-1/5).
inline double silverman_bandwidth(std::span<const double> samples) {
  const auto s = detail::sorted_copy(samples);
  const double sd = detail::sample_sd(samples);
  const double iqr = detail::quantile_sorted(s, 0.75) - detail::quantile_sorted(s, 0.25);
  double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
  if (!(spread > 0.0)) spread = std::abs(s.front()) > 0.0 ? std::abs(s.front()) : 1.0;
  return 0.9 * spread * std::pow(static_cast<double>(s.size()), -0.2);
}

/// Location of the maximum of a Gaussian KDE on a 512-point grid over the sample range.
inline double kde_mode(std::span<const double> samples, int grid_points = 512) {
  if (samples.size() < 2) throw InferenceError("kde_mode needs at least two samples");
  const auto s = detail::sorted_copy(samples);
  if (s.front() == s.back()) return s.front();
  const double bw = silverman_bandwidth(samples);
  const double reach = 8.0 * bw;
  double best_x = s.front();
  double best_f = -1.0;
  for (int i = 0; i < grid_points; ++i) {
    const double x = s.front() + (s.back() - s.front()) * i / (grid_points - 1);
    auto it = std::lower_bound(s.begin(), s.end(), x - reach);
    const auto end = std::upper_bound(it, s.end(), x + reach);
    double f = 0.0;
    for (; it != end; ++it) {
      const double d = (x - *it) / bw;
      f += std::exp(-0.5 * d * d);
    }
    if (f > best_f) {
      best_f = f;
      best_x = x;
    }
  }
  return best_x;
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Equal-tailed interval from empirical quantiles.
inline Interval credible_interval(std::span<const double> samples, double level = 0.90) {
  if (samples.empty()) throw InferenceError("credible_interval of an empty sample");
  if (!(level > 0.0 && level < 1.0)) throw InferenceError("credible level must lie in (0, 1)");
  const auto s = detail::sorted_copy(samples);
  const double a = 0.5 * (1.0 - level);
  return {detail::quantile_sorted(s, a), detail::quantile_sorted(s, 1.0 - a)};
}

/// Bivariate density on a square grid; density(i, j) is at (axis[i], axis[j]).
struct ContourGrid {
  std::vector<double> axis;
  Eigen::MatrixXd density;

  /// Trapezoid rule over the grid.
  double integral() const {
    const auto n = static_cast<Eigen::Index>(axis.size());
    if (n < 2) return 0.0;
    const double h = (axis.back() - axis.front()) / static_cast<double>(n - 1);
    Eigen::VectorXd w = Eigen::VectorXd::Constant(n, h);
    w(0) = w(n - 1) = 0.5 * h;
    return w.dot(density * w);
  }
};

/**
 * Product Gaussian KDE of the pairs (z_t, z_{t-1}) evaluated on
 * [lo, hi]^2. Bandwidths follow Scott's rule per axis.
 */
inline ContourGrid lag1_contour(std::span<const double> z, double lo = -3.0, double hi = 3.0, int points = 101) {
  if (z.size() < 3) throw InferenceError("lag1_contour needs at least three values");
  if (!(hi > lo) || points < 2) throw InferenceError("lag1_contour: bad grid");
  const std::span<const double> current = z.subspan(1);
  const std::span<const double> previous = z.first(z.size() - 1);
  const auto n = static_cast<Eigen::Index>(current.size());
  const double scott = std::pow(static_cast<double>(n), -1.0 / 6.0);
  auto bandwidth = [&](std::span<const double> x) {
    const double sd = detail::sample_sd(x);
    return (sd > 0.0 ? sd : 1.0) * scott;
  };
  const double h1 = bandwidth(current), h2 = bandwidth(previous);

  ContourGrid grid;
  for (int i = 0; i < points; ++i) grid.axis.push_back(lo + (hi - lo) * i / (points - 1));
  auto kernel_matrix = [&](std::span<const double> x, double h) {
    Eigen::MatrixXd k(points, n);
    const double norm = 1.0 / (h * std::sqrt(2.0 * std::numbers::pi));
    for (int i = 0; i < points; ++i)
      for (Eigen::Index t = 0; t < n; ++t) {
        const double d = (grid.axis[i] - x[t]) / h;
        k(i, t) = norm * std::exp(-0.5 * d * d);
      }
    return k;
  };
  const Eigen::MatrixXd k1 = kernel_matrix(current, h1);
  const Eigen::MatrixXd k2 = kernel_matrix(previous, h2);
  grid.density = (k1 * k2.transpose()) / static_cast<double>(n);
  return grid;
}

struct Convergence {
  double rhat = std::numeric_limits<double>::quiet_NaN();
  double ess = 0.0;
};

/**
 * Split R-hat and multi-chain effective sample size with Geyer's initial
 * monotone sequence. Chains must have equal length.
 */
inline Convergence rhat_ess(const std::vector<std::vector<double>>& chains) {
  if (chains.size() < 2) throw InferenceError("rhat_ess needs at least two chains");
  const std::size_t n = chains.front().size();
  if (n < 4) throw InferenceError("rhat_ess needs at least four draws per chain");
  for (const auto& c : chains)
    if (c.size() != n) throw InferenceError("rhat_ess: chains differ in length");

  auto mean_var = [](std::span<const double> x) {
    const double m = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return std::pair{m, ss / static_cast<double>(x.size() - 1)};
  };
  // Between/within decomposition; returns (W, var_plus).
  auto decompose = [&](const std::vector<std::span<const double>>& parts) {
    const double len = static_cast<double>(parts.front().size());
    std::vector<double> means;
    double w = 0.0;
    for (auto p : parts) {
      const auto [m, v] = mean_var(p);
      means.push_back(m);
      w += v;
    }
    w /= static_cast<double>(parts.size());
    const double b_over_n = mean_var(means).second;
    return std::pair{w, (len - 1.0) / len * w + b_over_n};
  };

  std::vector<std::span<const double>> halves;
  const std::size_t half = n / 2;
  for (const auto& c : chains) {
    const std::span<const double> s(c);
    halves.push_back(s.subspan(n - 2 * half, half));
    halves.push_back(s.subspan(n - half, half));
  }
  Convergence out;
  const auto [w_split, vp_split] = decompose(halves);
  if (w_split > 0.0)
    out.rhat = std::sqrt(vp_split / w_split);
  else
    out.rhat = vp_split > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;

  std::vector<std::span<const double>> whole(chains.begin(), chains.end());
  const auto [w, var_plus] = decompose(whole);
  const double m = static_cast<double>(chains.size());
  const double total = m * static_cast<double>(n);
  if (!(w > 0.0)) {
    out.ess = var_plus > 0.0 ? 1.0 : total;
    return out;
  }
  std::vector<double> means;
  for (const auto& c : chains) means.push_back(mean_var(c).first);
  // Autocovariance at lag k averaged over chains (biased, divisor n).
  auto acov = [&](std::size_t k) {
    double s = 0.0;
    for (std::size_t j = 0; j < chains.size(); ++j) {
      const auto& c = chains[j];
      double a = 0.0;
      for (std::size_t t = 0; t + k < n; ++t) a += (c[t] - means[j]) * (c[t + k] - means[j]);
      s += a / static_cast<double>(n);
    }
    return s / m;
  };
  auto rho = [&](std::size_t k) { return 1.0 - (w - acov(k)) / var_plus; };

  double tau = 0.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k + 1 < n; k += 2) {
    double pair = rho(k) + rho(k + 1);
    if (pair <= 0.0) break;
    pair = std::min(pair, prev_pair);
    prev_pair = pair;
    tau += pair;
  }
  tau = std::max(2.0 * tau - 1.0, 1.0 / std::log10(total));
  out.ess = total / tau;
  return out;
}

/// One row of a WAIC table.
struct WaicEntry {
  ModelConfig model;
  double waic = std::numeric_limits<double>::quiet_NaN();
  bool failed = false;
};

/**
 * Smallest WAIC among successful fits; ties go to the smaller c, then to
 * the alphabetically first family label.
 */
inline std::optional<WaicEntry> select_best(const std::vector<WaicEntry>& table) {
  std::optional<WaicEntry> best;
  auto better = [](const WaicEntry& a, const WaicEntry& b) {
    if (a.waic != b.waic) return a.waic < b.waic;
    if (a.model.c != b.model.c) return a.model.c < b.model.c;
    return a.model.label() < b.model.label();
  };
  for (const auto& e : table) {
    if (e.failed || !std::isfinite(e.waic)) continue;
    if (!best || better(e, *best)) best = e;
  }
  return best;
}

}  // namespace cssm

#endif  // CSSM_INFERENCE_HPP
