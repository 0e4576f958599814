#ifndef CSSM_MODEL_HPP
#define CSSM_MODEL_HPP

// Copula state space model: an observation copula links the pseudo
// observation u_t to the latent state v_t, and a latent copula links
// consecutive states. The observation dependence is tied to the latent one
// through the smoothing exponent c.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cssm/copulas.hpp"
#include "cssm/distributions.hpp"

namespace cssm {

class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/**
 * Families of the observation and state equations plus the exponent c.
 *
 * The prior on the latent Kendall's tau is Uniform(0,1) and carries no
 * configuration.
 */
struct ModelConfig {
  CopulaFamily obs_family = CopulaFamily::gaussian();
  CopulaFamily lat_family = CopulaFamily::gaussian();
  double c = 1.0;

  /// Same family in both equations.
  static ModelConfig copula(const CopulaFamily& family, double c) {
    ModelConfig m{family, family, c};
    m.validate();
    return m;
  }
  static ModelConfig gaussian(double c) { return copula(CopulaFamily::gaussian(), c); }
  static ModelConfig independence() {
    return copula(CopulaFamily::independence(), 1.0);
  }

  bool is_independence() const noexcept {
    return obs_family.kind() == FamilyKind::Independence && lat_family.kind() == FamilyKind::Independence;
  }

  void validate() const {
    if (!(c >= 1.0) || !std::isfinite(c)) throw ModelError("smoothing exponent c must be finite and >= 1");
  }

  /// Label such as "gumbel_c3", used in file names and reports.
  std::string label() const {
    std::string fam = obs_family == lat_family ? obs_family.name() : obs_family.name() + "-" + lat_family.name();
    if (is_independence()) return fam;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", c);
    return fam + "_c" + buf;
  }
};

/**
 * Standardized series z_t and its uniform image u_t = Phi(z_t) for one window.
 * `index` keeps the provenance of each entry (for example the hour offset of
 * the source row).
 */
struct PseudoSeries {
  std::vector<double> u_hat;
  std::vector<double> z_hat;
  std::vector<std::int64_t> index;

  std::size_t size() const noexcept { return u_hat.size(); }

  static PseudoSeries from_z(std::vector<double> z, std::vector<std::int64_t> index = {}) {
    PseudoSeries s;
    s.u_hat.reserve(z.size());
    for (double x : z) {
      if (!std::isfinite(x)) throw ModelError("pseudo series: non-finite standardized value");
      double u = normal::cdf(x);
      u = std::clamp(u, detail::kUnitMargin, 1.0 - detail::kUnitMargin);
      s.u_hat.push_back(u);
    }
    s.z_hat = std::move(z);
    s.index = std::move(index);
    s.fill_index();
    s.validate();
    return s;
  }

  static PseudoSeries from_u(std::vector<double> u, std::vector<std::int64_t> index = {}) {
    PseudoSeries s;
    s.z_hat.reserve(u.size());
    for (double p : u) {
      detail::require_unit(p, "pseudo observation");
      s.z_hat.push_back(normal::quantile(p));
    }
    s.u_hat = std::move(u);
    s.index = std::move(index);
    s.fill_index();
    s.validate();
    return s;
  }

  void validate() const {
    if (u_hat.size() < 2) throw ModelError("pseudo series needs at least two observations");
    if (z_hat.size() != u_hat.size() || index.size() != u_hat.size())
      throw ModelError("pseudo series: length mismatch");
    for (double u : u_hat) detail::require_unit(u, "pseudo observation");
  }

 private:
  void fill_index() {
    if (!index.empty()) return;
    index.resize(u_hat.size());
    for (std::size_t t = 0; t < index.size(); ++t) index[t] = static_cast<std::int64_t>(t);
  }
};

namespace detail {

inline void require_constraint_args(double tau_lat, double c) {
  if (!(tau_lat >= 0.0 && tau_lat <= 1.0)) throw ModelError("tau_lat outside [0,1]");
  if (!(c >= 1.0) || !std::isfinite(c)) throw ModelError("c must be finite and >= 1");
}

}  // namespace detail

/// Observation Kendall's tau implied by the latent tau and exponent c.
inline double tau_obs_from_tau_lat(double tau_lat, double c) {
  detail::require_constraint_args(tau_lat, c);
  if (c == 1.0) return tau_lat;
  const double s = std::sin(std::numbers::pi * tau_lat / 2.0);
  return 2.0 / std::numbers::pi * std::asin(std::pow(s, c));
}

/// d tau_obs / d tau_lat.
inline double tau_obs_derivative(double tau_lat, double c) {
  detail::require_constraint_args(tau_lat, c);
  if (c == 1.0) return 1.0;
  const double half = std::numbers::pi * tau_lat / 2.0;
  const double s = std::sin(half);
  const double sc = std::pow(s, c);
  if (sc >= 1.0) return 0.0;
  return c * std::pow(s, c - 1.0) * std::cos(half) / std::sqrt((1.0 - sc) * (1.0 + sc));
}

/// Lag-one autocorrelation of Z_t in the linear Gaussian state space model.
inline double gaussian_oracle_autocorr(double rho_obs, double rho_lat) { return rho_obs * rho_obs * rho_lat; }

inline CopulaSpec make_spec(const CopulaFamily& family, double tau) {
  if (family.kind() == FamilyKind::Independence) return CopulaSpec::independence();
  return CopulaSpec::from_tau(family, tau);
}

/**
 * Log posterior of (tau_lat, v_1..v_T) on the unconstrained logistic scale.
 *
 * Coordinate 0 is logit(tau_lat), coordinate t is logit(v_t). The value
 * includes the log Jacobian of the logistic map. An exact boundary after the
 * map gives -infinity.
 */
class Posterior {
 public:
  Posterior(const PseudoSeries& data, ModelConfig config) : data_(&data), config_(std::move(config)) {
    config_.validate();
    data.validate();
    obs_margins_.reserve(data.size());
    for (double u : data.u_hat) obs_margins_.push_back(detail::prepare(config_.obs_family, u));
    shared_margin_ = config_.obs_family == config_.lat_family;
  }

  int dim() const noexcept { return static_cast<int>(data_->size()) + 1; }
  const ModelConfig& config() const noexcept { return config_; }
  const PseudoSeries& data() const noexcept { return *data_; }

  double log_density(const Eigen::VectorXd& q) const { return evaluate(q, nullptr); }

  /// Log density; `grad` receives the gradient (resized to dim()).
  double log_density_and_gradient(const Eigen::VectorXd& q, Eigen::VectorXd& grad) const {
    grad.resize(dim());
    return evaluate(q, &grad);
  }

  /// Per-observation log c_obs(u_t, v_t; tau_obs) at constrained values.
  std::vector<double> pointwise_loglik(double tau_lat, const double* latent) const {
    const auto spec = make_spec(config_.obs_family, tau_obs_from_tau_lat(tau_lat, config_.c));
    std::vector<double> out(data_->size());
    for (std::size_t t = 0; t < out.size(); ++t) {
      const auto m = detail::prepare(config_.obs_family, detail::clamp_unit(latent[t]));
      out[t] = detail::evaluate(spec, obs_margins_[t], m, false).value;
    }
    return out;
  }

 private:
  static constexpr double kNegInf = -std::numeric_limits<double>::infinity();

  double evaluate(const Eigen::VectorXd& q, Eigen::VectorXd* grad) const {
    const std::size_t n = data_->size();
    if (q.size() != dim()) throw ModelError("parameter vector has wrong length");
    if (!q.allFinite()) return kNegInf;

    double value = 0.0;
    // Log Jacobian of the logistic map, and the slopes dx/dq.
    std::vector<double> x(n + 1), slope(n + 1);
    std::vector<char> clamped(n + 1, 0);
    for (std::size_t i = 0; i <= n; ++i) {
      const double qi = q[static_cast<Eigen::Index>(i)];
      const double s = logistic(qi);
      if (s <= 0.0 || s >= 1.0) return kNegInf;
      value += -softplus(-qi) - softplus(qi);
      slope[i] = s * (1.0 - s);
      const double c = detail::clamp_unit(s);
      clamped[i] = c != s;
      x[i] = c;
      if (grad) (*grad)[static_cast<Eigen::Index>(i)] = 1.0 - 2.0 * s;
    }

    if (config_.is_independence()) return value;

    const double tau_lat = x[0];
    const double tau_obs = tau_obs_from_tau_lat(tau_lat, config_.c);
    if (!(tau_obs < 1.0)) return kNegInf;  // sin(pi tau / 2)^c rounded to 1
    const CopulaSpec obs = make_spec(config_.obs_family, tau_obs);
    const CopulaSpec lat = make_spec(config_.lat_family, tau_lat);

    lat_margins_scratch().resize(n);
    obs_latent_scratch().resize(shared_margin_ ? 0 : n);
    auto& lat_m = lat_margins_scratch();
    auto& obs_m = obs_latent_scratch();
    for (std::size_t t = 0; t < n; ++t) {
      lat_m[t] = detail::prepare(config_.lat_family, x[t + 1]);
      if (!shared_margin_) obs_m[t] = detail::prepare(config_.obs_family, x[t + 1]);
    }

    const bool want = grad != nullptr;
    double d_tau_obs = 0.0, d_tau_lat = 0.0;
    auto& dv = dv_scratch();
    dv.assign(n, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      const auto& m = shared_margin_ ? lat_m[t] : obs_m[t];
      const auto r = detail::evaluate(obs, obs_margins_[t], m, want);
      value += r.value;
      if (want) {
        dv[t] += r.dv;
        d_tau_obs += r.dtau;
      }
    }
    for (std::size_t t = 1; t < n; ++t) {
      const auto r = detail::evaluate(lat, lat_m[t], lat_m[t - 1], want);
      value += r.value;
      if (want) {
        dv[t] += r.du;
        dv[t - 1] += r.dv;
        d_tau_lat += r.dtau;
      }
    }
    if (!std::isfinite(value)) return kNegInf;
    if (want) {
      auto& g = *grad;
      const double dtau = d_tau_obs * tau_obs_derivative(tau_lat, config_.c) + d_tau_lat;
      if (!clamped[0]) g[0] += dtau * slope[0];
      for (std::size_t t = 0; t < n; ++t) {
        if (!clamped[t + 1]) g[static_cast<Eigen::Index>(t + 1)] += dv[t] * slope[t + 1];
      }
      if (!g.allFinite()) return kNegInf;
    }
    return value;
  }

  // Per-thread scratch buffers keep evaluation allocation-free and the
  // object safe to share between chains.
  static std::vector<detail::Margin>& lat_margins_scratch() {
    thread_local std::vector<detail::Margin> buf;
    return buf;
  }
  static std::vector<detail::Margin>& obs_latent_scratch() {
    thread_local std::vector<detail::Margin> buf;
    return buf;
  }
  static std::vector<double>& dv_scratch() {
    thread_local std::vector<double> buf;
    return buf;
  }

  const PseudoSeries* data_;
  ModelConfig config_;
  std::vector<detail::Margin> obs_margins_;
  bool shared_margin_ = true;
};

/// Maps constrained (tau_lat, v_1..v_T) to the unconstrained coordinates.
inline Eigen::VectorXd to_unconstrained(double tau_lat, const std::vector<double>& latent) {
  Eigen::VectorXd q(static_cast<Eigen::Index>(latent.size()) + 1);
  q[0] = logit(tau_lat);
  for (std::size_t t = 0; t < latent.size(); ++t) q[static_cast<Eigen::Index>(t + 1)] = logit(latent[t]);
  return q;
}

inline double log_posterior(const Eigen::VectorXd& q, const PseudoSeries& data, const ModelConfig& config) {
  return Posterior(data, config).log_density(q);
}

inline Eigen::VectorXd grad_log_posterior(const Eigen::VectorXd& q, const PseudoSeries& data,
                                          const ModelConfig& config) {
  Eigen::VectorXd g;
  const double lp = Posterior(data, config).log_density_and_gradient(q, g);
  if (!std::isfinite(lp)) throw ModelError("gradient requested where the log posterior is not finite");
  return g;
}

}  // namespace cssm

#endif  // CSSM_MODEL_HPP
