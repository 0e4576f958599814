#ifndef CSSM_DISTRIBUTIONS_HPP
#define CSSM_DISTRIBUTIONS_HPP

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/erf.hpp>

namespace cssm {

// Standard normal helpers.
namespace normal {

inline double cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double quantile(double p) {
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

inline double log_pdf(double x) {
  constexpr double half_log_2pi = 0.91893853320467274178;
  return -0.5 * x * x - half_log_2pi;
}

}  // namespace normal

/**
 * Student t distribution with a fixed integer number of degrees of freedom.
 *
 * The central CDF uses the closed-form finite series available for integer
 * df, which makes the quantile (Newton on that series) an order of magnitude
 * cheaper than the general incomplete-beta route. Far tails defer to Boost.
 */
class StudentT {
 public:
  explicit StudentT(int df) : df_(df), boost_(static_cast<double>(df)) {
    if (df < 1) throw std::domain_error("StudentT: df must be a positive integer");
    const double nu = df;
    log_norm_ = std::lgamma((nu + 1.0) / 2.0) - std::lgamma(nu / 2.0) -
                0.5 * std::log(nu * std::numbers::pi);
  }

  int df() const noexcept { return df_; }

  double log_pdf(double x) const noexcept {
    const double nu = df_;
    return log_norm_ - 0.5 * (nu + 1.0) * std::log1p(x * x / nu);
  }

  double cdf(double x) const {
    const double p = series_cdf(x);
    if (p < kTail || p > 1.0 - kTail) return boost::math::cdf(boost_, x);
    return p;
  }

  double quantile(double p) const {
    if (!(p > 0.0 && p < 1.0)) throw std::domain_error("StudentT::quantile: p outside (0,1)");
    if (p < kTail || p > 1.0 - kTail) return boost::math::quantile(boost_, p);
    if (p == 0.5) return 0.0;
    // Solve on the lower half, where the CDF is convex, and reflect.
    const double q = p < 0.5 ? p : 1.0 - p;
    const double z = normal::quantile(q);
    const double nu = df_;
    double x = z + (z * z * z + z) / (4.0 * nu) +
               (5.0 * std::pow(z, 5) + 16.0 * z * z * z + 3.0 * z) / (96.0 * nu * nu);
    if (x > 0.0) x = z;
    for (int it = 0; it < 60; ++it) {
      const double f = series_cdf(x) - q;
      const double step = f / std::exp(log_pdf(x));
      double next = x - step;
      if (next > 0.0) next = 0.5 * x;
      const bool done = std::abs(next - x) <= 1e-15 * std::max(1.0, std::abs(x));
      x = next;
      if (done) break;
    }
    return p < 0.5 ? x : -x;
  }

 private:
  static constexpr double kTail = 1e-3;

  double series_cdf(double x) const noexcept {
    const double nu = df_;
    const double theta = std::atan(x / std::sqrt(nu));
    const double s = std::sin(theta);
    const double c = std::cos(theta);
    const double c2 = c * c;
    double a;
    if (df_ % 2 == 1) {
      if (df_ == 1) {
        a = 2.0 * theta / std::numbers::pi;
      } else {
        double term = c, sum = c;
        for (int k = 3; k <= df_ - 2; k += 2) {
          term *= c2 * (k - 1.0) / k;
          sum += term;
        }
        a = 2.0 / std::numbers::pi * (theta + s * sum);
      }
    } else {
      double term = 1.0, sum = 1.0;
      for (int k = 2; k <= df_ - 2; k += 2) {
        term *= c2 * (k - 1.0) / k;
        sum += term;
      }
      a = s * sum;
    }
    return 0.5 + 0.5 * a;
  }

  int df_;
  double log_norm_ = 0.0;
  boost::math::students_t_distribution<double> boost_;
};

inline double logistic(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) noexcept { return std::log(p) - std::log1p(-p); }

// log(1 + exp(x)) without overflow.
inline double softplus(double x) noexcept {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double log_add_exp(double a, double b) noexcept {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

}  // namespace cssm

#endif  // CSSM_DISTRIBUTIONS_HPP
