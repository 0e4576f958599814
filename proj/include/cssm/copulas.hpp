#ifndef CSSM_COPULAS_HPP
#define CSSM_COPULAS_HPP

// One-parameter bivariate copula families parametrized by Kendall's tau.
//
// Every family exposes its log density, the conditional distribution
// C(u | v) = dC(u, v)/dv (the "h-function"), the inverse of that conditional
// in its first argument, the CDF, and analytic partial derivatives of the log
// density with respect to u, v and tau. Only positive dependence is supported.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/bernoulli.hpp>

#include "cssm/distributions.hpp"

namespace cssm {

class CopulaDomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class RootSearchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class FamilyKind { Independence, Gaussian, StudentT, Gumbel, Clayton, Frank };

/**
 * A one-parameter copula family. Student t carries its degrees of freedom
 * as fixed data.
 */
class CopulaFamily {
 public:
  static CopulaFamily independence() { return CopulaFamily(FamilyKind::Independence, 0); }
  static CopulaFamily gaussian() { return CopulaFamily(FamilyKind::Gaussian, 0); }
  static CopulaFamily student_t(int df) {
    if (df < 1) throw CopulaDomainError("student t copula: df must be a positive integer");
    return CopulaFamily(FamilyKind::StudentT, df);
  }
  static CopulaFamily gumbel() { return CopulaFamily(FamilyKind::Gumbel, 0); }
  static CopulaFamily clayton() { return CopulaFamily(FamilyKind::Clayton, 0); }
  static CopulaFamily frank() { return CopulaFamily(FamilyKind::Frank, 0); }

  /// Parses "indep", "gaussian", "t<df>", "gumbel", "clayton", "frank" (case-insensitive).
  static CopulaFamily parse(std::string_view text) {
    std::string s(text);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "indep" || s == "independence" || s == "ind") return independence();
    if (s == "gaussian" || s == "gauss" || s == "normal") return gaussian();
    if (s == "gumbel") return gumbel();
    if (s == "clayton") return clayton();
    if (s == "frank") return frank();
    if (s.size() > 1 && s[0] == 't') {
      const std::string digits = s.substr(s[1] == '(' ? 2 : 1);
      std::size_t used = 0;
      int df = 0;
      try {
        df = std::stoi(digits, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used > 0 && (used == digits.size() || (digits[used] == ')' && used + 1 == digits.size())))
        return student_t(df);
    }
    throw CopulaDomainError("unknown copula family '" + std::string(text) + "'");
  }

  FamilyKind kind() const noexcept { return kind_; }
  int df() const noexcept { return df_; }
  bool is_elliptical() const noexcept {
    return kind_ == FamilyKind::Gaussian || kind_ == FamilyKind::StudentT;
  }

  std::string name() const {
    switch (kind_) {
      case FamilyKind::Independence: return "indep";
      case FamilyKind::Gaussian: return "gaussian";
      case FamilyKind::StudentT: return "t" + std::to_string(df_);
      case FamilyKind::Gumbel: return "gumbel";
      case FamilyKind::Clayton: return "clayton";
      case FamilyKind::Frank: return "frank";
    }
    return "?";
  }

  friend bool operator==(const CopulaFamily& a, const CopulaFamily& b) noexcept {
    return a.kind_ == b.kind_ && a.df_ == b.df_;
  }

  // Margins of the underlying elliptical law (Student t only).
  const StudentT& t_margin() const { return *t_; }
  const StudentT& t_conditional() const { return *t_plus_one_; }
  double t_copula_log_norm() const noexcept { return t_log_norm_; }

 private:
  CopulaFamily(FamilyKind kind, int df) : kind_(kind), df_(df) {
    if (kind == FamilyKind::StudentT) {
      t_ = std::make_shared<const StudentT>(df);
      t_plus_one_ = std::make_shared<const StudentT>(df + 1);
      const double nu = df;
      t_log_norm_ = std::lgamma((nu + 2.0) / 2.0) + std::lgamma(nu / 2.0) -
                    2.0 * std::lgamma((nu + 1.0) / 2.0);
    }
  }

  FamilyKind kind_;
  int df_;
  std::shared_ptr<const StudentT> t_;
  std::shared_ptr<const StudentT> t_plus_one_;
  double t_log_norm_ = 0.0;
};

namespace detail {

inline std::atomic<std::uint64_t>& clamp_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

constexpr double kUnitMargin = 1e-12;

// Clamps into [1e-12, 1 - 1e-12] for internal density evaluation; every
// clamp is counted.
inline double clamp_unit(double u) noexcept {
  if (u < kUnitMargin) {
    clamp_counter().fetch_add(1, std::memory_order_relaxed);
    return kUnitMargin;
  }
  if (u > 1.0 - kUnitMargin) {
    clamp_counter().fetch_add(1, std::memory_order_relaxed);
    return 1.0 - kUnitMargin;
  }
  return u;
}

inline void require_unit(double u, const char* what) {
  if (!std::isfinite(u) || !(u > 0.0 && u < 1.0))
    throw CopulaDomainError(std::string(what) + " must lie strictly inside (0,1)");
}

// Debye function of order one, D1(x) = (1/x) * int_0^x t / (e^t - 1) dt.
inline double debye1(double x) {
  if (x < 1e-2) {
    const double x2 = x * x;
    return 1.0 - x / 4.0 + x2 / 36.0 - x2 * x2 / 3600.0;
  }
  auto integrand = [](double t) { return t == 0.0 ? 1.0 : t / std::expm1(t); };
  // The integrand is below 1e-24 past t = 60.
  const double upper = std::min(x, 60.0);
  const double integral =
      boost::math::quadrature::gauss_kronrod<double, 31>::integrate(integrand, 0.0, upper, 15, 1e-14);
  return integral / x;
}

struct FrankTau {
  double tau;
  double dtau_dtheta;
};

inline FrankTau frank_tau(double theta) {
  if (theta < 1.0) {
    // tau = 4 sum_k B_2k theta^(2k-1) / ((2k+1)(2k)!), free of the cancellation in 1 - D1.
    FrankTau out{0.0, 0.0};
    const double t2 = theta * theta;
    double power = 1.0;  // theta^(2k-2)
    double factorial = 1.0;
    for (int k = 1; k <= 12; ++k) {
      factorial *= (2.0 * k - 1.0) * (2.0 * k);
      const double coef = 4.0 * boost::math::bernoulli_b2n<double>(k) / ((2.0 * k + 1.0) * factorial);
      out.tau += coef * power * theta;
      out.dtau_dtheta += coef * (2.0 * k - 1.0) * power;
      power *= t2;
    }
    return out;
  }
  const double d1 = debye1(theta);
  const double t2 = theta * theta;
  return {1.0 - 4.0 / theta * (1.0 - d1),
          4.0 / t2 - 8.0 * d1 / t2 + 4.0 / (theta * std::expm1(theta))};
}

// Safeguarded Newton on the monotone map theta -> tau.
inline double frank_theta(double tau) {
  if (tau == 0.0) return 0.0;
  double lo = 1e-8;
  if (tau <= frank_tau(lo).tau) return 9.0 * tau + 7.29 * tau * tau * tau;
  double hi = 1e4;
  while (frank_tau(hi).tau < tau) {
    lo = hi;
    hi *= 10.0;
    if (hi > 1e17) return hi;
  }
  double theta = std::min(std::max(4.0 / (1.0 - tau), lo), hi);
  if (tau < 0.3) theta = std::max(9.0 * tau, lo);
  for (int it = 0; it < 200; ++it) {
    const FrankTau f = frank_tau(theta);
    const double resid = f.tau - tau;
    if (resid > 0.0) hi = theta; else lo = theta;
    if (std::abs(resid) < 1e-15 || (hi - lo) < 1e-15 * theta) return theta;
    double next = theta - resid / f.dtau_dtheta;
    if (!(next > lo && next < hi)) next = std::sqrt(lo * hi);
    if (std::abs(next - theta) < 1e-15 * theta) return next;
    theta = next;
  }
  throw RootSearchError("frank tau->theta: no convergence in 200 iterations");
}

}  // namespace detail

/// Number of times density code clamped an argument away from the unit boundary.
inline std::uint64_t boundary_clamp_count() noexcept {
  return detail::clamp_counter().load(std::memory_order_relaxed);
}

inline double theta_to_tau(const CopulaFamily& family, double theta) {
  if (!std::isfinite(theta)) throw CopulaDomainError("theta must be finite");
  switch (family.kind()) {
    case FamilyKind::Independence:
      if (theta != 0.0) throw CopulaDomainError("independence copula has theta = 0 only");
      return 0.0;
    case FamilyKind::Gaussian:
    case FamilyKind::StudentT:
      if (theta < 0.0 || theta >= 1.0) throw CopulaDomainError("correlation must lie in [0,1)");
      return 2.0 / std::numbers::pi * std::asin(theta);
    case FamilyKind::Gumbel:
      if (theta < 1.0) throw CopulaDomainError("gumbel theta must be >= 1");
      return 1.0 - 1.0 / theta;
    case FamilyKind::Clayton:
      if (theta < 0.0) throw CopulaDomainError("clayton theta must be >= 0");
      return theta / (theta + 2.0);
    case FamilyKind::Frank:
      if (theta < 0.0) throw CopulaDomainError("frank theta must be >= 0");
      return theta == 0.0 ? 0.0 : detail::frank_tau(theta).tau;
  }
  return 0.0;
}

inline double tau_to_theta(const CopulaFamily& family, double tau) {
  if (!std::isfinite(tau) || tau < 0.0 || tau >= 1.0)
    throw CopulaDomainError("Kendall's tau must lie in [0,1)");
  switch (family.kind()) {
    case FamilyKind::Independence:
      if (tau != 0.0) throw CopulaDomainError("independence copula has tau = 0 only");
      return 0.0;
    case FamilyKind::Gaussian:
    case FamilyKind::StudentT: return std::sin(std::numbers::pi / 2.0 * tau);
    case FamilyKind::Gumbel: return 1.0 / (1.0 - tau);
    case FamilyKind::Clayton: return 2.0 * tau / (1.0 - tau);
    case FamilyKind::Frank: return detail::frank_theta(tau);
  }
  return 0.0;
}

/**
 * A family together with its dependence parameter. Kendall's tau is the
 * canonical field; theta and d(theta)/d(tau) are derived on construction.
 */
class CopulaSpec {
 public:
  static CopulaSpec from_tau(CopulaFamily family, double tau) {
    const double theta = tau_to_theta(family, tau);
    return CopulaSpec(std::move(family), tau, theta);
  }

  static CopulaSpec from_theta(CopulaFamily family, double theta) {
    const double tau = theta_to_tau(family, theta);
    return CopulaSpec(std::move(family), tau, theta);
  }

  static CopulaSpec independence() { return from_tau(CopulaFamily::independence(), 0.0); }

  const CopulaFamily& family() const noexcept { return family_; }
  double tau() const noexcept { return tau_; }
  double theta() const noexcept { return theta_; }
  double dtheta_dtau() const noexcept { return dtheta_dtau_; }

 private:
  CopulaSpec(CopulaFamily family, double tau, double theta)
      : family_(std::move(family)), tau_(tau), theta_(theta) {
    switch (family_.kind()) {
      case FamilyKind::Independence: dtheta_dtau_ = 0.0; break;
      case FamilyKind::Gaussian:
      case FamilyKind::StudentT:
        dtheta_dtau_ = std::numbers::pi / 2.0 * std::cos(std::numbers::pi / 2.0 * tau_);
        break;
      case FamilyKind::Gumbel: dtheta_dtau_ = 1.0 / ((1.0 - tau_) * (1.0 - tau_)); break;
      case FamilyKind::Clayton: dtheta_dtau_ = 2.0 / ((1.0 - tau_) * (1.0 - tau_)); break;
      case FamilyKind::Frank:
        dtheta_dtau_ = theta_ == 0.0 ? 9.0 : 1.0 / detail::frank_tau(theta_).dtau_dtheta;
        break;
    }
  }

  CopulaFamily family_;
  double tau_;
  double theta_;
  double dtheta_dtau_ = 0.0;
};

struct LogDensityPartials {
  double value = 0.0;
  double du = 0.0;
  double dv = 0.0;
  double dtau = 0.0;
};

namespace detail {

// A uniform argument together with its image on the scale of the family's
// margin (normal or Student t quantile for elliptical families, identity
// otherwise) and the log marginal density there.
struct Margin {
  double u = 0.5;
  double x = 0.5;
  double log_f = 0.0;
};

inline Margin prepare(const CopulaFamily& family, double u) {
  switch (family.kind()) {
    case FamilyKind::Gaussian: {
      const double x = normal::quantile(u);
      return {u, x, normal::log_pdf(x)};
    }
    case FamilyKind::StudentT: {
      const double x = family.t_margin().quantile(u);
      return {u, x, family.t_margin().log_pdf(x)};
    }
    default: return {u, u, 0.0};
  }
}

constexpr double kTinyTheta = 1e-13;

// Partials with respect to the first argument, the second argument and theta.
struct RawPartials {
  double value = 0.0;
  double da = 0.0;
  double db = 0.0;
  double dtheta = 0.0;
};

inline RawPartials gaussian_log_density(double r, const Margin& a, const Margin& b, bool grad) {
  const double x = a.x, y = b.x;
  const double om = 1.0 - r * r;
  const double sq = x * x + y * y;
  const double xy = x * y;
  const double num = r * r * sq - 2.0 * r * xy;
  RawPartials out;
  out.value = -0.5 * std::log(om) - num / (2.0 * om);
  if (grad) {
    out.da = -(r * r * x - r * y) / om * std::exp(-a.log_f);
    out.db = -(r * r * y - r * x) / om * std::exp(-b.log_f);
    const double dnum = 2.0 * r * sq - 2.0 * xy;
    out.dtheta = r / om - (dnum * om + 2.0 * r * num) / (2.0 * om * om);
  }
  return out;
}

inline RawPartials student_t_log_density(const CopulaFamily& family, double r, const Margin& a,
                                         const Margin& b, bool grad) {
  const double nu = family.df();
  const double x = a.x, y = b.x;
  const double om = 1.0 - r * r;
  const double scale = nu * om;
  const double xy = x * y;
  const double quad = x * x + y * y - 2.0 * r * xy;
  RawPartials out;
  out.value = family.t_copula_log_norm() - 0.5 * std::log(om) -
              0.5 * (nu + 2.0) * std::log1p(quad / scale) +
              0.5 * (nu + 1.0) * (std::log1p(x * x / nu) + std::log1p(y * y / nu));
  if (grad) {
    const double denom = scale + quad;
    out.da = (-(nu + 2.0) * (x - r * y) / denom + (nu + 1.0) * x / (nu + x * x)) *
             std::exp(-a.log_f);
    out.db = (-(nu + 2.0) * (y - r * x) / denom + (nu + 1.0) * y / (nu + y * y)) *
             std::exp(-b.log_f);
    out.dtheta = r / om - 0.5 * (nu + 2.0) * ((-2.0 * nu * r - 2.0 * xy) / denom + 2.0 * r / om);
  }
  return out;
}

struct GumbelTerms {
  double la, lb;      // log(-log u), log(-log v)
  double a, b;        // -log u, -log v
  double ls, lm, m;   // log s, log m, m = s^(1/theta), s = a^theta + b^theta
  double wa, wb;      // a^theta / s, b^theta / s
};

inline GumbelTerms gumbel_terms(double theta, double u, double v) {
  GumbelTerms g;
  g.a = -std::log(u);
  g.b = -std::log(v);
  g.la = std::log(g.a);
  g.lb = std::log(g.b);
  g.ls = log_add_exp(theta * g.la, theta * g.lb);
  g.lm = g.ls / theta;
  g.m = std::exp(g.lm);
  g.wa = std::exp(theta * g.la - g.ls);
  g.wb = std::exp(theta * g.lb - g.ls);
  return g;
}

inline RawPartials gumbel_log_density(double th, double u, double v, bool grad) {
  const GumbelTerms g = gumbel_terms(th, u, v);
  RawPartials out;
  const double mt = g.m + th - 1.0;
  out.value = -g.m + (th - 1.0) * (g.la + g.lb) + g.a + g.b + (1.0 - 2.0 * th) * g.lm + std::log(mt);
  if (grad) {
    auto d_first = [&](double a, double w) {
      const double m_a = g.m * w / a;
      return -m_a + (th - 1.0) / a + 1.0 + (1.0 - 2.0 * th) * m_a / g.m + m_a / mt;
    };
    out.da = -d_first(g.a, g.wa) / u;
    out.db = -d_first(g.b, g.wb) / v;
    const double dlm = -g.ls / (th * th) + (g.wa * g.la + g.wb * g.lb) / th;
    const double m_th = g.m * dlm;
    out.dtheta = -m_th + (g.la + g.lb) + (1.0 - 2.0 * th) * dlm - 2.0 * g.lm + (m_th + 1.0) / mt;
  }
  return out;
}

// log(u^-theta + v^-theta - 1) evaluated without overflow.
inline double clayton_log_s(double theta, double lu, double lv) {
  const double x = -theta * lu, y = -theta * lv;
  const double hi = std::max(x, y), lo = std::min(x, y);
  return hi + std::log1p(std::exp(-hi) * std::expm1(lo));
}

inline RawPartials clayton_log_density(double th, double u, double v, bool grad) {
  RawPartials out;
  if (th < kTinyTheta) return out;
  const double lu = std::log(u), lv = std::log(v);
  const double ls = clayton_log_s(th, lu, lv);
  out.value = std::log1p(th) - (1.0 + th) * (lu + lv) - (2.0 + 1.0 / th) * ls;
  if (grad) {
    const double ru = std::exp(-th * lu - ls);
    const double rv = std::exp(-th * lv - ls);
    out.da = (-(1.0 + th) + (2.0 * th + 1.0) * ru) / u;
    out.db = (-(1.0 + th) + (2.0 * th + 1.0) * rv) / v;
    out.dtheta = 1.0 / (1.0 + th) - (lu + lv) + ls / (th * th) + (2.0 + 1.0 / th) * (lu * ru + lv * rv);
  }
  return out;
}

// 1 - e^-theta - (1 - e^-theta*u)(1 - e^-theta*v), written as a sum of
// non-negative terms.
inline double frank_denominator(double th, double u, double v) {
  return -std::exp(-th * u) * std::expm1(-th * v) - std::exp(-th * v) * std::expm1(-th * (1.0 - v));
}

inline RawPartials frank_log_density(double th, double u, double v, bool grad) {
  RawPartials out;
  if (th < kTinyTheta) return out;
  const double d = frank_denominator(th, u, v);
  out.value = std::log(th) + std::log(-std::expm1(-th)) - th * (u + v) - 2.0 * std::log(d);
  if (grad) {
    const double ea = std::exp(-th * u), eb = std::exp(-th * v);
    const double am = std::expm1(-th * u), bm = std::expm1(-th * v);
    out.da = -th - 2.0 * th * ea * bm / d;
    out.db = -th - 2.0 * th * eb * am / d;
    const double d_theta = std::exp(-th) + u * ea * bm + v * eb * am;
    out.dtheta = 1.0 / th + 1.0 / std::expm1(th) - (u + v) - 2.0 * d_theta / d;
  }
  return out;
}

inline RawPartials raw_log_density(const CopulaSpec& spec, const Margin& a, const Margin& b,
                                   bool grad) {
  const double th = spec.theta();
  switch (spec.family().kind()) {
    case FamilyKind::Independence: return {};
    case FamilyKind::Gaussian: return gaussian_log_density(th, a, b, grad);
    case FamilyKind::StudentT: return student_t_log_density(spec.family(), th, a, b, grad);
    case FamilyKind::Gumbel: return gumbel_log_density(th, a.u, b.u, grad);
    case FamilyKind::Clayton: return clayton_log_density(th, a.u, b.u, grad);
    case FamilyKind::Frank: return frank_log_density(th, a.u, b.u, grad);
  }
  return {};
}

/**
 * Log density and partials at prepared margins. Arguments are evaluated in
 * canonical order so that the result is exactly exchangeable.
 */
inline LogDensityPartials evaluate(const CopulaSpec& spec, const Margin& a, const Margin& b,
                                   bool grad) {
  const bool swap = a.u > b.u;
  const RawPartials raw = swap ? raw_log_density(spec, b, a, grad) : raw_log_density(spec, a, b, grad);
  LogDensityPartials out;
  out.value = raw.value;
  if (grad) {
    out.du = swap ? raw.db : raw.da;
    out.dv = swap ? raw.da : raw.db;
    out.dtau = raw.dtheta * spec.dtheta_dtau();
  }
  return out;
}

inline double h_unchecked(const CopulaSpec& spec, double u, double v) {
  const double th = spec.theta();
  switch (spec.family().kind()) {
    case FamilyKind::Independence: return u;
    case FamilyKind::Gaussian: {
      const double x = normal::quantile(u), y = normal::quantile(v);
      return normal::cdf((x - th * y) / std::sqrt(1.0 - th * th));
    }
    case FamilyKind::StudentT: {
      const auto& fam = spec.family();
      const double nu = fam.df();
      const double x = fam.t_margin().quantile(u), y = fam.t_margin().quantile(v);
      const double scale = std::sqrt((nu + y * y) * (1.0 - th * th) / (nu + 1.0));
      return fam.t_conditional().cdf((x - th * y) / scale);
    }
    case FamilyKind::Gumbel: {
      const GumbelTerms g = gumbel_terms(th, u, v);
      return std::exp(-g.m + (1.0 - th) * g.lm + (th - 1.0) * g.lb + g.b);
    }
    case FamilyKind::Clayton: {
      if (th < kTinyTheta) return u;
      const double lv = std::log(v);
      const double ls = clayton_log_s(th, std::log(u), lv);
      return std::exp(-(th + 1.0) * lv - (1.0 / th + 1.0) * ls);
    }
    case FamilyKind::Frank: {
      if (th < kTinyTheta) return u;
      return -std::expm1(-th * u) * std::exp(-th * v) / frank_denominator(th, u, v);
    }
  }
  return u;
}

// Gumbel conditional inverse: safeguarded Newton on log(-log u), where the
// conditional is strictly decreasing.
inline double gumbel_h_inverse(double th, double p, double v) {
  const double b = -std::log(v);
  const double lb = std::log(b);
  auto eval = [&](double la) {
    const double a = std::exp(la);
    const double ls = log_add_exp(th * la, th * lb);
    const double lm = ls / th;
    const double m = std::exp(lm);
    const double h = std::exp(-m + (1.0 - th) * lm + (th - 1.0) * lb + b);
    // d h / d la = -c(u, v) * u * a
    const double log_c = -m + (th - 1.0) * (la + lb) + a + b + (1.0 - 2.0 * th) * lm +
                         std::log(m + th - 1.0);
    const double dh = -std::exp(log_c - a + la);
    return std::pair{h, dh};
  };
  double lo = std::log(1e-15), hi = std::log(745.0);
  if (eval(lo).first <= p) return std::exp(-std::exp(lo));
  if (eval(hi).first >= p) return std::exp(-std::exp(hi));
  double la = std::log(-std::log(p));  // independence solution
  la = std::clamp(la, lo, hi);
  for (int it = 0; it < 200; ++it) {
    const auto [h, dh] = eval(la);
    const double resid = h - p;
    if (std::abs(resid) <= 1e-14) return std::exp(-std::exp(la));
    if (resid > 0.0) lo = la; else hi = la;
    double next = la - resid / dh;
    if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
    if (std::abs(next - la) <= 1e-15 * std::max(1.0, std::abs(la)) || hi - lo <= 1e-15)
      return std::exp(-std::exp(next));
    la = next;
  }
  throw RootSearchError("gumbel h-inverse: no convergence in 200 iterations");
}

inline double h_inverse_unchecked(const CopulaSpec& spec, double p, double v) {
  const double th = spec.theta();
  double u = p;
  switch (spec.family().kind()) {
    case FamilyKind::Independence: return p;
    case FamilyKind::Gaussian: {
      const double y = normal::quantile(v);
      u = normal::cdf(normal::quantile(p) * std::sqrt(1.0 - th * th) + th * y);
      break;
    }
    case FamilyKind::StudentT: {
      const auto& fam = spec.family();
      const double nu = fam.df();
      const double y = fam.t_margin().quantile(v);
      const double scale = std::sqrt((nu + y * y) * (1.0 - th * th) / (nu + 1.0));
      u = fam.t_margin().cdf(fam.t_conditional().quantile(p) * scale + th * y);
      break;
    }
    case FamilyKind::Gumbel:
      if (th == 1.0) return p;
      u = gumbel_h_inverse(th, p, v);
      break;
    case FamilyKind::Clayton: {
      if (th < kTinyTheta) return p;
      const double lv = std::log(v);
      const double y = -th * lv;
      const double l = -th / (th + 1.0) * std::log(p) - th * lv;
      const double big = y + std::log(std::expm1(l - y));
      const double log_term = log_add_exp(big, 0.0);
      u = std::exp(-log_term / th);
      break;
    }
    case FamilyKind::Frank: {
      if (th < kTinyTheta) return p;
      // Both terms written as log-sums to avoid cancellation at large theta.
      const double lp = std::log(p), lq = std::log1p(-p);
      const double num = log_add_exp(lq - th * v, lp - th);
      const double den = log_add_exp(lp, lq - th * v);
      u = -(num - den) / th;
      break;
    }
  }
  if (u >= 1.0) u = std::nextafter(1.0, 0.0);
  if (u <= 0.0) u = std::numeric_limits<double>::min();
  return u;
}

}  // namespace detail

/// log c(u, v); u and v must lie strictly inside (0,1).
inline double log_density(const CopulaSpec& spec, double u, double v) {
  detail::require_unit(u, "u");
  detail::require_unit(v, "v");
  const auto a = detail::prepare(spec.family(), u);
  const auto b = detail::prepare(spec.family(), v);
  return detail::evaluate(spec, a, b, false).value;
}

/// Partial derivatives of log c with respect to u, v and Kendall's tau.
inline LogDensityPartials log_density_partials(const CopulaSpec& spec, double u, double v) {
  detail::require_unit(u, "u");
  detail::require_unit(v, "v");
  const auto a = detail::prepare(spec.family(), u);
  const auto b = detail::prepare(spec.family(), v);
  return detail::evaluate(spec, a, b, true);
}

/// Conditional distribution C(u | v) = dC(u, v)/dv.
inline double h_function(const CopulaSpec& spec, double u, double v) {
  detail::require_unit(u, "u");
  detail::require_unit(v, "v");
  return detail::h_unchecked(spec, u, v);
}

/// Solves h_function(spec, u, v) = p for u.
inline double h_inverse(const CopulaSpec& spec, double p, double v) {
  detail::require_unit(p, "p");
  detail::require_unit(v, "v");
  return detail::h_inverse_unchecked(spec, p, v);
}

/// Copula CDF C(u, v). Elliptical families integrate the conditional numerically.
inline double cdf(const CopulaSpec& spec, double u, double v) {
  detail::require_unit(u, "u");
  detail::require_unit(v, "v");
  const double th = spec.theta();
  switch (spec.family().kind()) {
    case FamilyKind::Independence: return u * v;
    case FamilyKind::Gaussian:
    case FamilyKind::StudentT: {
      // C(u, v) = int_0^u C(v | s) ds
      auto integrand = [&](double s) {
        if (s <= 0.0) return 0.0;
        return detail::h_unchecked(spec, v, s);
      };
      return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, 0.0, u, 12, 1e-12);
    }
    case FamilyKind::Gumbel: return std::exp(-detail::gumbel_terms(th, u, v).m);
    case FamilyKind::Clayton:
      if (th < detail::kTinyTheta) return u * v;
      return std::exp(-detail::clayton_log_s(th, std::log(u), std::log(v)) / th);
    case FamilyKind::Frank:
      if (th < detail::kTinyTheta) return u * v;
      return -std::log1p(std::expm1(-th * u) * std::expm1(-th * v) / std::expm1(-th)) / th;
  }
  return u * v;
}

}  // namespace cssm

#endif  // CSSM_COPULAS_HPP
