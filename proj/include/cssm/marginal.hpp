#ifndef CSSM_MARGINAL_HPP
#define CSSM_MARGINAL_HPP

// Penalized B-spline additive regression of log PM2.5 on meteorological
// covariates, used to standardize a monthly series before copula inference.
//
// Design columns, in order:
//   intercept
//   DEWP, TEMP, PRES, IWS splines, each replicated for NW, NE, SE, CV winds
//   PREC spline (no wind interaction)
//   PREC > 0 indicator
//   cyclic hour-of-day basis
//   weekday dummies for days 2..7 (Monday = 1 is the baseline)
// giving 1 + 16 nb + nb + 1 + n_hour + 6 columns, nb = knots + degree + 1.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "cssm/model.hpp"

namespace cssm {

class MarginalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class WindDirection { NW = 0, NE = 1, SE = 2, CV = 3 };

inline constexpr std::array<WindDirection, 4> kWindDirections = {WindDirection::NW, WindDirection::NE,
                                                                 WindDirection::SE, WindDirection::CV};

inline std::string_view to_string(WindDirection w) {
  switch (w) {
    case WindDirection::NW: return "NW";
    case WindDirection::NE: return "NE";
    case WindDirection::SE: return "SE";
    case WindDirection::CV: return "CV";
  }
  return "?";
}

/// Case-insensitive parse of NW / NE / SE / CV.
inline WindDirection parse_wind_direction(std::string_view s) {
  std::string up;
  for (char ch : s) up.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
  for (auto w : kWindDirections)
    if (up == to_string(w)) return w;
  throw MarginalError("unknown wind direction '" + std::string(s) + "'");
}

struct HourlyRecord {
  int year = 0, month = 1, day = 1, hour = 0;
  int weekday = 1;  // 1 = Monday .. 7 = Sunday
  std::optional<double> pm25;
  double dewp = 0.0, temp = 0.0, pres = 0.0;
  WindDirection cbwd = WindDirection::NW;
  double iws = 0.0;
  double prec = 0.0;
  std::int64_t row = 0;  // provenance: source row number

  bool prec_ind() const noexcept { return prec > 0.0; }
};

/// Clamped cubic (or other degree) B-spline basis on [lo, hi].
struct SplineBasis {
  double lo = 0.0, hi = 1.0;
  std::vector<double> interior;
  int degree = 3;

  int size() const noexcept { return static_cast<int>(interior.size()) + degree + 1; }

  /// Interior knots at sample quantiles; equal spacing when quantiles tie.
  static SplineBasis from_values(std::vector<double> values, int n_interior, int degree) {
    if (values.empty()) throw MarginalError("spline basis needs data");
    std::sort(values.begin(), values.end());
    SplineBasis b;
    b.degree = degree;
    b.lo = values.front();
    b.hi = values.back();
    if (!(b.hi > b.lo)) b.hi = b.lo + 1.0;
    for (int k = 1; k <= n_interior; ++k) b.interior.push_back(quantile_sorted(values, double(k) / (n_interior + 1)));
    bool ok = true;
    double prev = b.lo;
    for (double x : b.interior) {
      if (!(x > prev)) ok = false;
      prev = x;
    }
    if (!(b.hi > prev)) ok = false;
    if (!ok) {
      for (int k = 1; k <= n_interior; ++k)
        b.interior[k - 1] = b.lo + (b.hi - b.lo) * double(k) / (n_interior + 1);
    }
    return b;
  }

  /// Writes size() basis values at x (clamped to [lo, hi]); returns true if x was outside.
  bool evaluate(double x, double* out) const {
    const bool outside = x < lo || x > hi;
    x = std::clamp(x, lo, hi);
    const int n = size();
    std::fill(out, out + n, 0.0);
    const std::vector<double> t = knots();
    // Span index: t[span] <= x < t[span + 1], with the last span closed.
    int span = n - 1;
    if (x < hi) {
      span = static_cast<int>(std::upper_bound(t.begin(), t.end(), x) - t.begin()) - 1;
      span = std::clamp(span, degree, n - 1);
    }
    std::vector<double> left(degree + 1), right(degree + 1), nbasis(degree + 1);
    nbasis[0] = 1.0;
    for (int j = 1; j <= degree; ++j) {
      left[j] = x - t[span + 1 - j];
      right[j] = t[span + j] - x;
      double saved = 0.0;
      for (int r = 0; r < j; ++r) {
        const double denom = right[r + 1] + left[j - r];
        const double temp = denom > 0.0 ? nbasis[r] / denom : 0.0;
        nbasis[r] = saved + right[r + 1] * temp;
        saved = left[j - r] * temp;
      }
      nbasis[j] = saved;
    }
    for (int j = 0; j <= degree; ++j) out[span - degree + j] = nbasis[j];
    return outside;
  }

  std::vector<double> knots() const {
    std::vector<double> t(degree + 1, lo);
    t.insert(t.end(), interior.begin(), interior.end());
    t.insert(t.end(), degree + 1, hi);
    return t;
  }

  static double quantile_sorted(const std::vector<double>& s, double p) {
    const double h = (s.size() - 1) * p;
    const auto i = static_cast<std::size_t>(std::floor(h));
    if (i + 1 >= s.size()) return s.back();
    return s[i] + (h - i) * (s[i + 1] - s[i]);
  }
};

/// Periodic cubic B-splines with equally spaced knots on [0, period).
struct CyclicBasis {
  int n = 8;
  double period = 24.0;

  int size() const noexcept { return n; }

  void evaluate(double x, double* out) const {
    std::fill(out, out + n, 0.0);
    const double h = period / n;
    double s = std::fmod(x, period);
    if (s < 0) s += period;
    s /= h;
    const int i = static_cast<int>(std::floor(s));
    const double f = s - i;
    // Uniform cubic B-spline pieces on the unit interval.
    const double w[4] = {(1 - f) * (1 - f) * (1 - f) / 6.0, (3 * f * f * f - 6 * f * f + 4) / 6.0,
                         (-3 * f * f * f + 3 * f * f + 3 * f + 1) / 6.0, f * f * f / 6.0};
    for (int k = 0; k < 4; ++k) out[((i + k - 1) % n + n) % n] += w[k];
  }
};

/// A block of design columns sharing one smoothing parameter.
struct PenaltyGroup {
  std::string name;
  int first = 0;
  int size = 0;
  bool cyclic = false;
};

struct DesignSpec {
  SplineBasis dewp, temp, pres, iws, prec;
  CyclicBasis hour;

  static constexpr int kWeekdayDummies = 6;

  static DesignSpec from_records(const std::vector<HourlyRecord>& rows, int n_interior, int degree, int hour_basis) {
    auto collect = [&](auto field) {
      std::vector<double> v;
      v.reserve(rows.size());
      for (const auto& r : rows) v.push_back(field(r));
      return v;
    };
    DesignSpec d;
    d.dewp = SplineBasis::from_values(collect([](const auto& r) { return r.dewp; }), n_interior, degree);
    d.temp = SplineBasis::from_values(collect([](const auto& r) { return r.temp; }), n_interior, degree);
    d.pres = SplineBasis::from_values(collect([](const auto& r) { return r.pres; }), n_interior, degree);
    d.iws = SplineBasis::from_values(collect([](const auto& r) { return r.iws; }), n_interior, degree);
    d.prec = SplineBasis::from_values(collect([](const auto& r) { return r.prec; }), n_interior, degree);
    d.hour.n = hour_basis;
    return d;
  }

  int spline_size() const noexcept { return dewp.size(); }

  int n_cols() const noexcept {
    return 1 + 4 * (dewp.size() + temp.size() + pres.size() + iws.size()) + prec.size() + 1 + hour.size() +
           kWeekdayDummies;
  }

  std::vector<PenaltyGroup> groups() const {
    std::vector<PenaltyGroup> g;
    int col = 1;
    const std::pair<const char*, const SplineBasis*> smooth[] = {
        {"DEWP", &dewp}, {"TEMP", &temp}, {"PRES", &pres}, {"IWS", &iws}};
    for (const auto& [name, basis] : smooth) {
      for (auto w : kWindDirections) {
        g.push_back({std::string(name) + ":" + std::string(to_string(w)), col, basis->size(), false});
        col += basis->size();
      }
    }
    g.push_back({"PREC", col, prec.size(), false});
    col += prec.size() + 1;
    g.push_back({"H", col, hour.size(), true});
    return g;
  }

  /// Fills one design row; returns true if any spline covariate was extrapolated.
  bool fill_row(const HourlyRecord& r, double* out) const {
    std::fill(out, out + n_cols(), 0.0);
    out[0] = 1.0;
    int col = 1;
    bool outside = false;
    std::vector<double> buf;
    const std::pair<double, const SplineBasis*> smooth[] = {
        {r.dewp, &dewp}, {r.temp, &temp}, {r.pres, &pres}, {r.iws, &iws}};
    for (const auto& [x, basis] : smooth) {
      const int nb = basis->size();
      buf.resize(nb);
      outside |= basis->evaluate(x, buf.data());
      const int dir = static_cast<int>(r.cbwd);
      std::copy(buf.begin(), buf.end(), out + col + dir * nb);
      col += 4 * nb;
    }
    outside |= prec.evaluate(r.prec, out + col);
    col += prec.size();
    out[col++] = r.prec_ind() ? 1.0 : 0.0;
    hour.evaluate(r.hour, out + col);
    col += hour.size();
    if (r.weekday < 1 || r.weekday > 7) throw MarginalError("weekday outside 1..7");
    if (r.weekday >= 2) out[col + r.weekday - 2] = 1.0;
    return outside;
  }

  Eigen::MatrixXd matrix(const std::vector<HourlyRecord>& rows) const {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> x(rows.size(), n_cols());
    for (std::size_t i = 0; i < rows.size(); ++i) fill_row(rows[i], x.row(static_cast<Eigen::Index>(i)).data());
    return x;
  }
};

struct MarginalOptions {
  int n_interior_knots = 8;
  int degree = 3;
  int hour_basis = 8;
  std::vector<double> lambda_grid = default_lambda_grid();
  double kappa = 0.1;    // ridge added to each curvature penalty
  double ridge = 1e-8;   // ridge on unpenalized columns
  int min_rows = 30;
  double gcv_gamma = 1.4;  // edf inflation in the GCV score

  /// 10^-4 .. 10^4 in half-decade steps (17 values).
  static std::vector<double> default_lambda_grid() {
    std::vector<double> g;
    for (int k = -8; k <= 8; ++k) g.push_back(std::pow(10.0, k / 2.0));
    return g;
  }
};

struct MarginalModel {
  int month = 0;
  DesignSpec design;
  std::vector<PenaltyGroup> groups;
  std::vector<double> lambdas;  // one per group
  double kappa = 0.1;
  double ridge = 1e-8;
  Eigen::VectorXd coef;
  double sigma_hat = 1.0;
  double edf = 0.0;
  double gcv = 0.0;
  double rss = 0.0;
  int n_obs = 0;
  std::vector<double> group_edf;

  /// f(x) on the log scale; `extrapolated` reports covariates outside the training range.
  double predict_mean(const HourlyRecord& r, bool* extrapolated = nullptr) const {
    std::vector<double> row(static_cast<std::size_t>(design.n_cols()));
    const bool outside = design.fill_row(r, row.data());
    if (extrapolated) *extrapolated = outside;
    return Eigen::Map<const Eigen::VectorXd>(row.data(), design.n_cols()).dot(coef);
  }
};

namespace detail {

inline Eigen::MatrixXd difference_penalty(int n, bool cyclic, double kappa) {
  Eigen::MatrixXd d;
  if (cyclic) {
    d = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
      d(i, i) = 1.0;
      d(i, (i + 1) % n) = -2.0;
      d(i, (i + 2) % n) = 1.0;
    }
  } else {
    d = Eigen::MatrixXd::Zero(std::max(0, n - 2), n);
    for (int i = 0; i + 2 < n; ++i) {
      d(i, i) = 1.0;
      d(i, i + 1) = -2.0;
      d(i, i + 2) = 1.0;
    }
  }
  Eigen::MatrixXd s = d.transpose() * d;
  s.diagonal().array() += kappa;
  return s;
}

struct PenalizedFit {
  Eigen::VectorXd coef;
  double rss = 0.0;
  double edf = 0.0;
  double gcv = std::numeric_limits<double>::infinity();
  std::vector<double> group_edf;
};

class PenalizedSystem {
 public:
  PenalizedSystem(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const std::vector<PenaltyGroup>& groups,
                  double kappa, double ridge, double gcv_gamma = 1.0)
      : x_(x), y_(y), groups_(groups), ridge_(ridge), gcv_gamma_(gcv_gamma) {
    xtx_ = x.transpose() * x;
    xty_ = x.transpose() * y;
    penalized_.assign(static_cast<std::size_t>(x.cols()), false);
    for (const auto& g : groups) {
      blocks_.push_back(difference_penalty(g.size, g.cyclic, kappa));
      for (int j = 0; j < g.size; ++j) penalized_[g.first + j] = true;
    }
  }

  PenalizedFit solve(const std::vector<double>& lambdas, bool with_group_edf = false) const {
    Eigen::MatrixXd a = xtx_;
    for (std::size_t k = 0; k < groups_.size(); ++k) {
      const auto& g = groups_[k];
      a.block(g.first, g.first, g.size, g.size) += lambdas[k] * blocks_[k];
    }
    for (Eigen::Index j = 0; j < a.rows(); ++j)
      if (!penalized_[j]) a(j, j) += ridge_;
    const Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) throw MarginalError("penalized normal equations are singular");
    PenalizedFit fit;
    fit.coef = llt.solve(xty_);
    fit.rss = (y_ - x_ * fit.coef).squaredNorm();
    const Eigen::MatrixXd influence = llt.solve(xtx_);
    fit.edf = influence.trace();
    const double n = static_cast<double>(y_.size());
    const double dof = n - gcv_gamma_ * fit.edf;
    fit.gcv = dof > 0.0 ? n * fit.rss / (dof * dof) : std::numeric_limits<double>::infinity();
    if (with_group_edf) {
      for (const auto& g : groups_) fit.group_edf.push_back(influence.diagonal().segment(g.first, g.size).sum());
    }
    return fit;
  }

 private:
  const Eigen::MatrixXd& x_;
  const Eigen::VectorXd& y_;
  std::vector<PenaltyGroup> groups_;
  double ridge_;
  double gcv_gamma_;
  Eigen::MatrixXd xtx_;
  Eigen::VectorXd xty_;
  std::vector<Eigen::MatrixXd> blocks_;
  std::vector<bool> penalized_;
};

}  // namespace detail

/**
 * Fits the additive model to rows with a PM2.5 value. Smoothing parameters
 * come from the grid: first one shared value minimizing GCV, then a single
 * coordinate sweep over the groups.
 */
inline MarginalModel fit_marginal(const std::vector<HourlyRecord>& records, int month,
                                  const MarginalOptions& options = {}) {
  std::vector<HourlyRecord> rows;
  for (const auto& r : records) {
    if (!r.pm25) continue;
    if (!(*r.pm25 > 0.0)) throw MarginalError("PM2.5 must be positive to take logs (row " + std::to_string(r.row) + ")");
    rows.push_back(r);
  }
  if (static_cast<int>(rows.size()) < options.min_rows)
    throw MarginalError("too few usable rows for the marginal fit: " + std::to_string(rows.size()) + " < " +
                        std::to_string(options.min_rows));
  if (options.lambda_grid.empty()) throw MarginalError("empty smoothing grid");

  MarginalModel m;
  m.month = month;
  m.kappa = options.kappa;
  m.ridge = options.ridge;
  m.design = DesignSpec::from_records(rows, options.n_interior_knots, options.degree, options.hour_basis);
  m.groups = m.design.groups();
  const Eigen::MatrixXd x = m.design.matrix(rows);
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) y[static_cast<Eigen::Index>(i)] = std::log(*rows[i].pm25);

  const detail::PenalizedSystem system(x, y, m.groups, options.kappa, options.ridge, options.gcv_gamma);
  const std::size_t ng = m.groups.size();
  std::vector<double> lambdas(ng, options.lambda_grid.front());
  double best = std::numeric_limits<double>::infinity();
  for (double lam : options.lambda_grid) {
    std::vector<double> trial(ng, lam);
    const double g = system.solve(trial).gcv;
    if (g < best) {
      best = g;
      lambdas = trial;
    }
  }
  for (std::size_t k = 0; k < ng; ++k) {
    for (double lam : options.lambda_grid) {
      if (lam == lambdas[k]) continue;
      auto trial = lambdas;
      trial[k] = lam;
      const double g = system.solve(trial).gcv;
      if (g < best) {
        best = g;
        lambdas = trial;
      }
    }
  }
  const auto fit = system.solve(lambdas, true);
  const double n = static_cast<double>(y.size());
  if (!(n - fit.edf > 0.0)) throw MarginalError("effective degrees of freedom exhaust the sample");
  m.lambdas = lambdas;
  m.coef = fit.coef;
  m.rss = fit.rss;
  m.edf = fit.edf;
  m.gcv = fit.gcv;
  m.group_edf = fit.group_edf;
  m.n_obs = static_cast<int>(y.size());
  m.sigma_hat = std::sqrt(fit.rss / (n - fit.edf));
  if (!(m.sigma_hat > 0.0)) throw MarginalError("residual scale is zero");
  return m;
}

struct Standardized {
  PseudoSeries series;
  std::vector<double> fitted;           // f(x_t) for the kept rows
  std::vector<std::int64_t> dropped;    // source rows without a PM2.5 value
  int extrapolated = 0;                 // kept rows with covariates outside the training range
};

/// z_t = (log pm_t - f(x_t)) / sigma and u_t = Phi(z_t) for rows with a response.
inline Standardized standardize(const MarginalModel& model, const std::vector<HourlyRecord>& records) {
  Standardized out;
  std::vector<double> z;
  std::vector<std::int64_t> index;
  for (const auto& r : records) {
    if (!r.pm25) {
      out.dropped.push_back(r.row);
      continue;
    }
    bool outside = false;
    const double f = model.predict_mean(r, &outside);
    out.extrapolated += outside;
    out.fitted.push_back(f);
    z.push_back((std::log(*r.pm25) - f) / model.sigma_hat);
    index.push_back(r.row);
  }
  out.series = PseudoSeries::from_z(std::move(z), std::move(index));
  return out;
}

}  // namespace cssm

#endif  // CSSM_MARGINAL_HPP
