#ifndef CSSM_PREDICT_HPP
#define CSSM_PREDICT_HPP

// Predictive simulation. Copula-scale draws depend only on posterior draws;
// the marginal model enters when mapping to the response scale, and its
// estimation uncertainty is ignored.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include "cssm/copulas.hpp"
#include "cssm/distributions.hpp"
#include "cssm/inference.hpp"
#include "cssm/marginal.hpp"
#include "cssm/model.hpp"
#include "cssm/random.hpp"
#include "cssm/sampler.hpp"

namespace cssm {

class PredictError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Horizon { InSample, Ahead };

/**
 * One predictive draw per posterior draw. `step` is the 1-based time index
 * for in-sample draws or the number of steps ahead.
 */
struct PredictiveDraws {
  Horizon kind = Horizon::InSample;
  int step = 1;
  std::vector<double> u;
  std::vector<double> eps;  // standard normal scores of u
  std::vector<double> y;    // response scale (log PM2.5), when mapped
  std::vector<double> pm;   // exp(y), when mapped

  std::size_t size() const noexcept { return u.size(); }

  void fill_eps() {
    eps.resize(u.size());
    for (std::size_t r = 0; r < u.size(); ++r) eps[r] = normal::quantile(u[r]);
  }
};

/// Controls random streams and threading of predictive simulation.
struct PredictOptions {
  std::uint64_t seed = 1;
  int block_size = 256;  // posterior draws per random substream
  int workers = 1;
};

namespace detail {

// Runs body(block, first, last) over draw blocks; each block owns its stream.
template <class Body>
void for_each_block(int n, const PredictOptions& opt, Body body) {
  if (opt.block_size < 1) throw PredictError("block size must be positive");
  const int blocks = (n + opt.block_size - 1) / opt.block_size;
  auto run = [&](int b) { body(b, b * opt.block_size, std::min(n, (b + 1) * opt.block_size)); };
  const int workers = std::clamp(opt.workers, 1, std::max(1, blocks));
  if (workers == 1) {
    for (int b = 0; b < blocks; ++b) run(b);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (int b = w; b < blocks; b += workers) run(b);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline constexpr std::uint64_t kInSampleStream = 1;
inline constexpr std::uint64_t kAheadStream = 2;

}  // namespace detail

/// Draws u_t from the observation conditional given each posterior latent state.
inline PredictiveDraws in_sample(const PosteriorDraws& draws, int t, const PredictOptions& opt = {}) {
  const Eigen::Index n = draws.n_obs();
  if (t < 1 || t > n) throw PredictError("in-sample index outside 1..T");
  const auto tau_obs = draws.tau_obs_all();
  const Eigen::MatrixXd latent = draws.latent_all();
  PredictiveDraws out;
  out.kind = Horizon::InSample;
  out.step = t;
  out.u.resize(tau_obs.size());
  detail::for_each_block(static_cast<int>(tau_obs.size()), opt, [&](int block, int first, int last) {
    auto rng = Rng::substream(opt.seed, {detail::kInSampleStream, static_cast<std::uint64_t>(t),
                                         static_cast<std::uint64_t>(block)});
    for (int r = first; r < last; ++r) {
      const auto spec = make_spec(draws.model.obs_family, tau_obs[r]);
      out.u[r] = h_inverse(spec, rng.uniform(), latent(r, t - 1));
    }
  });
  out.fill_eps();
  return out;
}

/**
 * Advances each draw's final latent state `steps` times through the state
 * conditional, then draws the observation.
 */
inline PredictiveDraws out_of_sample(const PosteriorDraws& draws, int steps, const PredictOptions& opt = {}) {
  if (steps < 1) throw PredictError("steps ahead must be at least 1");
  const Eigen::Index n = draws.n_obs();
  if (n < 1) throw PredictError("no posterior draws");
  const auto tau_lat = draws.tau_lat_all();
  const auto tau_obs = draws.tau_obs_all();
  const Eigen::MatrixXd latent = draws.latent_all();
  PredictiveDraws out;
  out.kind = Horizon::Ahead;
  out.step = steps;
  out.u.resize(tau_lat.size());
  detail::for_each_block(static_cast<int>(tau_lat.size()), opt, [&](int block, int first, int last) {
    auto rng = Rng::substream(opt.seed, {detail::kAheadStream, static_cast<std::uint64_t>(steps),
                                         static_cast<std::uint64_t>(block)});
    for (int r = first; r < last; ++r) {
      const auto lat = make_spec(draws.model.lat_family, tau_lat[r]);
      double v = latent(r, n - 1);
      for (int i = 0; i < steps; ++i) v = h_inverse(lat, rng.uniform(), v);
      const auto obs = make_spec(draws.model.obs_family, tau_obs[r]);
      out.u[r] = h_inverse(obs, rng.uniform(), v);
    }
  });
  out.fill_eps();
  return out;
}

/// Simulated path of the copula state space model.
struct SimulatedSeries {
  std::vector<double> u;
  std::vector<double> v;

  std::vector<double> z() const {
    std::vector<double> out(u.size());
    for (std::size_t t = 0; t < u.size(); ++t) out[t] = normal::quantile(u[t]);
    return out;
  }
};

/// v_1 ~ U(0,1), v_t | v_{t-1} from the state copula, u_t | v_t from the observation copula.
inline SimulatedSeries simulate(const ModelConfig& model, double tau_lat, int length, std::uint64_t seed) {
  model.validate();
  if (length < 1) throw PredictError("simulation length must be positive");
  if (!(tau_lat >= 0.0 && tau_lat < 1.0)) throw PredictError("tau_lat must lie in [0, 1)");
  const auto lat = make_spec(model.lat_family, tau_lat);
  const auto obs = make_spec(model.obs_family, tau_obs_from_tau_lat(tau_lat, model.c));
  Rng rng(seed);
  SimulatedSeries s;
  s.u.resize(static_cast<std::size_t>(length));
  s.v.resize(static_cast<std::size_t>(length));
  double v = rng.uniform();
  for (int t = 0; t < length; ++t) {
    if (t > 0) v = h_inverse(lat, rng.uniform(), v);
    s.v[t] = v;
    s.u[t] = h_inverse(obs, rng.uniform(), v);
  }
  return s;
}

/// y = f(x) + sigma * eps and pm = exp(y) for one covariate record.
inline PredictiveDraws to_response(PredictiveDraws pred, const MarginalModel& marginal, const HourlyRecord& x) {
  const double f = marginal.predict_mean(x);
  pred.y.resize(pred.size());
  pred.pm.resize(pred.size());
  for (std::size_t r = 0; r < pred.size(); ++r) {
    pred.y[r] = f + marginal.sigma_hat * pred.eps[r];
    pred.pm[r] = std::exp(pred.y[r]);
  }
  return pred;
}

/// Covariates of the last record observed at `hour`; the forecast proxy.
inline HourlyRecord last_same_hour(const std::vector<HourlyRecord>& history, int hour) {
  for (auto it = history.rbegin(); it != history.rend(); ++it)
    if (it->hour == hour) return *it;
  throw PredictError("no observed record at hour " + std::to_string(hour));
}

/// Records matching the series index (source row numbers), in series order.
inline std::vector<HourlyRecord> aligned_records(const std::vector<HourlyRecord>& records,
                                                 const std::vector<std::int64_t>& index) {
  std::unordered_map<std::int64_t, const HourlyRecord*> by_row;
  for (const auto& r : records) by_row.emplace(r.row, &r);
  std::vector<HourlyRecord> out;
  out.reserve(index.size());
  for (auto i : index) {
    const auto it = by_row.find(i);
    if (it == by_row.end()) throw PredictError("series row " + std::to_string(i) + " has no record");
    out.push_back(*it->second);
  }
  return out;
}

/**
 * Covariate edit for scenarios: a temperature shift and optionally one wind
 * direction forced on every record. Text form: "TEMP+1", "TEMP-2,CBWD=SE",
 * "baseline".
 */
struct CovariateEdit {
  double temp_shift = 0.0;
  std::optional<WindDirection> wind;

  HourlyRecord apply(HourlyRecord r) const {
    r.temp += temp_shift;
    if (wind) r.cbwd = *wind;
    return r;
  }

  bool is_identity() const noexcept { return temp_shift == 0.0 && !wind; }

  std::string label() const {
    if (is_identity()) return "baseline";
    std::string out;
    if (temp_shift != 0.0) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "TEMP%+g", temp_shift);
      out = buf;
    }
    if (wind) out += std::string(out.empty() ? "" : ",") + "CBWD=" + std::string(to_string(*wind));
    return out;
  }

  static CovariateEdit parse(std::string_view text) {
    CovariateEdit e;
    auto upper = [](std::string_view s) {
      std::string o(s);
      for (auto& ch : o) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      return o;
    };
    if (upper(text) == "BASELINE") return e;
    while (!text.empty()) {
      const auto comma = text.find(',');
      const std::string part = upper(text.substr(0, comma));
      text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
      if (part.rfind("TEMP", 0) == 0) {
        std::string_view num(part);
        num.remove_prefix(4);
        if (!num.empty() && num.front() == '+') num.remove_prefix(1);
        double shift = 0.0;
        const auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), shift);
        if (num.empty() || ec != std::errc{} || ptr != num.data() + num.size() || !std::isfinite(shift))
          throw PredictError("bad temperature edit '" + part + "'");
        e.temp_shift = shift;
      } else if (part.rfind("CBWD=", 0) == 0) {
        try {
          e.wind = parse_wind_direction(part.substr(5));
        } catch (const MarginalError&) {
          throw PredictError("unknown wind direction in edit '" + part + "'");
        }
      } else {
        throw PredictError("unknown covariate edit '" + part + "'");
      }
    }
    return e;
  }
};

/// Per-time summary of response-scale draws.
struct ScenarioPoint {
  std::int64_t row = 0;
  double mode = 0.0;
  double lo90 = 0.0;
  double hi90 = 0.0;
};

struct ScenarioResult {
  std::string label;
  std::vector<ScenarioPoint> points;
  double average_mode = 0.0;  // monthly average of the per-time modes
};

/**
 * pm_t^r = exp(f(x_t^new) + sigma * eps_t^r) with eps from in-sample draws;
 * summarized by the KDE mode and the 90% interval per time point.
 */
inline ScenarioResult scenario(const std::vector<PredictiveDraws>& in_sample_draws, const MarginalModel& marginal,
                               const std::vector<HourlyRecord>& observed, const CovariateEdit& edit) {
  if (in_sample_draws.size() != observed.size())
    throw PredictError("scenario: one covariate record per in-sample time point is required");
  ScenarioResult out;
  out.label = edit.label();
  double sum = 0.0;
  for (std::size_t t = 0; t < observed.size(); ++t) {
    const auto pred = to_response(in_sample_draws[t], marginal, edit.apply(observed[t]));
    const auto ci = credible_interval(pred.pm, 0.90);
    ScenarioPoint p{observed[t].row, kde_mode(pred.pm), ci.lo, ci.hi};
    sum += p.mode;
    out.points.push_back(p);
  }
  out.average_mode = observed.empty() ? 0.0 : sum / static_cast<double>(observed.size());
  return out;
}

}  // namespace cssm

#endif  // CSSM_PREDICT_HPP
