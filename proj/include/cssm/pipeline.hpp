#ifndef CSSM_PIPELINE_HPP
#define CSSM_PIPELINE_HPP

// End-to-end workflow over monthly windows: marginal fit, copula model grid,
// WAIC selection, prediction, scenarios and contour grids. Every output is a
// deterministic function of the manifest; the worker count only changes speed.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cssm/inference.hpp"
#include "cssm/io.hpp"
#include "cssm/marginal.hpp"
#include "cssm/model.hpp"
#include "cssm/predict.hpp"
#include "cssm/sampler.hpp"

namespace cssm {

namespace fs = std::filesystem;

/// Everything a fit run depends on.
struct RunManifest {
  std::string data;
  int year = 2014;
  std::string prec_column = "Ir";
  std::vector<int> months{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
  std::vector<std::string> families{"gaussian", "t3", "t6", "gumbel", "clayton", "frank", "indep"};
  std::vector<double> c_values{1.0, 3.0, 6.0, 10.0};
  int chains = 2;
  int iters = 2000;
  int burnin = 500;
  std::uint64_t seed = 1;
  std::string out = "out";
  int max_failed_fits = 0;
  int knots = 8;

  /// Families x c values, then the independence model (always present, once).
  std::vector<ModelConfig> grid() const {
    std::vector<ModelConfig> g;
    for (const auto& name : families) {
      const auto fam = CopulaFamily::parse(name);
      if (fam.kind() == FamilyKind::Independence) continue;
      for (double c : c_values) g.push_back(ModelConfig::copula(fam, c));
    }
    g.push_back(ModelConfig::independence());
    return g;
  }

  SamplerConfig sampler() const {
    SamplerConfig s;
    s.n_chains = chains;
    s.n_iter = iters;
    s.n_burnin = burnin;
    s.seed = seed;
    return s;
  }

  void validate() const {
    if (families.empty()) throw std::invalid_argument("model grid is empty: no families");
    for (double c : c_values)
      if (!(c >= 1.0)) throw std::invalid_argument("c values must be >= 1");
    for (int m : months)
      if (m < 1 || m > 12) throw std::invalid_argument("months must lie in 1..12");
    if (months.empty()) throw std::invalid_argument("no months selected");
    if (chains < 1 || iters <= burnin || burnin < 0) throw std::invalid_argument("bad sampler settings");
    if (max_failed_fits < 0) throw std::invalid_argument("max failed fits must be >= 0");
  }

  json to_json() const {
    return json{{"data", data},        {"year", year},     {"prec_column", prec_column}, {"months", months},
                {"families", families}, {"c_values", c_values}, {"chains", chains},     {"iters", iters},
                {"burnin", burnin},    {"seed", seed},     {"out", out},                 {"max_failed_fits", max_failed_fits},
                {"knots", knots}};
  }

  static RunManifest from_json(const json& j) {
    RunManifest m;
    m.data = j.at("data").get<std::string>();
    m.year = j.at("year").get<int>();
    m.prec_column = j.at("prec_column").get<std::string>();
    m.months = j.at("months").get<std::vector<int>>();
    m.families = j.at("families").get<std::vector<std::string>>();
    m.c_values = j.at("c_values").get<std::vector<double>>();
    m.chains = j.at("chains").get<int>();
    m.iters = j.at("iters").get<int>();
    m.burnin = j.at("burnin").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.out = j.at("out").get<std::string>();
    m.max_failed_fits = j.at("max_failed_fits").get<int>();
    m.knots = j.at("knots").get<int>();
    return m;
  }
};

/// Worker count from CSSM_WORKERS, else the hardware concurrency.
inline int default_workers() {
  if (const char* env = std::getenv("CSSM_WORKERS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs job(i) for i in [0, n) on a bounded pool. Exceptions propagate after all jobs finish.
inline void parallel_for(int n, int workers, const std::function<void(int)>& job) {
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  auto worker = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        job(i);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (int w = 1; w < std::clamp(workers, 1, std::max(1, n)); ++w) pool.emplace_back(worker);
    worker();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline fs::path month_dir(const fs::path& out, int month) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "month_%02d", month);
  return out / buf;
}

/// Posterior summary of one grid cell.
struct FitRecord {
  ModelConfig model;
  std::string status = "ok";  // ok, flagged (divergence rate above 10%), failed
  std::string message;
  double waic = std::numeric_limits<double>::quiet_NaN();
  double tau_mean = std::numeric_limits<double>::quiet_NaN();
  double tau_mode = std::numeric_limits<double>::quiet_NaN();
  Interval tau_ci{std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  double rhat = std::numeric_limits<double>::quiet_NaN();
  double ess = std::numeric_limits<double>::quiet_NaN();
  double divergence_rate = 0.0;

  bool failed() const noexcept { return status == "failed"; }
};

inline FitRecord summarize_fit(const PosteriorDraws& draws) {
  FitRecord f;
  f.model = draws.model;
  f.waic = waic(draws.loglik_all());
  const auto tau = draws.tau_lat_all();
  f.tau_mean = std::accumulate(tau.begin(), tau.end(), 0.0) / static_cast<double>(tau.size());
  f.tau_mode = kde_mode(tau);
  f.tau_ci = credible_interval(tau, 0.90);
  if (draws.chains.size() >= 2) {
    std::vector<std::vector<double>> per_chain;
    for (const auto& c : draws.chains) per_chain.push_back(c.tau_lat);
    const auto conv = rhat_ess(per_chain);
    f.rhat = conv.rhat;
    f.ess = conv.ess;
  }
  int divergent = 0, total = 0;
  for (const auto& c : draws.chains) {
    for (const auto& s : c.stats) divergent += s.divergent;
    total += static_cast<int>(c.stats.size());
  }
  f.divergence_rate = total ? static_cast<double>(divergent) / total : 0.0;
  if (f.divergence_rate > 0.1) f.status = "flagged";
  return f;
}

inline constexpr std::string_view kFitsHeader =
    "model,obs_family,lat_family,c,status,waic,tau_lat_mean,tau_lat_mode,tau_lat_lo90,tau_lat_hi90,rhat,ess,"
    "divergence_rate,message";

inline std::string fits_csv(const std::vector<FitRecord>& fits) {
  std::ostringstream out;
  out << kFitsHeader << '\n';
  for (const auto& f : fits) {
    std::string msg = f.message;
    std::replace(msg.begin(), msg.end(), ',', ';');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    out << f.model.label() << ',' << f.model.obs_family.name() << ',' << f.model.lat_family.name() << ','
        << format_double(f.model.c) << ',' << f.status << ',' << format_double(f.waic) << ','
        << format_double(f.tau_mean) << ',' << format_double(f.tau_mode) << ',' << format_double(f.tau_ci.lo) << ','
        << format_double(f.tau_ci.hi) << ',' << format_double(f.rhat) << ',' << format_double(f.ess) << ','
        << format_double(f.divergence_rate) << ',' << msg << '\n';
  }
  return out.str();
}

inline std::vector<FitRecord> read_fits(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  std::getline(in, line);
  if (split_csv_line(line) != split_csv_line(kFitsHeader)) throw ArtifactError(path, "unexpected header");
  std::vector<FitRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 14) throw ArtifactError(path, "bad line");
    FitRecord r;
    r.model = ModelConfig{CopulaFamily::parse(f[1]), CopulaFamily::parse(f[2]), parse_double(f[3])};
    r.status = f[4];
    r.waic = parse_double(f[5]);
    r.tau_mean = parse_double(f[6]);
    r.tau_mode = parse_double(f[7]);
    r.tau_ci = {parse_double(f[8]), parse_double(f[9])};
    r.rhat = parse_double(f[10]);
    r.ess = parse_double(f[11]);
    r.divergence_rate = parse_double(f[12]);
    r.message = f[13];
    out.push_back(r);
  }
  return out;
}

inline std::string waic_csv(const std::vector<FitRecord>& fits) {
  std::ostringstream out;
  out << "model,family,c,status,waic\n";
  for (const auto& f : fits)
    out << f.model.label() << ',' << f.model.obs_family.name() << ',' << format_double(f.model.c) << ','
        << f.status << ',' << format_double(f.waic) << '\n';
  return out.str();
}

inline std::optional<FitRecord> best_fit(const std::vector<FitRecord>& fits) {
  std::vector<WaicEntry> table;
  for (const auto& f : fits) table.push_back({f.model, f.waic, f.failed()});
  const auto best = select_best(table);
  if (!best) return std::nullopt;
  for (const auto& f : fits)
    if (f.model.label() == best->model.label()) return f;
  return std::nullopt;
}

struct MonthSelection {
  int month = 0;
  std::optional<FitRecord> best;
};

inline json selection_json(const std::vector<MonthSelection>& rows) {
  json arr = json::array();
  for (const auto& s : rows) {
    json j{{"month", s.month}};
    if (s.best) {
      j["model"] = to_json(s.best->model);
      j["waic"] = s.best->waic;
      j["tau_lat_mean"] = s.best->tau_mean;
      j["tau_lat_lo90"] = s.best->tau_ci.lo;
      j["tau_lat_hi90"] = s.best->tau_ci.hi;
    } else {
      j["model"] = nullptr;
    }
    arr.push_back(j);
  }
  return json{{"selection", arr}};
}

inline std::string selection_csv(const std::vector<MonthSelection>& rows) {
  std::ostringstream out;
  out << "month,model,family,c,waic,tau_lat_mean,tau_lat_lo90,tau_lat_hi90\n";
  for (const auto& s : rows) {
    out << s.month << ',';
    if (s.best)
      out << s.best->model.label() << ',' << s.best->model.obs_family.name() << ','
          << format_double(s.best->model.c) << ',' << format_double(s.best->waic) << ','
          << format_double(s.best->tau_mean) << ',' << format_double(s.best->tau_ci.lo) << ','
          << format_double(s.best->tau_ci.hi);
    else
      out << "none,,,,,,";
    out << '\n';
  }
  return out.str();
}

struct IngestSummary {
  IngestResult result;
  std::map<int, int> per_month;
};

inline json ingest_json(const IngestSummary& s, const RunManifest& m) {
  json months = json::object();
  for (const auto& [month, n] : s.per_month) months[std::to_string(month)] = n;
  json skipped = json::array();
  for (const auto& k : s.result.skipped) skipped.push_back({{"line", k.line}, {"reason", k.reason}});
  return json{{"data", m.data},
              {"year", m.year},
              {"prec_column", m.prec_column},
              {"records", s.result.records.size()},
              {"missing_pm25", s.result.missing_response()},
              {"filtered_out", s.result.filtered_out},
              {"skipped_count", s.result.skipped.size()},
              {"skipped", skipped},
              {"per_month", months}};
}

/// Reads the data file and writes records.csv and ingest.json under the output directory.
inline IngestSummary run_ingest(const RunManifest& manifest) {
  IngestSummary s;
  s.result = ingest_file(manifest.data, {manifest.year, manifest.prec_column});
  for (const auto& [month, rows] : split_by_month(s.result.records)) s.per_month[month] = static_cast<int>(rows.size());
  const fs::path out = manifest.out;
  std::ostringstream rec;
  write_records(rec, s.result.records);
  write_text(out / "records.csv", rec.str());
  write_json(out / "ingest.json", ingest_json(s, manifest));
  return s;
}

inline std::vector<HourlyRecord> load_records(const fs::path& out) {
  std::istringstream in(read_text(out / "records.csv"));
  return read_records(in);
}

struct FitRunSummary {
  int failed_fits = 0;
  std::vector<MonthSelection> selection;
  std::vector<std::string> errors;  // months that could not be processed
};

inline std::string pseudo_csv(const Standardized& st) {
  std::ostringstream out;
  out << "row,u_hat,z_hat,fitted\n";
  for (std::size_t t = 0; t < st.series.size(); ++t)
    out << st.series.index[t] << ',' << format_double(st.series.u_hat[t]) << ',' << format_double(st.series.z_hat[t])
        << ',' << format_double(st.fitted[t]) << '\n';
  return out.str();
}

inline PseudoSeries read_pseudo(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  std::getline(in, line);
  if (split_csv_line(line) != std::vector<std::string>{"row", "u_hat", "z_hat", "fitted"})
    throw ArtifactError(path, "unexpected header");
  PseudoSeries s;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 4) throw ArtifactError(path, "bad line");
    s.index.push_back(parse_int(f[0]));
    s.u_hat.push_back(parse_double(f[1]));
    s.z_hat.push_back(parse_double(f[2]));
  }
  s.validate();
  return s;
}

/**
 * Full fit: ingest, per-month marginal, copula grid, WAIC tables, selection.
 * Draws are written for the selected model of each month only.
 */
inline FitRunSummary run_fit(const RunManifest& manifest, int workers = default_workers()) {
  manifest.validate();
  const fs::path out = manifest.out;
  fs::create_directories(out);
  write_json(out / "manifest.json", manifest.to_json());
  const auto ingested = run_ingest(manifest);
  const auto by_month = split_by_month(ingested.result.records);
  const auto grid = manifest.grid();
  const auto sampler = manifest.sampler();

  struct MonthState {
    int month = 0;
    std::optional<Standardized> pseudo;
    std::string error;
    std::vector<FitRecord> fits;
    std::optional<PosteriorDraws> best_draws;
    std::mutex lock;
  };
  std::vector<MonthState> months(manifest.months.size());
  for (std::size_t i = 0; i < months.size(); ++i) months[i].month = manifest.months[i];

  parallel_for(static_cast<int>(months.size()), workers, [&](int i) {
    auto& st = months[static_cast<std::size_t>(i)];
    const auto it = by_month.find(st.month);
    try {
      if (it == by_month.end()) throw std::runtime_error("no records for this month");
      MarginalOptions opt;
      opt.n_interior_knots = manifest.knots;
      const auto model = fit_marginal(it->second, st.month, opt);
      st.pseudo = standardize(model, it->second);
      const auto dir = month_dir(out, st.month);
      write_json(dir / "marginal.json", to_json(model));
      write_text(dir / "pseudo.csv", pseudo_csv(*st.pseudo));
    } catch (const std::exception& e) {
      st.error = e.what();
    }
    st.fits.resize(grid.size());
  });

  const int n_jobs = static_cast<int>(months.size() * grid.size());
  parallel_for(n_jobs, workers, [&](int job) {
    auto& st = months[static_cast<std::size_t>(job) / grid.size()];
    const std::size_t g = static_cast<std::size_t>(job) % grid.size();
    FitRecord rec;
    rec.model = grid[g];
    if (!st.pseudo) {
      rec.status = "failed";
      rec.message = "marginal stage failed: " + st.error;
      st.fits[g] = rec;
      return;
    }
    auto cfg = sampler;
    cfg.seed = substream_seed(manifest.seed, {static_cast<std::uint64_t>(st.month), g});
    try {
      auto draws = run(st.pseudo->series, grid[g], cfg);
      rec = summarize_fit(draws);
      std::lock_guard guard(st.lock);
      const auto& cur = st.best_draws;
      std::vector<WaicEntry> pair{{rec.model, rec.waic, false}};
      if (cur) {
        const auto cur_rec = std::find_if(st.fits.begin(), st.fits.end(),
                                          [&](const auto& f) { return f.model.label() == cur->model.label(); });
        pair.push_back({cur->model, cur_rec->waic, false});
      }
      const auto winner = select_best(pair);
      if (winner && winner->model.label() == rec.model.label()) st.best_draws = std::move(draws);
      st.fits[g] = rec;
    } catch (const std::exception& e) {
      rec.status = "failed";
      rec.message = e.what();
      std::lock_guard guard(st.lock);
      st.fits[g] = rec;
    }
  });

  FitRunSummary summary;
  std::ostringstream all_waic;
  all_waic << "month,model,family,c,status,waic\n";
  for (auto& st : months) {
    const auto dir = month_dir(out, st.month);
    if (!st.error.empty()) summary.errors.push_back("month " + std::to_string(st.month) + ": " + st.error);
    for (const auto& f : st.fits) {
      summary.failed_fits += f.failed();
      all_waic << st.month << ',' << f.model.label() << ',' << f.model.obs_family.name() << ','
               << format_double(f.model.c) << ',' << f.status << ',' << format_double(f.waic) << '\n';
    }
    write_text(dir / "fits.csv", fits_csv(st.fits));
    write_text(dir / "waic.csv", waic_csv(st.fits));
    MonthSelection sel{st.month, best_fit(st.fits)};
    if (sel.best && st.best_draws) {
      std::ostringstream d;
      write_draws(d, *st.best_draws);
      write_text(dir / "draws.csv", d.str());
      write_json(dir / "selection.json", selection_json({sel}));
    }
    summary.selection.push_back(sel);
  }
  write_text(out / "waic.csv", all_waic.str());
  write_text(out / "selection.csv", selection_csv(summary.selection));
  write_json(out / "selection.json", selection_json(summary.selection));
  return summary;
}

/// Re-aggregates per-month WAIC tables into out/waic.csv; returns the per-month fits.
inline std::map<int, std::vector<FitRecord>> run_waic(const fs::path& out) {
  const auto manifest = RunManifest::from_json(read_json(out / "manifest.json"));
  std::map<int, std::vector<FitRecord>> fits;
  std::ostringstream all;
  all << "month,model,family,c,status,waic\n";
  for (int m : manifest.months) {
    fits[m] = read_fits(month_dir(out, m) / "fits.csv");
    for (const auto& f : fits[m])
      all << m << ',' << f.model.label() << ',' << f.model.obs_family.name() << ',' << format_double(f.model.c)
          << ',' << f.status << ',' << format_double(f.waic) << '\n';
  }
  write_text(out / "waic.csv", all.str());
  return fits;
}

/// Re-derives the selection report from the persisted fit tables.
inline std::vector<MonthSelection> run_select(const fs::path& out) {
  std::vector<MonthSelection> sel;
  for (const auto& [m, fits] : run_waic(out)) sel.push_back({m, best_fit(fits)});
  write_text(out / "selection.csv", selection_csv(sel));
  write_json(out / "selection.json", selection_json(sel));
  return sel;
}

/// Selected model, marginal, pseudo series, month records and draws for one month.
struct MonthArtifacts {
  int month = 0;
  ModelConfig model;
  MarginalModel marginal;
  PseudoSeries series;
  std::vector<HourlyRecord> records;   // all records of the month
  std::vector<HourlyRecord> aligned;   // records of the series entries
  PosteriorDraws draws;
};

inline MonthArtifacts load_month(const fs::path& out, int month) {
  const auto dir = month_dir(out, month);
  MonthArtifacts a;
  a.month = month;
  const auto sel = read_json(dir / "selection.json").at("selection").at(0);
  if (sel.at("model").is_null()) throw ArtifactError(dir / "selection.json", "no model was selected");
  a.model = model_from_json(sel.at("model"));
  a.marginal = marginal_from_json(read_json(dir / "marginal.json"));
  a.series = read_pseudo(dir / "pseudo.csv");
  for (const auto& r : load_records(out))
    if (r.month == month) a.records.push_back(r);
  a.aligned = aligned_records(a.records, a.series.index);
  std::istringstream in(read_text(dir / "draws.csv"));
  a.draws = read_draws(in, a.model);
  if (a.draws.n_obs() != static_cast<Eigen::Index>(a.series.size()))
    throw ArtifactError(dir / "draws.csv", "series length does not match pseudo.csv");
  return a;
}

struct ForecastRow {
  int horizon = 0;
  int hour = 0;
  double eps_var = 0.0;
  double mode = 0.0;
  double lo90 = 0.0;
  double hi90 = 0.0;
};

/**
 * i-steps-ahead forecasts for i = 1..horizon after the last observation of
 * the month, mapped to PM2.5 with last-same-hour covariate proxies.
 */
inline std::vector<ForecastRow> run_predict(const fs::path& out, int month, int horizon, std::uint64_t seed,
                                            int workers = 1) {
  if (horizon < 1) throw std::invalid_argument("horizon must be at least 1");
  const auto a = load_month(out, month);
  const int last_hour = a.aligned.back().hour;
  const auto dir = month_dir(out, month);
  std::ostringstream draws_csv, summary_csv;
  draws_csv << "horizon,draw,u,eps,y,pm\n";
  summary_csv << "horizon,hour,eps_var,mode,lo90,hi90\n";
  json summary = json::array();
  std::vector<ForecastRow> rows;
  for (int i = 1; i <= horizon; ++i) {
    auto pred = out_of_sample(a.draws, i, {.seed = seed, .workers = workers});
    const int hour = (last_hour + i) % 24;
    pred = to_response(std::move(pred), a.marginal, last_same_hour(a.records, hour));
    ForecastRow row{i, hour};
    double mean = 0.0;
    for (double e : pred.eps) mean += e;
    mean /= static_cast<double>(pred.size());
    for (double e : pred.eps) row.eps_var += (e - mean) * (e - mean);
    row.eps_var /= static_cast<double>(pred.size() - 1);
    row.mode = kde_mode(pred.pm);
    const auto ci = credible_interval(pred.pm, 0.90);
    row.lo90 = ci.lo;
    row.hi90 = ci.hi;
    for (std::size_t r = 0; r < pred.size(); ++r)
      draws_csv << i << ',' << r << ',' << format_double(pred.u[r]) << ',' << format_double(pred.eps[r]) << ','
                << format_double(pred.y[r]) << ',' << format_double(pred.pm[r]) << '\n';
    summary_csv << i << ',' << hour << ',' << format_double(row.eps_var) << ',' << format_double(row.mode) << ','
                << format_double(row.lo90) << ',' << format_double(row.hi90) << '\n';
    summary.push_back({{"horizon", i}, {"hour", hour}, {"mode", row.mode}, {"lo90", row.lo90}, {"hi90", row.hi90}});
    rows.push_back(row);
  }
  write_text(dir / "predict_draws.csv", draws_csv.str());
  write_text(dir / "predict_summary.csv", summary_csv.str());
  write_json(dir / "predict_summary.json",
             json{{"month", month},
                  {"model", a.model.label()},
                  {"covariates", "last observed record with the same hour"},
                  {"uncertainty", "marginal estimation uncertainty is not propagated"},
                  {"summary", summary}});
  return rows;
}

/// Scenario comparison over the in-sample period of one month.
inline std::vector<ScenarioResult> run_scenario(const fs::path& out, int month, const std::vector<CovariateEdit>& edits,
                                                std::uint64_t seed, int workers = 1) {
  const auto a = load_month(out, month);
  std::vector<PredictiveDraws> preds;
  for (std::size_t t = 1; t <= a.series.size(); ++t)
    preds.push_back(in_sample(a.draws, static_cast<int>(t), {.seed = seed, .workers = workers}));
  double observed = 0.0;
  for (const auto& r : a.aligned) observed += *r.pm25;
  observed /= static_cast<double>(a.aligned.size());

  std::vector<ScenarioResult> results;
  std::ostringstream csv;
  csv << "scenario,row,mode,lo90,hi90\n";
  json list = json::array();
  for (const auto& e : edits) {
    auto res = scenario(preds, a.marginal, a.aligned, e);
    for (const auto& p : res.points)
      csv << res.label << ',' << p.row << ',' << format_double(p.mode) << ',' << format_double(p.lo90) << ','
          << format_double(p.hi90) << '\n';
    list.push_back({{"scenario", res.label}, {"average_mode", res.average_mode}});
    results.push_back(std::move(res));
  }
  const auto dir = month_dir(out, month);
  write_text(dir / "scenario.csv", csv.str());
  write_json(dir / "scenario.json", json{{"month", month},
                                         {"model", a.model.label()},
                                         {"observed_average", observed},
                                         {"uncertainty", "marginal estimation uncertainty is not propagated"},
                                         {"scenarios", list}});
  return results;
}

/// Lag-1 contour grid of the month's standardized series.
inline ContourGrid run_contour(const fs::path& out, int month) {
  const auto dir = month_dir(out, month);
  const auto series = read_pseudo(dir / "pseudo.csv");
  const auto grid = lag1_contour(series.z_hat);
  std::ostringstream csv;
  csv << "z1,z2,density\n";
  for (std::size_t i = 0; i < grid.axis.size(); ++i)
    for (std::size_t j = 0; j < grid.axis.size(); ++j)
      csv << format_double(grid.axis[i]) << ',' << format_double(grid.axis[j]) << ','
          << format_double(grid.density(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) << '\n';
  write_text(dir / "contour.csv", csv.str());
  return grid;
}

}  // namespace cssm

#endif  // CSSM_PIPELINE_HPP
