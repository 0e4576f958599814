#ifndef CSSM_IO_HPP
#define CSSM_IO_HPP

// Dataset ingestion and persistence: typed hourly records, marginal models
// as JSON, posterior draws and tables as CSV. Doubles are written with 17
// significant digits so that files round-trip bit-exactly.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "cssm/marginal.hpp"
#include "cssm/model.hpp"
#include "cssm/sampler.hpp"

namespace cssm {

/// Input file does not have the expected columns.
class SchemaError : public std::runtime_error {
 public:
  SchemaError(const std::string& what, std::vector<std::string> missing)
      : std::runtime_error(what), missing_(std::move(missing)) {}
  const std::vector<std::string>& missing() const noexcept { return missing_; }

 private:
  std::vector<std::string> missing_;
};

/// A file the command needs does not exist or cannot be read.
class ArtifactError : public std::runtime_error {
 public:
  explicit ArtifactError(const std::filesystem::path& path)
      : std::runtime_error("missing artifact: " + path.string()), path_(path) {}
  ArtifactError(const std::filesystem::path& path, const std::string& detail)
      : std::runtime_error("unreadable artifact: " + path.string() + ": " + detail), path_(path) {}
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
};

/// Shortest text that parses back to the same double.
inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline double parse_double(std::string_view s) {
  std::string tmp(s);
  char* end = nullptr;
  const double v = std::strtod(tmp.c_str(), &end);
  if (tmp.empty() || end != tmp.c_str() + tmp.size()) throw std::invalid_argument("not a number: '" + tmp + "'");
  return v;
}

inline long long parse_int(std::string_view s) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size())
    throw std::invalid_argument("not an integer: '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    std::string field(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    const auto b = field.find_first_not_of(" \t\"");
    const auto e = field.find_last_not_of(" \t\"");
    out.push_back(b == std::string::npos ? std::string{} : field.substr(b, e - b + 1));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::string lower(std::string_view s) {
  std::string o(s);
  for (auto& ch : o) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return o;
}

/// ISO weekday, 1 = Monday .. 7 = Sunday; throws on an invalid date.
inline int iso_weekday(int year, int month, int day) {
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{year}, std::chrono::month{static_cast<unsigned>(month)},
                           std::chrono::day{static_cast<unsigned>(day)}};
  if (!ymd.ok()) throw std::invalid_argument("invalid calendar date");
  return static_cast<int>(weekday{sys_days{ymd}}.iso_encoding());
}

struct IngestOptions {
  std::optional<int> year = 2014;    // keep only this year; nullopt keeps all
  std::string prec_column = "Ir";    // source column mapped to PREC
};

struct SkippedLine {
  long long line = 0;
  std::string reason;
};

struct IngestResult {
  std::vector<HourlyRecord> records;
  std::vector<SkippedLine> skipped;
  long long filtered_out = 0;  // well-formed rows outside the year filter

  int missing_response() const {
    return static_cast<int>(std::count_if(records.begin(), records.end(), [](const auto& r) { return !r.pm25; }));
  }
};

/// Parses the hourly air-quality CSV. Header names match case-insensitively.
inline IngestResult ingest(std::istream& in, const IngestOptions& options = {}) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("empty input: no header line", {});
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col.emplace(lower(header[i]), i);
  const std::vector<std::string> required{"No",   "year", "month", "day", "hour", "pm2.5",
                                          "DEWP", "TEMP", "PRES",  "cbwd", "Iws", options.prec_column};
  std::vector<std::string> missing;
  for (const auto& name : required)
    if (!col.contains(lower(name))) missing.push_back(name);
  if (!missing.empty()) {
    std::string msg = "input is missing required columns:";
    for (const auto& m : missing) msg += " " + m;
    throw SchemaError(msg, missing);
  }
  auto index = [&](const std::string& name) { return col.at(lower(name)); };
  const std::size_t c_no = index("No"), c_year = index("year"), c_month = index("month"), c_day = index("day"),
                    c_hour = index("hour"), c_pm = index("pm2.5"), c_dewp = index("DEWP"), c_temp = index("TEMP"),
                    c_pres = index("PRES"), c_cbwd = index("cbwd"), c_iws = index("Iws"),
                    c_prec = index(options.prec_column);

  IngestResult out;
  long long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    try {
      if (f.size() < header.size()) throw std::invalid_argument("expected " + std::to_string(header.size()) +
                                                                " fields, found " + std::to_string(f.size()));
      HourlyRecord r;
      r.row = parse_int(f[c_no]);
      r.year = static_cast<int>(parse_int(f[c_year]));
      r.month = static_cast<int>(parse_int(f[c_month]));
      r.day = static_cast<int>(parse_int(f[c_day]));
      r.hour = static_cast<int>(parse_int(f[c_hour]));
      if (r.hour < 0 || r.hour > 23) throw std::invalid_argument("hour outside 0..23");
      r.weekday = iso_weekday(r.year, r.month, r.day);
      if (f[c_pm] != "NA" && !f[c_pm].empty()) {
        const double pm = parse_double(f[c_pm]);
        if (pm > 0.0) r.pm25 = pm;
      }
      r.dewp = parse_double(f[c_dewp]);
      r.temp = parse_double(f[c_temp]);
      r.pres = parse_double(f[c_pres]);
      try {
        r.cbwd = parse_wind_direction(f[c_cbwd]);
      } catch (const MarginalError& e) {
        throw std::invalid_argument(e.what());
      }
      r.iws = parse_double(f[c_iws]);
      r.prec = parse_double(f[c_prec]);
      if (options.year && r.year != *options.year) {
        ++out.filtered_out;
        continue;
      }
      out.records.push_back(r);
    } catch (const std::invalid_argument& e) {
      out.skipped.push_back({line_no, e.what()});
    }
  }
  return out;
}

inline IngestResult ingest_file(const std::filesystem::path& path, const IngestOptions& options = {}) {
  std::ifstream in(path);
  if (!in) throw ArtifactError(path);
  return ingest(in, options);
}

/// Records grouped by calendar month, each in file order.
inline std::map<int, std::vector<HourlyRecord>> split_by_month(const std::vector<HourlyRecord>& records) {
  std::map<int, std::vector<HourlyRecord>> out;
  for (const auto& r : records) out[r.month].push_back(r);
  return out;
}

// ---------------------------------------------------------------------------
// Typed record CSV

inline constexpr std::string_view kRecordHeader = "row,year,month,day,hour,weekday,pm25,dewp,temp,pres,cbwd,iws,prec";

inline void write_records(std::ostream& out, const std::vector<HourlyRecord>& records) {
  out << kRecordHeader << '\n';
  for (const auto& r : records) {
    out << r.row << ',' << r.year << ',' << r.month << ',' << r.day << ',' << r.hour << ',' << r.weekday << ','
        << (r.pm25 ? format_double(*r.pm25) : "NA") << ',' << format_double(r.dewp) << ','
        << format_double(r.temp) << ',' << format_double(r.pres) << ',' << to_string(r.cbwd) << ','
        << format_double(r.iws) << ',' << format_double(r.prec) << '\n';
  }
}

inline std::vector<HourlyRecord> read_records(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) != split_csv_line(kRecordHeader))
    throw std::runtime_error("records file has an unexpected header");
  std::vector<HourlyRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 13) throw std::runtime_error("records file: bad line");
    HourlyRecord r;
    r.row = parse_int(f[0]);
    r.year = static_cast<int>(parse_int(f[1]));
    r.month = static_cast<int>(parse_int(f[2]));
    r.day = static_cast<int>(parse_int(f[3]));
    r.hour = static_cast<int>(parse_int(f[4]));
    r.weekday = static_cast<int>(parse_int(f[5]));
    if (f[6] != "NA") r.pm25 = parse_double(f[6]);
    r.dewp = parse_double(f[7]);
    r.temp = parse_double(f[8]);
    r.pres = parse_double(f[9]);
    r.cbwd = parse_wind_direction(f[10]);
    r.iws = parse_double(f[11]);
    r.prec = parse_double(f[12]);
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

using json = nlohmann::ordered_json;

inline json to_json(const SplineBasis& b) {
  return json{{"lo", b.lo}, {"hi", b.hi}, {"degree", b.degree}, {"interior", b.interior}};
}

inline SplineBasis spline_from_json(const json& j) {
  SplineBasis b;
  b.lo = j.at("lo").get<double>();
  b.hi = j.at("hi").get<double>();
  b.degree = j.at("degree").get<int>();
  b.interior = j.at("interior").get<std::vector<double>>();
  return b;
}

inline json to_json(const MarginalModel& m) {
  json groups = json::array();
  for (std::size_t k = 0; k < m.groups.size(); ++k) {
    const auto& g = m.groups[k];
    groups.push_back({{"name", g.name},
                      {"first", g.first},
                      {"size", g.size},
                      {"cyclic", g.cyclic},
                      {"lambda", m.lambdas[k]},
                      {"edf", k < m.group_edf.size() ? m.group_edf[k] : 0.0}});
  }
  return json{{"month", m.month},
              {"response", "log pm2.5"},
              {"uncertainty", "marginal estimation uncertainty is not propagated to predictions"},
              {"design",
               {{"dewp", to_json(m.design.dewp)},
                {"temp", to_json(m.design.temp)},
                {"pres", to_json(m.design.pres)},
                {"iws", to_json(m.design.iws)},
                {"prec", to_json(m.design.prec)},
                {"hour_basis", m.design.hour.n},
                {"hour_period", m.design.hour.period}}},
              {"groups", groups},
              {"kappa", m.kappa},
              {"ridge", m.ridge},
              {"sigma_hat", m.sigma_hat},
              {"edf", m.edf},
              {"gcv", m.gcv},
              {"rss", m.rss},
              {"n_obs", m.n_obs},
              {"coef", std::vector<double>(m.coef.data(), m.coef.data() + m.coef.size())}};
}

inline MarginalModel marginal_from_json(const json& j) {
  MarginalModel m;
  m.month = j.at("month").get<int>();
  const auto& d = j.at("design");
  m.design.dewp = spline_from_json(d.at("dewp"));
  m.design.temp = spline_from_json(d.at("temp"));
  m.design.pres = spline_from_json(d.at("pres"));
  m.design.iws = spline_from_json(d.at("iws"));
  m.design.prec = spline_from_json(d.at("prec"));
  m.design.hour.n = d.at("hour_basis").get<int>();
  m.design.hour.period = d.at("hour_period").get<double>();
  for (const auto& g : j.at("groups")) {
    m.groups.push_back({g.at("name").get<std::string>(), g.at("first").get<int>(), g.at("size").get<int>(),
                        g.at("cyclic").get<bool>()});
    m.lambdas.push_back(g.at("lambda").get<double>());
    m.group_edf.push_back(g.at("edf").get<double>());
  }
  m.kappa = j.at("kappa").get<double>();
  m.ridge = j.at("ridge").get<double>();
  m.sigma_hat = j.at("sigma_hat").get<double>();
  m.edf = j.at("edf").get<double>();
  m.gcv = j.at("gcv").get<double>();
  m.rss = j.at("rss").get<double>();
  m.n_obs = j.at("n_obs").get<int>();
  const auto coef = j.at("coef").get<std::vector<double>>();
  m.coef = Eigen::Map<const Eigen::VectorXd>(coef.data(), static_cast<Eigen::Index>(coef.size()));
  if (m.coef.size() != m.design.n_cols()) throw std::runtime_error("marginal model: coefficient count mismatch");
  return m;
}

inline json to_json(const ModelConfig& m) {
  return json{{"label", m.label()}, {"obs_family", m.obs_family.name()}, {"lat_family", m.lat_family.name()},
              {"c", m.c}};
}

inline ModelConfig model_from_json(const json& j) {
  ModelConfig m{CopulaFamily::parse(j.at("obs_family").get<std::string>()),
                CopulaFamily::parse(j.at("lat_family").get<std::string>()), j.at("c").get<double>()};
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Files

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline json read_json(const std::filesystem::path& path) {
  const auto text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ArtifactError(path, e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

/// Draws of one model: chain, iteration, tau_lat, then the latent states v_1..v_T.
inline void write_draws(std::ostream& out, const PosteriorDraws& draws) {
  out << "chain,draw,tau_lat";
  for (Eigen::Index t = 1; t <= draws.n_obs(); ++t) out << ",v" << t;
  out << '\n';
  for (std::size_t k = 0; k < draws.chains.size(); ++k) {
    const auto& c = draws.chains[k];
    for (int i = 0; i < c.size(); ++i) {
      out << k << ',' << i << ',' << format_double(c.tau_lat[i]);
      for (Eigen::Index t = 0; t < c.latent.cols(); ++t) out << ',' << format_double(c.latent(i, t));
      out << '\n';
    }
  }
}

/// Inverse of write_draws. tau_obs is recomputed; log-likelihoods are not stored.
inline PosteriorDraws read_draws(std::istream& in, const ModelConfig& model) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("draws file is empty");
  const auto header = split_csv_line(line);
  if (header.size() < 4 || header[0] != "chain" || header[1] != "draw" || header[2] != "tau_lat")
    throw std::runtime_error("draws file has an unexpected header");
  const std::size_t n_obs = header.size() - 3;
  PosteriorDraws out;
  out.model = model;
  std::vector<std::vector<std::vector<double>>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) throw std::runtime_error("draws file: bad line");
    const auto k = static_cast<std::size_t>(parse_int(f[0]));
    if (k > rows.size()) throw std::runtime_error("draws file: chains out of order");
    if (k == rows.size()) {
      rows.emplace_back();
      out.chains.emplace_back();
    }
    auto& c = out.chains[k];
    const double tau = parse_double(f[2]);
    c.tau_lat.push_back(tau);
    c.tau_obs.push_back(tau_obs_from_tau_lat(tau, model.c));
    std::vector<double> v(n_obs);
    for (std::size_t t = 0; t < n_obs; ++t) v[t] = parse_double(f[3 + t]);
    rows[k].push_back(std::move(v));
  }
  for (std::size_t k = 0; k < rows.size(); ++k) {
    auto& c = out.chains[k];
    c.latent.resize(static_cast<Eigen::Index>(rows[k].size()), static_cast<Eigen::Index>(n_obs));
    for (std::size_t i = 0; i < rows[k].size(); ++i)
      for (std::size_t t = 0; t < n_obs; ++t) c.latent(i, t) = rows[k][i][t];
    c.loglik = Eigen::MatrixXd::Zero(c.latent.rows(), c.latent.cols());
  }
  return out;
}

}  // namespace cssm

#endif  // CSSM_IO_HPP
