// Command-line driver for the monthly PM2.5 copula state space workflow.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cssm/cssm.hpp"

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kSchema = 2, kTooManyFailedFits = 3, kMissingArtifact = 4 };

void add_out(CLI::App* cmd, std::string& out) {
  cmd->add_option("--out", out, "Output directory")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Copula state space models for hourly PM2.5"};
  app.require_subcommand(1);

  cssm::RunManifest manifest;
  int month = 1;
  int horizon = 48;
  std::uint64_t seed = 1;
  std::vector<std::string> edits;
  int workers = cssm::default_workers();

  auto data_opts = [&](CLI::App* cmd) {
    cmd->add_option("--data", manifest.data, "Hourly CSV file")->required();
    cmd->add_option("--year", manifest.year, "Keep only this year")->capture_default_str();
    cmd->add_option("--prec-column", manifest.prec_column, "Source column used as PREC")->capture_default_str();
    add_out(cmd, manifest.out);
  };

  auto* ingest = app.add_subcommand("ingest", "Parse the dataset and write typed records");
  data_opts(ingest);

  auto* fit = app.add_subcommand("fit", "Marginal fits, copula model grid, WAIC and selection");
  data_opts(fit);
  fit->add_option("--months", manifest.months, "Calendar months")->delimiter(',')->capture_default_str();
  fit->add_option("--families", manifest.families, "Copula families")->delimiter(',')->capture_default_str();
  fit->add_option("--c-values", manifest.c_values, "Smoothing exponents c >= 1")->delimiter(',')->capture_default_str();
  fit->add_option("--chains", manifest.chains)->capture_default_str();
  fit->add_option("--iters", manifest.iters, "Iterations per chain including burn-in")->capture_default_str();
  fit->add_option("--burnin", manifest.burnin)->capture_default_str();
  fit->add_option("--seed", manifest.seed)->capture_default_str();
  fit->add_option("--knots", manifest.knots, "Interior spline knots of the marginal model")->capture_default_str();
  fit->add_option("--max-failed-fits", manifest.max_failed_fits, "Tolerated sampler failures before exit code 3")
      ->capture_default_str();

  auto* waic = app.add_subcommand("waic", "Aggregate the per-month WAIC tables");
  add_out(waic, manifest.out);
  auto* select = app.add_subcommand("select", "Select the smallest-WAIC model per month");
  add_out(select, manifest.out);

  auto* predict = app.add_subcommand("predict", "Steps-ahead forecasts after the end of a month");
  add_out(predict, manifest.out);
  predict->add_option("--month", month)->required();
  predict->add_option("--horizon", horizon, "Number of hourly steps ahead")->capture_default_str();
  predict->add_option("--seed", seed)->capture_default_str();

  auto* scen = app.add_subcommand("scenario", "Typical PM2.5 levels under edited covariates");
  add_out(scen, manifest.out);
  scen->add_option("--month", month)->required();
  scen->add_option("--edit", edits, "Edit such as TEMP-1 or TEMP+2,CBWD=SE (repeatable)");
  scen->add_option("--seed", seed)->capture_default_str();

  auto* contour = app.add_subcommand("contour", "Lag-1 contour grid of the standardized series");
  add_out(contour, manifest.out);
  contour->add_option("--month", month)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) {
      const auto s = cssm::run_ingest(manifest);
      std::printf("%zu records, %zu skipped lines, %d missing pm2.5, %zu months\n", s.result.records.size(),
                  s.result.skipped.size(), s.result.missing_response(), s.per_month.size());
      for (const auto& k : s.result.skipped) std::fprintf(stderr, "line %lld skipped: %s\n", k.line, k.reason.c_str());
    } else if (*fit) {
      const auto s = cssm::run_fit(manifest, workers);
      for (const auto& e : s.errors) std::fprintf(stderr, "%s\n", e.c_str());
      for (const auto& sel : s.selection)
        std::printf("month %2d: %s\n", sel.month,
                    sel.best ? (sel.best->model.label() + "  WAIC " + cssm::format_double(sel.best->waic)).c_str()
                             : "no model");
      if (s.failed_fits > manifest.max_failed_fits) {
        std::fprintf(stderr, "%d sampler failures exceed --max-failed-fits=%d\n", s.failed_fits,
                     manifest.max_failed_fits);
        return kTooManyFailedFits;
      }
    } else if (*waic) {
      for (const auto& [m, fits] : cssm::run_waic(manifest.out))
        for (const auto& f : fits)
          std::printf("%2d %-14s %s\n", m, f.model.label().c_str(), cssm::format_double(f.waic).c_str());
    } else if (*select) {
      for (const auto& s : cssm::run_select(manifest.out))
        std::printf("month %2d: %s\n", s.month, s.best ? s.best->model.label().c_str() : "no model");
    } else if (*predict) {
      for (const auto& r : cssm::run_predict(manifest.out, month, horizon, seed, workers))
        std::printf("%3d  hour %2d  mode %8.2f  90%% [%8.2f, %8.2f]\n", r.horizon, r.hour, r.mode, r.lo90, r.hi90);
    } else if (*scen) {
      std::vector<cssm::CovariateEdit> parsed{cssm::CovariateEdit{}};
      for (const auto& e : edits) parsed.push_back(cssm::CovariateEdit::parse(e));
      for (const auto& r : cssm::run_scenario(manifest.out, month, parsed, seed, workers))
        std::printf("%-20s average %8.2f\n", r.label.c_str(), r.average_mode);
    } else if (*contour) {
      const auto g = cssm::run_contour(manifest.out, month);
      std::printf("grid %zux%zu, integral %.4f\n", g.axis.size(), g.axis.size(), g.integral());
    }
  } catch (const cssm::SchemaError& e) {
    std::fprintf(stderr, "schema error: %s\n", e.what());
    return kSchema;
  } catch (const cssm::ArtifactError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kMissingArtifact;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kOk;
}
