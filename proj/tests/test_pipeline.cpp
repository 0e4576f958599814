#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include "cssm/pipeline.hpp"
#include "simulation_support.hpp"

namespace {

namespace fs = std::filesystem;
using cssm::RunManifest;
using testing_support::kHeader;
using testing_support::synthetic_rows;
using testing_support::SyntheticSpec;

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("cssm_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_dataset(const fs::path& dir, const std::vector<SyntheticSpec>& parts, const std::string& extra = "") {
  int no = 0;
  std::string text = std::string(kHeader) + "\n";
  for (const auto& p : parts) text += synthetic_rows(p, no);
  text += extra;
  const auto path = dir / "data.csv";
  cssm::write_text(path, text);
  return path;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = cssm::read_text(e.path());
  return files;
}

RunManifest small_manifest(const fs::path& data, const fs::path& out) {
  RunManifest m;
  m.data = data.string();
  m.out = out.string();
  m.months = {1};
  m.families = {"gaussian", "gumbel"};
  m.c_values = {1.0, 3.0};
  m.chains = 2;
  m.iters = 300;
  m.burnin = 150;
  m.seed = 11;
  m.knots = 5;
  return m;
}

TEST(Ingest, ThreeRowFile) {
  std::istringstream in(std::string(kHeader) +
                        "\n1,2014,1,1,0,129,-16,-4,1020,SE,1.79,0,0\n"
                        "2,2014,1,1,1,NA,-15,-4,1020,cv,2.68,0,1\n"
                        "3,2014,1,2,2,159,-11,-5,1021,NW,3.57,0,0\n");
  const auto r = cssm::ingest(in);
  ASSERT_EQ(r.records.size(), 3u);
  EXPECT_TRUE(r.skipped.empty());
  EXPECT_FALSE(r.records[1].pm25);
  EXPECT_EQ(r.missing_response(), 1);
  EXPECT_EQ(r.records[1].cbwd, cssm::WindDirection::CV);
  EXPECT_EQ(r.records[1].prec, 1.0);
  EXPECT_EQ(r.records[0].weekday, 3);  // 2014-01-01 was a Wednesday
  EXPECT_EQ(r.records[2].weekday, 4);
  EXPECT_EQ(r.records[2].row, 3);
}

TEST(Ingest, HeaderIsCaseInsensitiveAndPrecColumnSelectable) {
  std::istringstream in(
      "no,YEAR,Month,day,hour,PM2.5,dewp,temp,pres,CBWD,iws,is,ir\n"
      "1,2014,1,1,0,129,-16,-4,1020,SE,1.79,2,0\n");
  const auto r = cssm::ingest(in, {2014, "Is"});
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.records[0].prec, 2.0);
}

TEST(Ingest, MissingColumnsAreListed) {
  std::istringstream in("No,year,month,day,hour,pm2.5,TEMP,PRES,cbwd,Iws,Is\n");
  try {
    cssm::ingest(in);
    FAIL() << "expected a schema error";
  } catch (const cssm::SchemaError& e) {
    EXPECT_EQ(e.missing(), (std::vector<std::string>{"DEWP", "Ir"}));
  }
}

TEST(Ingest, BadRowsAreSkippedWithLineNumbers) {
  std::istringstream in(std::string(kHeader) +
                        "\n1,2014,1,1,0,129,-16,-4,1020,SE,1.79,0,0\n"
                        "2,2014,1,1,1,12,-15,abc,1020,cv,2.68,0,1\n"
                        "3,2014,2,30,2,159,-11,-5,1021,NW,3.57,0,0\n"
                        "4,2014,1,1,3,159,-11,-5,1021,SW,3.57,0,0\n"
                        "5,2013,1,1,3,159,-11,-5,1021,NW,3.57,0,0\n");
  const auto r = cssm::ingest(in);
  EXPECT_EQ(r.records.size(), 1u);
  ASSERT_EQ(r.skipped.size(), 3u);
  EXPECT_EQ(r.skipped[0].line, 3);
  EXPECT_EQ(r.skipped[1].line, 4);
  EXPECT_EQ(r.skipped[2].line, 5);
  EXPECT_EQ(r.filtered_out, 1);
}

TEST(Ingest, FullYearGivesTwelveMonthlyWindows) {
  const auto dir = scratch("year");
  const auto path = write_dataset(dir, {{.year = 2013, .month = 12, .first_day = 25, .days = 7},
                                        {.year = 2014, .month = 1, .first_day = 1, .days = 365}});
  const auto r = cssm::ingest_file(path);
  const auto months = cssm::split_by_month(r.records);
  EXPECT_EQ(months.size(), 12u);
  std::size_t total = 0;
  for (const auto& [m, rows] : months) total += rows.size();
  EXPECT_EQ(total, 8760u);
  EXPECT_EQ(months.at(2).size(), 28u * 24u);
  EXPECT_EQ(r.filtered_out, 7 * 24);
  fs::remove_all(dir);
}

TEST(Pipeline, IndependenceOnlyGridHasZeroWaic) {
  const auto dir = scratch("indep");
  const auto data = write_dataset(dir, {{.days = 10, .seed = 3}, {.month = 2, .days = 10, .seed = 4}});
  auto m = small_manifest(data, dir / "out");
  m.families = {"indep"};
  m.months = {1, 2};
  const auto s = cssm::run_fit(m, 2);
  EXPECT_EQ(s.failed_fits, 0);
  const auto fits = cssm::run_waic(m.out);
  ASSERT_EQ(fits.size(), 2u);
  for (const auto& [month, rows] : fits) {
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].model.label(), "indep");
    EXPECT_EQ(rows[0].waic, 0.0);
  }
  fs::remove_all(dir);
}

class FittedRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(scratch("fit"));
    const auto data = write_dataset(*dir_, {{.days = 14, .seed = 5}});
    manifest_ = new RunManifest(small_manifest(data, *dir_ / "out"));
    summary_ = new cssm::FitRunSummary(cssm::run_fit(*manifest_, 4));
  }
  static void TearDownTestSuite() {
    fs::remove_all(*dir_);
    delete summary_;
    delete manifest_;
    delete dir_;
  }
  static fs::path* dir_;
  static RunManifest* manifest_;
  static cssm::FitRunSummary* summary_;
};
fs::path* FittedRun::dir_ = nullptr;
RunManifest* FittedRun::manifest_ = nullptr;
cssm::FitRunSummary* FittedRun::summary_ = nullptr;

TEST_F(FittedRun, WritesTablesAndSelectsADependentModel) {
  const fs::path out = manifest_->out;
  EXPECT_EQ(summary_->failed_fits, 0);
  for (const char* f : {"manifest.json", "ingest.json", "records.csv", "waic.csv", "selection.csv", "selection.json",
                        "month_01/marginal.json", "month_01/pseudo.csv", "month_01/fits.csv", "month_01/waic.csv",
                        "month_01/draws.csv", "month_01/selection.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const auto fits = cssm::read_fits(out / "month_01" / "fits.csv");
  ASSERT_EQ(fits.size(), 5u);
  EXPECT_EQ(fits.back().model.label(), "indep");
  EXPECT_EQ(fits.back().waic, 0.0);
  ASSERT_EQ(summary_->selection.size(), 1u);
  ASSERT_TRUE(summary_->selection[0].best);
  EXPECT_NE(summary_->selection[0].best->model.label(), "indep");
  EXPECT_LT(summary_->selection[0].best->waic, 0.0);
  const auto reselected = cssm::run_select(out);
  EXPECT_EQ(reselected[0].best->model.label(), summary_->selection[0].best->model.label());
}

TEST_F(FittedRun, PersistedModelsRoundTrip) {
  const fs::path out = manifest_->out;
  const auto a = cssm::load_month(out, 1);
  const auto records = cssm::load_records(out);
  cssm::MarginalOptions opt;
  opt.n_interior_knots = manifest_->knots;
  const auto refit = cssm::fit_marginal(a.records, 1, opt);
  for (const auto& r : a.records) EXPECT_EQ(a.marginal.predict_mean(r), refit.predict_mean(r));
  EXPECT_EQ(a.marginal.sigma_hat, refit.sigma_hat);
  const auto st = cssm::standardize(a.marginal, a.records);
  EXPECT_EQ(st.series.z_hat, a.series.z_hat);
  EXPECT_EQ(a.draws.n_draws(), 2 * 150);
  std::ostringstream again;
  cssm::write_draws(again, a.draws);
  EXPECT_EQ(again.str(), cssm::read_text(out / "month_01" / "draws.csv"));
}

TEST_F(FittedRun, PredictHorizons) {
  const fs::path out = manifest_->out;
  const auto one = cssm::run_predict(out, 1, 1, 7);
  ASSERT_EQ(one.size(), 1u);
  {
    std::istringstream in(cssm::read_text(out / "month_01" / "predict_draws.csv"));
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) ++lines;
    EXPECT_EQ(lines, 1 + 300);
  }
  const auto rows = cssm::run_predict(out, 1, 48, 7);
  ASSERT_EQ(rows.size(), 48u);
  int widening = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) widening += rows[i].eps_var >= rows[i - 1].eps_var;
  EXPECT_GT(widening, 47 / 2);
  EXPECT_GE(rows.back().eps_var, rows.front().eps_var);
  const auto first = cssm::read_text(out / "month_01" / "predict_draws.csv");
  cssm::run_predict(out, 1, 48, 7, 3);
  EXPECT_EQ(cssm::read_text(out / "month_01" / "predict_draws.csv"), first);
}

TEST_F(FittedRun, ScenarioWithZeroEditMatchesBaseline) {
  const auto res = cssm::run_scenario(manifest_->out, 1,
                                      {cssm::CovariateEdit{}, cssm::CovariateEdit::parse("TEMP+0"),
                                       cssm::CovariateEdit::parse("TEMP-4")},
                                      3);
  ASSERT_EQ(res.size(), 3u);
  ASSERT_EQ(res[0].points.size(), res[1].points.size());
  for (std::size_t t = 0; t < res[0].points.size(); ++t) {
    EXPECT_EQ(res[0].points[t].mode, res[1].points[t].mode);
    EXPECT_EQ(res[0].points[t].lo90, res[1].points[t].lo90);
  }
  EXPECT_EQ(res[0].average_mode, res[1].average_mode);
  EXPECT_TRUE(fs::exists(fs::path(manifest_->out) / "month_01" / "scenario.json"));
}

TEST_F(FittedRun, ContourGrid) {
  const auto g = cssm::run_contour(manifest_->out, 1);
  EXPECT_EQ(g.axis.size(), 101u);
  EXPECT_NEAR(g.integral(), 1.0, 0.05);
  std::istringstream in(cssm::read_text(fs::path(manifest_->out) / "month_01" / "contour.csv"));
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 1 + 101 * 101);
}

TEST(Pipeline, SameManifestGivesByteIdenticalOutputs) {
  const auto dir = scratch("determinism");
  const auto data = write_dataset(dir, {{.days = 8, .seed = 6}});
  auto m = small_manifest(data, dir / "out");
  m.families = {"gumbel", "clayton"};
  m.c_values = {1.0};
  m.iters = 200;
  m.burnin = 100;
  cssm::run_fit(m, 1);
  const auto first = snapshot(m.out);
  fs::remove_all(m.out);
  cssm::run_fit(m, 3);
  const auto second = snapshot(m.out);
  EXPECT_EQ(first.size(), second.size());
  for (const auto& [name, text] : first) EXPECT_TRUE(second.count(name) && second.at(name) == text) << name;
  fs::remove_all(dir);
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CSSM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("cli");
  // Schema error: the dewpoint column is absent.
  cssm::write_text(dir / "bad.csv", "No,year,month,day,hour,pm2.5,TEMP,PRES,cbwd,Iws,Is,Ir\n");
  EXPECT_EQ(run_cli("ingest --data " + (dir / "bad.csv").string() + " --out " + (dir / "o1").string()), 2);
  // Missing artifacts.
  EXPECT_EQ(run_cli("predict --month 1 --out " + (dir / "nothing").string()), 4);
  EXPECT_EQ(run_cli("ingest --data " + (dir / "absent.csv").string() + " --out " + (dir / "o2").string()), 4);
  // February has too few rows for a marginal fit, so its grid cells fail.
  const auto data = write_dataset(dir, {{.days = 6, .seed = 8}, {.month = 2, .days = 1, .seed = 9}});
  const std::string fit = "fit --data " + data.string() + " --months 1,2 --families gaussian --c-values 1 " +
                          "--chains 1 --iters 120 --burnin 60 --knots 4 --out " + (dir / "o3").string();
  EXPECT_EQ(run_cli(fit), 3);
  EXPECT_EQ(run_cli(fit + " --max-failed-fits 2"), 0);
  EXPECT_EQ(run_cli("contour --month 1 --out " + (dir / "o3").string()), 0);
  EXPECT_EQ(run_cli("scenario --month 1 --edit TEMP+1 --edit CBWD=XX --out " + (dir / "o3").string()), 1);
  fs::remove_all(dir);
}

}  // namespace
