#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>

#include "mvlong/simulation.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mvlong;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("mvlong_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Run run_cli(const std::string& args, const fs::path& dir) {
  const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
  std::string cmd = std::string(MVLONG_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string config(const std::string& name) { return std::string(MVLONG_CONFIG_DIR) + "/" + name; }

fs::path toy_data(const fs::path& dir) {
  auto data = keep_responses(gen_study2(15, 0.5, 0.2, 3), {0, 1});
  auto path = dir / "toy.csv";
  write_csv(data, path.string());
  return path;
}

/// Copy of a sample config with the [chain] section replaced.
fs::path with_chain(const std::string& name, const std::string& chain, const fs::path& dir) {
  std::string text = slurp(config(name));
  text = std::regex_replace(text, std::regex(R"(\[chain\][^\[]*)"), "[chain]\n" + chain + "\n\n");
  auto path = dir / name;
  std::ofstream(path) << text;
  return path;
}

}  // namespace

TEST(CliFit, ToyModelWritesEveryOutput) {
  auto dir = scratch("toy");
  auto data = toy_data(dir);
  auto r = run_cli("fit --config " + config("toy.ini") + " --data " + data.string() + " --out " + (dir / "fit").string(),
                   dir);
  ASSERT_EQ(r.code, 0) << r.err;
  auto status = json::parse(r.out);
  EXPECT_EQ(status.at("status"), "ok");
  EXPECT_EQ(status.at("draws"), 50);
  for (const char* f : {"manifest.json", "timing.json", "curves.csv", "samples/mean.csv", "samples/correlation.csv",
                        "samples/scales.csv"})
    EXPECT_TRUE(fs::exists(dir / "fit" / f)) << f;
  auto manifest = json::parse(slurp(dir / "fit" / "manifest.json"));
  EXPECT_EQ(manifest.at("data").at("subjects"), 15);
  EXPECT_EQ(manifest.at("model").at("variant"), "common");
  EXPECT_EQ(manifest.at("parameter_counts").at("mean").at("total"), 2);
  EXPECT_FALSE(manifest.at("acceptance").at(0).at("steps").empty());

  auto s = run_cli("summarize --in " + (dir / "fit").string() + " --out " + (dir / "summary").string(), dir);
  ASSERT_EQ(s.code, 0) << s.err;
  for (const char* f : {"summary.csv", "indicators.csv", "selection.csv", "acceptance.csv"})
    EXPECT_TRUE(fs::exists(dir / "summary" / f)) << f;
  EXPECT_NE(slurp(dir / "summary" / "summary.csv").find("mean,beta"), std::string::npos);
}

TEST(CliFit, RerunsWithTheSameSeedAreByteIdentical) {
  auto dir = scratch("rerun");
  auto data = toy_data(dir);
  for (const char* out : {"a", "b"}) {
    auto r = run_cli("fit --config " + config("toy.ini") + " --data " + data.string() + " --seed 5 --chains 2 --out " +
                         (dir / out).string(),
                     dir);
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(slurp(dir / "a" / "manifest.json"), slurp(dir / "b" / "manifest.json"));
  EXPECT_EQ(slurp(dir / "a" / "curves.csv"), slurp(dir / "b" / "curves.csv"));
  for (const auto& e : fs::directory_iterator(dir / "a" / "samples"))
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / "samples" / e.path().filename())) << e.path().filename();
  auto c = run_cli("fit --config " + config("toy.ini") + " --data " + data.string() + " --seed 6 --chains 2 --out " +
                       (dir / "c").string(),
                   dir);
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_NE(slurp(dir / "a" / "samples" / "mean.csv"), slurp(dir / "c" / "samples" / "mean.csv"));
}

TEST(CliFit, CohortConfigParameterCounts) {
  auto dir = scratch("cohort");
  auto data = dir / "cohort.csv";
  write_csv(gen_cohort(500, 2024), data.string());
  auto cfg = with_chain("cohort.ini", "iterations = 6\nburn_in = 2\nthin = 2", dir);
  auto r = run_cli("fit --config " + cfg.string() + " --data " + data.string() + " --out " + (dir / "fit").string(), dir);
  ASSERT_EQ(r.code, 0) << r.err;
  auto counts = json::parse(slurp(dir / "fit" / "manifest.json")).at("parameter_counts");
  EXPECT_EQ(counts.at("mean").at("total"), 92);
  EXPECT_EQ(counts.at("autoregressive").at("total"), 192);
  EXPECT_EQ(counts.at("variance").at("total"), 84);
  EXPECT_EQ(counts.at("correlation_center").at("total"), 72);
  EXPECT_EQ(counts.at("correlation_dispersion").at("total"), 12);
  EXPECT_TRUE(fs::exists(dir / "fit" / "sigma_baseline.csv"));
}

TEST(CliErrors, UnknownCovariateIsAConfigError) {
  auto dir = scratch("unknown");
  auto data = toy_data(dir);
  auto cfg = dir / "bad.ini";
  std::ofstream(cfg) << "[data]\nresponses = y1, y2\n[mean]\nterms = age\n";
  auto r = run_cli("fit --config " + cfg.string() + " --data " + data.string() + " --out " + (dir / "fit").string(), dir);
  EXPECT_EQ(r.code, 1);
  auto err = json::parse(r.err);
  EXPECT_EQ(err.at("status"), "error");
  EXPECT_EQ(err.at("type"), "config");
  EXPECT_NE(err.at("message").get<std::string>().find("age"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "fit"));
}

TEST(CliErrors, MissingDataFileIsReported) {
  auto dir = scratch("missing");
  auto r = run_cli("fit --config " + config("toy.ini") + " --data " + (dir / "none.csv").string() + " --out " +
                       (dir / "fit").string(),
                   dir);
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(json::parse(r.err).at("status"), "error");
}

TEST(CliErrors, UsageErrorsExitWithTwo) {
  auto dir = scratch("usage");
  EXPECT_EQ(run_cli("simulate --study 3 --out " + (dir / "s").string(), dir).code, 2);
  EXPECT_EQ(run_cli("fit --config " + config("toy.ini"), dir).code, 2);
  EXPECT_EQ(run_cli("frobnicate", dir).code, 2);
  EXPECT_EQ(run_cli("", dir).code, 2);
  EXPECT_EQ(json::parse(run_cli("simulate --study 0 --out x", dir).err).at("type"), "usage");
}

TEST(CliErrors, SummarizeWithoutSamplesFails) {
  auto dir = scratch("empty");
  fs::create_directories(dir / "nothing");
  auto r = run_cli("summarize --in " + (dir / "nothing").string() + " --out " + (dir / "s").string(), dir);
  EXPECT_NE(r.code, 0);
  EXPECT_NE(json::parse(r.err).at("message").get<std::string>().find("no posterior samples"), std::string::npos);
  EXPECT_NE(run_cli("summarize --in " + (dir / "absent").string() + " --out " + (dir / "s").string(), dir).code, 0);
}

TEST(CliSimulate, StudyOneTableHasFiniteRatios) {
  auto dir = scratch("sim1");
  auto r = run_cli("simulate --study 1 --n 10 --replicates 1 --iterations 40 --burn-in 20 --thin 2 --out " +
                       (dir / "s").string(),
                   dir);
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream t(dir / "s" / "study1_table.csv");
  std::string header, row;
  std::getline(t, header);
  std::getline(t, row);
  EXPECT_EQ(header, "n,I_R_2,I_R_3,I_Sigma_2,I_Sigma_3");
  std::stringstream ss(row);
  std::string field;
  std::getline(ss, field, ',');
  EXPECT_EQ(field, "10");
  int fields = 0;
  while (std::getline(ss, field, ',')) {
    EXPECT_TRUE(std::isfinite(std::stod(field))) << field;
    ++fields;
  }
  EXPECT_EQ(fields, 4);
}

TEST(CliSimulate, StudyTwoWritesCellsAndTable) {
  auto dir = scratch("sim2");
  auto r = run_cli("simulate --study 2 --n 20 --replicates 1 --rho2 0.2,0.8 --dims 3 --iterations 30 --burn-in 10 "
                   "--thin 2 --out " +
                       (dir / "s").string(),
                   dir);
  ASSERT_EQ(r.code, 0) << r.err;
  std::string table = slurp(dir / "s" / "study2_table.csv");
  EXPECT_EQ(table.substr(0, table.find('\n')), "rho2,missing,dims,B_ratio,V_ratio");
  // rho2 x dims {1, 3} rows plus the header
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 5);
  std::string cells = slurp(dir / "s" / "study2_cells.csv");
  EXPECT_EQ(std::count(cells.begin(), cells.end(), '\n'), 5);
}
