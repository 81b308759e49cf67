#include "vmpadmm/io.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

namespace fs = std::filesystem;
using vmpadmm::Json;

namespace {

const std::string kCli = VMPADMM_CLI_PATH;
const std::string kData = VMPADMM_DATA_DIR;

struct CliRun {
  int code = -1;
  std::string err;
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("vmpadmm_cli_" + std::string(info->name()) + "_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  CliRun run(const std::string& args, const std::string& env = "") const {
    const std::string errf = path("stderr.txt");
    const std::string cmd = env + (env.empty() ? "" : " ") + "'" + kCli + "' " + args + " > /dev/null 2> '" + errf + "'";
    const int status = std::system(cmd.c_str());
    CliRun r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = read(errf);
    return r;
  }

  static std::string read(const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream s;
    s << f.rdbuf();
    return s.str();
  }

  static Json json(const std::string& p) { return Json::parse(read(p)); }

  fs::path dir_;
};

std::vector<std::vector<double>> csv_rows(const std::string& text, std::string* header = nullptr) {
  std::stringstream s(text);
  std::string line;
  std::getline(s, line);
  if (header) *header = line;
  std::vector<std::vector<double>> rows;
  while (std::getline(s, line)) {
    std::vector<double> row;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

TEST_F(CliTest, LassoSeedSevenVerifies) {
  const CliRun r = run("solve --problem gen:lasso:20x10:7 --theta 1 --rho 1e-6 --log " + path("log.csv") +
                    " --report " + path("rep.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  const Json rep = json(path("rep.json"));
  EXPECT_EQ(rep["status"], "verified");
  ASSERT_TRUE(rep["stopping"]["pointwise_first_k"].is_number_integer());
  EXPECT_EQ(rep["stopping"]["pointwise_first_k"].get<long>(), rep["iterations"].get<long>());
  for (const auto& [name, chk] : rep["checks"].items()) EXPECT_TRUE(chk["pass"].get<bool>()) << name;
  EXPECT_NEAR(rep["constants"]["sigma_theta"].get<double>(), 0.501, 1e-6);
}

TEST_F(CliTest, CsvSchemaAndBoundColumns) {
  ASSERT_EQ(run("solve --problem gen:box_qp:12x12:3 --theta 1.5 --max-iters 60 --rho 1e-12 --log " +
                path("log.csv") + " --report " + path("rep.json"))
                .code,
            0);
  const long iters = json(path("rep.json"))["iterations"].get<long>();
  EXPECT_GE(iters, 20);
  std::string header;
  const auto rows = csv_rows(read(path("log.csv")), &header);
  EXPECT_EQ(header, vmpadmm::csv_header());
  ASSERT_EQ(static_cast<long>(rows.size()), iters);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    ASSERT_EQ(r.size(), 16u);
    EXPECT_EQ(r[0], static_cast<double>(i + 1));
    EXPECT_TRUE(vmpadmm::within_bound(r[4], r[5])) << "k = " << i + 1;    // res_max <= bound_pointwise
    EXPECT_TRUE(vmpadmm::within_bound(r[6], r[7])) << "k = " << i + 1;    // erg_res_max <= bound_erg_res
    EXPECT_TRUE(vmpadmm::within_bound(r[10], r[11])) << "k = " << i + 1;  // eps_sum <= bound_erg_eps
    EXPECT_GE(r[15], -1e-8 * (1 + std::abs(r[14])));                      // hpe slack
  }
}

TEST_F(CliTest, ScheduleViolationNamesOffendingK) {
  const CliRun r = run("solve --problem gen:lasso:4x2:1 --schedule " + kData + "/bad_schedule.json --max-iters 2");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("k = 0"), std::string::npos) << r.err;
}

TEST_F(CliTest, SingleIterationReportsNotReached) {
  const CliRun r = run("solve --problem gen:lasso:20x10:7 --max-iters 1 --rho 1e-9 --report " + path("rep.json"));
  EXPECT_TRUE(r.code == 0 || r.code == 2) << r.err;
  const Json rep = json(path("rep.json"));
  EXPECT_EQ(rep["stopping"]["pointwise_first_k"], "not reached");
  EXPECT_EQ(rep["stopping"]["stopped_by"], "max_iters");
  EXPECT_EQ(rep["iterations"], 1);
}

TEST_F(CliTest, OutputsAreByteIdenticalAcrossRuns) {
  const std::string args = "solve --problem " + kData + "/small_lasso.json --schedule " + kData +
                           "/decay_schedule.json --theta 1.3 --max-iters 80 --seed 5";
  ASSERT_EQ(run(args + " --log " + path("a.csv") + " --report " + path("a.json")).code, 0);
  ASSERT_EQ(run(args + " --log " + path("b.csv") + " --report " + path("b.json")).code, 0);
  EXPECT_EQ(read(path("a.csv")), read(path("b.csv")));
  EXPECT_EQ(read(path("a.json")), read(path("b.json")));
}

TEST_F(CliTest, EnvironmentSeedOverridesFlag) {
  const std::string args = "solve --problem gen:lasso:10x5:2 --max-iters 5 --seed 1 --report ";
  ASSERT_EQ(run(args + path("a.json"), "VMPADMM_SEED=42").code, 0);
  ASSERT_EQ(run(args + path("b.json")).code, 0);
  EXPECT_EQ(json(path("a.json"))["seed"], 42);
  EXPECT_EQ(json(path("b.json"))["seed"], 1);
}

TEST_F(CliTest, MalformedProblemNamesTheField) {
  const CliRun r = run("solve --problem " + kData + "/malformed_problem.json");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find(".b"), std::string::npos) << r.err;
}

TEST_F(CliTest, ConfigErrors) {
  EXPECT_EQ(run("solve --problem gen:lasso:10x5:1 --theta 1.62").code, 1);
  EXPECT_EQ(run("solve --problem gen:lasso:10x5:1 --rho 0").code, 1);
  EXPECT_EQ(run("solve --problem " + path("missing.json")).code, 1);
  EXPECT_EQ(run("solve").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
}

TEST_F(CliTest, BatchOfTwentyLassoInstances) {
  const CliRun r = run("batch --corpus lasso:16x8:1-20 --max-iters 100 --jobs 4 --out-dir " + path("out") +
                    " --report " + path("agg.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  const Json agg = json(path("agg.json"));
  EXPECT_EQ(agg["summary"]["total"], 20);
  EXPECT_EQ(agg["summary"]["passed"], 20);
  ASSERT_EQ(agg["instances"].size(), 20u);
  for (const auto& e : agg["instances"]) {
    EXPECT_EQ(e["status"], "pass");
    EXPECT_TRUE(e["worst_slacks"].is_object());
  }
  long files = 0;
  for (const auto& f : fs::directory_iterator(path("out"))) files += f.is_regular_file();
  EXPECT_EQ(files, 40);
}

TEST_F(CliTest, BatchOfOneMatchesSolve) {
  ASSERT_EQ(run("batch --corpus lasso:10x5:3 --max-iters 50 --report " + path("agg.json")).code, 0);
  ASSERT_EQ(run("solve --problem gen:lasso:10x5:3 --max-iters 50 --report " + path("one.json")).code, 0);
  const Json agg = json(path("agg.json"));
  ASSERT_EQ(agg["instances"].size(), 1u);
  EXPECT_EQ(agg["instances"][0]["report"].dump(), json(path("one.json")).dump());
}

TEST_F(CliTest, BatchIsolatesFailingInstance) {
  std::ofstream(path("corpus.json")) << R"(["gen:lasso:10x5:1", {"problem": "gen:lasso:10x5:2", "theta": 1.62},
                                          "gen:box_qp:8x8:1"])";
  const CliRun r = run("batch --corpus " + path("corpus.json") + " --max-iters 40 --report " + path("agg.json"));
  EXPECT_NE(r.code, 0);
  const Json agg = json(path("agg.json"));
  EXPECT_EQ(agg["instances"][0]["status"], "pass");
  EXPECT_EQ(agg["instances"][1]["status"], "error");
  EXPECT_EQ(agg["instances"][2]["status"], "pass");
  EXPECT_EQ(agg["summary"]["errors"], 1);
}

TEST_F(CliTest, SampleCorpusFile) {
  const CliRun r = run("batch --corpus " + kData + "/corpus.json --max-iters 100 --report " + path("agg.json"));
  EXPECT_EQ(r.code, 0) << r.err;
}
