#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace {

namespace fs = std::filesystem;

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(CHOKE_CLI) + " " + args + " 2>/dev/null";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  if (p == nullptr) return r;
  char buf[4096];
  for (std::size_t n; (n = fread(buf, 1, sizeof buf, p)) > 0;) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("choke_cli_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string scenarios() { return std::string(CHOKE_SOURCE_DIR) + "/scenarios/"; }

TEST(Cli, SteadyPrintsEquilibrium) {
  const Result r = run("steady --x0 2");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("mu0=0.2506"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("h0=0.437"), std::string::npos) << r.out;
}

TEST(Cli, SteadyWithoutUdpIsZero) {
  const Result r = run("steady --x0 0");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("mu0=0 h0=0"), std::string::npos) << r.out;
}

TEST(Cli, SweepPeaksAtTheLogisticBound) {
  const Result r = run("steady --sweep 0.1:100:log --points 400");
  ASSERT_EQ(r.code, 0);
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "x0,r,mu0,h0");
  double best = 0.0;
  int rows = 0;
  while (std::getline(in, line)) {
    std::istringstream cells(line);
    std::string x0, rr, mu0;
    std::getline(cells, x0, ',');
    std::getline(cells, rr, ',');
    std::getline(cells, mu0, ',');
    best = std::max(best, std::stod(mu0));
    ++rows;
  }
  EXPECT_EQ(rows, 400);
  EXPECT_NEAR(best, 0.269, 0.001);
}

TEST(Cli, ExtremeValues) {
  EXPECT_NEAR(std::stod(run("extreme --x0 2 --alpha 0.1").out), 0.565, 0.005);
  EXPECT_NEAR(std::stod(run("extreme --x0 2 --alpha 1").out), 0.2507, 1e-4);
}

TEST(Cli, ValidateReproducesTheSuite) {
  const fs::path dir = scratch("validate");
  const Result r = run("validate --scenario " + scenarios() + "tableII.json --out " + dir.string());
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "validate.json"));
  EXPECT_TRUE(fs::exists(dir / "validate.csv"));
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run("validate --scenario " + scenarios() + "tableII.json --tolerance 1e-6").code, 2);
  EXPECT_EQ(run("steady --x0 -1").code, 2);
  EXPECT_EQ(run("steady").code, 2);
  EXPECT_EQ(run("profile --x0 2 --b 1").code, 2);
  EXPECT_EQ(run("bogus").code, 2);
  EXPECT_EQ(run("simulate --scenario /nonexistent.json").code, 1);
  EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, SimulateIsByteIdenticalForTheSameSeed) {
  const fs::path a = scratch("sim_a");
  const fs::path b = scratch("sim_b");
  const std::string common = "simulate --scenario " + scenarios() +
                             "step_0.5_2.json --replications 3 --compare 21 --seed 7 --out ";
  ASSERT_EQ(run(common + a.string() + " --jobs 1").code, 0);
  ASSERT_EQ(run(common + b.string() + " --jobs 3").code, 0);
  for (const char* f : {"trace.csv", "transient_21.csv", "transient_21.json", "summary.json"}) {
    const std::string x = slurp(a / f);
    EXPECT_FALSE(x.empty()) << f;
    EXPECT_EQ(x, slurp(b / f)) << f;
  }
  const std::string trace = slurp(a / "trace.csv");
  EXPECT_EQ(trace.find("nan"), std::string::npos);
  EXPECT_EQ(trace.find("inf"), std::string::npos);
  EXPECT_EQ(trace.back(), '\n');
}

TEST(Cli, SimulateSeedChangesOutput) {
  const fs::path a = scratch("seed_a");
  const fs::path b = scratch("seed_b");
  const std::string common = "simulate --scenario " + scenarios() +
                             "steady_0.5C.json --replications 1 --window 0.5 --out ";
  ASSERT_EQ(run(common + a.string() + " --seed 1").code, 0);
  ASSERT_EQ(run(common + b.string() + " --seed 2").code, 0);
  EXPECT_NE(slurp(a / "trace.csv"), slurp(b / "trace.csv"));
}

TEST(Cli, ProfileAndTransientWriteCsv) {
  const Result p = run("profile --x0 2 --points 11");
  ASSERT_EQ(p.code, 0);
  EXPECT_EQ(p.out.rfind("y,rho0,v,tau,", 0), 0u);
  EXPECT_EQ(std::count(p.out.begin(), p.out.end(), '\n'), 12);
  const Result t = run("transient --x0 3 --alpha 0.0833333333333333 --points 5");
  ASSERT_EQ(t.code, 0);
  EXPECT_EQ(t.out.rfind("dT,mu0\n", 0), 0u);
  EXPECT_EQ(std::count(t.out.begin(), t.out.end(), '\n'), 6);
}

}  // namespace
