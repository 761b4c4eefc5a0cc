#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "hs/cli.hpp"
#include "hs/errors.hpp"
#include "json.hpp"

using namespace hs;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run hsx(std::vector<std::string> args) {
  args.insert(args.begin(), "hsx");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("hsx_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("config parsing") {
  std::istringstream in("# comment\n\nN = 3\n  lambda=0.2  \nL = 2 1 1\npoint = 0.5 0.5 0.5 1 0 0\n");
  const RunConfig c = RunConfig::parse(in);
  CHECK(c.integer("N") == 3);
  CHECK(c.real("lambda") == 0.2);
  CHECK(c.box().lengths.x == 2.0);
  CHECK(c.point()->size() == 1);
  CHECK(c.get("measure") == "perturbed");
  CHECK_FALSE(c.tolerances());
  CHECK(c.count("samples") == 100000);

  std::istringstream bad("nonsense = 1\n");
  CHECK_THROWS_AS(RunConfig::parse(bad), ConfigError);
  std::istringstream noeq("just words\n");
  CHECK_THROWS_AS(RunConfig::parse(noeq), ConfigError);
  RunConfig d;
  d.set("samples", "1e3");
  CHECK(d.count("samples") == 1000);
  d.set("N", "2.5");
  CHECK_THROWS_AS(d.integer("N"), ConfigError);
  d.set("eps_graze", "1e-8");
  REQUIRE(d.tolerances());
  CHECK(d.tolerances()->eps_graze == 1e-8);
}

TEST_CASE("count-trees") {
  const Run r = hsx({"count-trees", "--n", "2", "--m", "3"});
  CHECK(r.code == 0);
  CHECK(r.out == "24\n");
}

TEST_CASE("error exits") {
  CHECK(hsx({}).code == 2);
  CHECK(hsx({"rho-series", "--set", "bogus=1"}).code == 2);
  CHECK(hsx({"rho-series", "--config", "/nonexistent/file.cfg"}).code == 2);
  CHECK(hsx({"rho-series", "--set", "lambda=1.5", "--samples", "10"}).code == 2);
  CHECK(hsx({"rho-tree", "--set", "tree=1:[2]", "--samples", "10", "--set", "norm_samples=1000"}).code == 2);
  const Run bad = hsx({"frobnicate"});
  CHECK(bad.code == 2);
  CHECK_FALSE(bad.err.empty());
}

TEST_CASE("rho-series at n = N is a single deterministic term") {
  const Run r = hsx({"rho-series", "--set", "N=2", "--set", "point=0.3 0.3 0.3 1 0 0; 0.7 0.6 0.5 0 1 0",
                     "--set", "norm_samples=20000", "--seed", "4"});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["command"] == "rho-series");
  CHECK(j["seed"] == 4);
  CHECK(j["version"] == version_string());
  CHECK(j["config"]["seed"] == "4");
  const auto& e = j["result"]["estimate"];
  CHECK(e["stderr"] == 0.0);
  CHECK(e["breakdown"].size() == 1);
  CHECK(e["norm_rel_error"].get<double>() > 0.0);
}

TEST_CASE("reruns are byte-identical and results land in --out") {
  const auto dir = scratch("rerun");
  const std::vector<std::string> args{"rho-direct", "--samples", "5000", "--set", "norm_samples=20000",
                                      "--out", dir.string(), "--threads", "2"};
  const Run a = hsx(args);
  const Run b = hsx(args);
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  std::ifstream f(dir / "rho-direct.json");
  std::stringstream text;
  text << f.rdbuf();
  CHECK(text.str() == a.out);
  std::filesystem::remove_all(dir);
}

TEST_CASE("simulate writes an event log") {
  const auto dir = scratch("simulate");
  const Run r = hsx({"simulate", "--set", "n=3", "--set", "t=5", "--out", dir.string()});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["result"]["singular"] == "none");
  CHECK(std::abs(j["result"]["energy_rel_drift"].get<double>()) < 1e-12);
  std::ifstream csv(dir / "events.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "time,kind,i,j,wx,wy,wz");
  std::filesystem::remove_all(dir);
}

TEST_CASE("verify commands report pass and fail") {
  const std::vector<std::string> base{"verify-step", "--set", "N=3", "--set", "tree=2:[]", "--samples", "20000",
                                      "--set", "norm_samples=20000"};
  CHECK(hsx(base).code == 0);
  auto strict = base;
  strict.insert(strict.end(), {"--set", "sigmas=0"});
  const Run f = hsx(strict);
  CHECK(f.code == 1);
  CHECK(f.err.find("FAILED") != std::string::npos);

  const Run c = hsx({"verify-cancel", "--set", "N=3", "--set", "n=2", "--set", "tree=2:[1]", "--set",
                     "pair_samples=100", "--samples", "20000", "--set", "norm_samples=20000", "--set", "t=1.5"});
  CHECK(c.code == 0);
  CHECK(nlohmann::json::parse(c.out)["result"]["r_minus"] == 100);
}

TEST_CASE("verify-bbgky on an equilibrium configuration") {
  const auto dir = scratch("bbgky");
  const Run r = hsx({"verify-bbgky", "--set", "measure=equilibrium", "--set", "N=3", "--set", "t_grid=0 0.2 0.4",
                     "--set", "point_clearance=0.15", "--samples", "20000", "--set", "norm_samples=20000", "--out",
                     dir.string()});
  CHECK(r.code == 0);
  CHECK(std::filesystem::exists(dir / "bbgky.csv"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("sweep over lambda") {
  const Run r = hsx({"sweep", "--set", "sweep_param=lambda", "--set", "sweep_values=0 0.3", "--samples", "5000",
                     "--set", "norm_samples=20000"});
  REQUIRE(r.code == 0);
  const auto rows = nlohmann::json::parse(r.out)["result"]["rows"];
  CHECK(rows.size() == 4);
  CHECK(hsx({"sweep", "--set", "sweep_param=beta"}).code == 2);
}
