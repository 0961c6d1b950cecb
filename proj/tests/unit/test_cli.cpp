#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include <json.hpp>

#include "panel_dml/cli.hpp"
#include "panel_dml/dml.hpp"
#include "panel_dml/simulation.hpp"

using namespace panel_dml;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "panel-dml");
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

nlohmann::json load(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

struct Scratch {
  fs::path dir;
  Scratch() {
    dir = fs::temp_directory_path() / ("panel_dml_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

const std::string fixture = std::string(PANEL_DML_FIXTURE_DIR) + "/linear_panel.csv";

}  // namespace

TEST_CASE("estimate on the shipped fixture") {
  Scratch tmp;
  const double truth = load(std::string(PANEL_DML_FIXTURE_DIR) + "/linear_panel.json")["theta"];
  const auto r = cli({"estimate", "--data", fixture, "--approach", "cre", "--learner", "ols", "--seed", "3", "--out",
                      tmp / "report.json", "--scores-out", tmp / "scores.csv"});
  REQUIRE(r.code == kExitOk);
  CHECK(r.out.find("theta") != std::string::npos);
  CHECK(r.out.find("95% CI") != std::string::npos);
  const auto report = load(tmp / "report.json");
  const double theta = report["theta"];
  const double se = report["se"];
  CHECK(std::abs(theta - truth) <= 2 * se);
  CHECK(report["config"]["approach"] == "cre");
  CHECK(report["config"]["seed"] == 3);
  const auto scores = slurp(tmp / "scores.csv");
  CHECK(std::count(scores.begin(), scores.end(), '\n') == 1 + 1500);
}

TEST_CASE("estimate errors") {
  Scratch tmp;
  SUBCASE("missing treatment column") {
    std::ofstream(tmp / "bad.csv") << "unit,wave,y,x1\n1,1,0,1\n1,2,1,2\n2,1,0,3\n2,2,1,4\n";
    const auto r = cli({"estimate", "--data", tmp / "bad.csv"});
    CHECK(r.code == kExitData);
    CHECK(r.err.find("'d'") != std::string::npos);
  }
  SUBCASE("unreadable file") {
    CHECK(cli({"estimate", "--data", tmp / "nope.csv"}).code == kExitData);
  }
  SUBCASE("single fold is guarded") {
    CHECK(cli({"estimate", "--data", fixture, "--folds", "1"}).code == kExitUsage);
    CHECK(cli({"estimate", "--data", fixture, "--folds", "1", "--diagnostics", "--learner", "ols"}).code == kExitOk);
  }
  SUBCASE("unknown enum values") {
    CHECK(cli({"estimate", "--data", fixture, "--approach", "gmm"}).code == kExitUsage);
    CHECK(cli({"estimate", "--data", fixture, "--learner", "svm"}).code == kExitUsage);
    CHECK(cli({"estimate", "--data", fixture, "--score", "xx"}).code == kExitUsage);
  }
  SUBCASE("numerical failure") {
    std::ofstream csv(tmp / "flat.csv");
    csv << "unit,wave,y,d,x1\n";
    for (int i = 1; i <= 20; ++i) {
      for (int t = 1; t <= 3; ++t) csv << i << "," << t << "," << i * t << "," << i << "," << (i * 7 + t * 3) % 11 << "\n";
    }
    csv.close();
    const auto r = cli({"estimate", "--data", tmp / "flat.csv", "--approach", "fd-exact", "--learner", "ols"});
    CHECK(r.code == kExitNumerical);
    CHECK(r.err.find("DegenerateDenominator") != std::string::npos);
  }
}

TEST_CASE("simulate") {
  Scratch tmp;
  const std::vector<std::string> base{"simulate", "--dgp", "1", "--n", "100", "--reps", "5", "--learner", "ols",
                                      "--approach", "cre", "--seed", "8"};
  auto args = base;
  args.insert(args.end(), {"--out", tmp / "a.json", "--trace", tmp / "trace.csv"});
  const auto r = cli(args);
  REQUIRE(r.code == kExitOk);
  const auto a = load(tmp / "a.json");
  REQUIRE(a["summaries"].size() == 1);
  CHECK(a["summaries"][0]["replications"] == 5);
  CHECK(a["summaries"][0]["trace"].size() == 5);
  const auto trace = slurp(tmp / "trace.csv");
  CHECK(std::count(trace.begin(), trace.end(), '\n') == 6);
  CHECK(fs::exists(tmp / "a.csv"));
  CHECK(fs::exists(tmp / "a.txt"));

  args = base;
  args.insert(args.end(), {"--out", tmp / "b.json"});
  REQUIRE(cli(args).code == kExitOk);
  CHECK(slurp(tmp / "a.json") == slurp(tmp / "b.json"));

  CHECK(cli({"simulate", "--dgp", "4"}).code == kExitUsage);
  CHECK(cli({"simulate"}).code == kExitUsage);

  const auto grid = cli({"simulate", "--dgp", "2", "--n", "60", "--t", "3", "--p", "4", "--reps", "2", "--learner",
                         "ols,cart", "--approach", "cre,hybrid-wg", "--no-tune"});
  REQUIRE(grid.code == kExitOk);
  CHECK(std::count(grid.out.begin(), grid.out.end(), '\n') == 5);
}

TEST_CASE("tune") {
  Scratch tmp;
  const auto r = cli({"tune", "--data", fixture, "--learner", "cart", "--seed", "4", "--out", tmp / "spec.json"});
  REQUIRE(r.code == kExitOk);
  const auto spec = load(tmp / "spec.json");
  for (const char* which : {"l", "m"}) {
    const double cp = spec[which]["cp"];
    const int depth = spec[which]["maxdepth"];
    CHECK(cp >= 0.001);
    CHECK(cp <= 0.05);
    CHECK(depth >= 2);
    CHECK(depth <= 10);
  }
  REQUIRE(cli({"tune", "--data", fixture, "--learner", "cart", "--seed", "4", "--out", tmp / "again.json"}).code == kExitOk);
  CHECK(load(tmp / "again.json")["l"] == spec["l"]);

  REQUIRE(cli({"tune", "--data", fixture, "--learner", "boost", "--resolution", "1", "--n-evals", "1", "--param",
               "nrounds=5", "--out", tmp / "one.json"})
              .code == kExitOk);
  CHECK(load(tmp / "one.json")["search"]["l"]["trials"].size() == 1);

  // Tuned specs feed back into estimate.
  const auto est = cli({"estimate", "--data", fixture, "--specs", tmp / "spec.json", "--folds", "3"});
  CHECK(est.code == kExitOk);
}

TEST_CASE("config file with flag overrides") {
  Scratch tmp;
  std::ofstream(tmp / "run.ini") << "[simulate]\ndgp = 1\nn = 40\nt = 3\np = 3\nreps = 2\nlearner = ols\nseed = 5\n";
  REQUIRE(cli({"--config", tmp / "run.ini", "simulate", "--out", tmp / "x.json"}).code == kExitOk);
  REQUIRE(cli({"--config", tmp / "run.ini", "simulate", "--n", "50", "--out", tmp / "y.json"}).code == kExitOk);
  CHECK(load(tmp / "x.json")["config"]["dgp"]["n_units"] == 40);
  CHECK(load(tmp / "y.json")["config"]["dgp"]["n_units"] == 50);
}

TEST_CASE("CSV round trip reproduces the in-memory estimate") {
  Scratch tmp;
  DgpConfig cfg;
  cfg.design = 2;
  cfg.n_units = 200;
  cfg.n_waves = 4;
  cfg.p = 4;
  cfg.seed = 12;
  const auto sim = generate_dgp(cfg);
  write_panel_csv(tmp / "sim.csv", sim.panel);
  for (const char* approach : {"cre", "fd-exact", "hybrid-wg", "approx-fd"}) {
    NuisanceStrategy s;
    s.approach = parse_approach(approach);
    s.l = default_learner(LearnerKind::Cart);
    s.m = s.l;
    DmlOptions options;
    options.seed = 6;
    const double in_memory = dml_estimate(sim.panel, s, options).theta;
    REQUIRE(cli({"estimate", "--data", tmp / "sim.csv", "--approach", approach, "--learner", "cart", "--seed", "6",
                 "--out", tmp / "r.json"})
                .code == kExitOk);
    const double via_csv = load(tmp / "r.json")["theta"];
    CAPTURE(approach);
    CHECK(std::abs(via_csv - in_memory) <= 1e-12 * std::max(1.0, std::abs(in_memory)));
  }
}

TEST_CASE("the installed binary runs") {
  const std::string cmd = std::string(PANEL_DML_CLI_PATH) + " --help > /dev/null";
  CHECK(std::system(cmd.c_str()) == 0);
}
