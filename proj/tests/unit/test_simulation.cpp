#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "generators.hpp"
#include "panel_dml/errors.hpp"
#include "panel_dml/simulation.hpp"
#include "panel_dml/transforms.hpp"

using namespace panel_dml;
using namespace panel_dml::testing;

namespace {

DgpConfig config(int design, Index n, Index t = 10) {
  DgpConfig cfg;
  cfg.design = design;
  cfg.n_units = n;
  cfg.n_waves = t;
  cfg.seed = 99;
  return cfg;
}

ReplicationResult rep(int r, double theta, double se = 0.1, bool ok = true) {
  ReplicationResult x;
  x.replication = r;
  x.theta = theta;
  x.se = se;
  x.ok = ok;
  return x;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  return out;
}

}  // namespace

TEST_CASE("nuisance functions") {
  const auto d1 = config(1, 10);
  CHECK(dgp_l0(d1, 2, 4) == 4.5);
  CHECK(dgp_m0(d1, 2, 4) == 4.5);
  const auto d2 = config(2, 10);
  CHECK(dgp_l0(d2, 0, 0) == doctest::Approx(0.5 + 0.25));
  CHECK(dgp_m0(d2, 0, 0) == doctest::Approx(1.0 + 0.25 * 0.5));
  const auto d3 = config(3, 10);
  CHECK(dgp_m0(d3, -1, 2) == 0.5 * -1 * 2);
  CHECK(dgp_m0(d3, 2, 3) == 0.25 * 2 + 0.5 * 6);
  CHECK(dgp_l0(d3, 2, -3) == 0.5 * -6);
  CHECK(dgp_l0(d3, 2, 3) == 0.5 * 6 + 0.25 * 3);
}

TEST_CASE("configuration checks") {
  auto bad = config(4, 10);
  CHECK_THROWS_AS(check_dgp(bad), Error);
  bad = config(1, 10);
  bad.p = 2;
  CHECK_THROWS_AS(check_dgp(bad), Error);
  bad = config(1, 0);
  CHECK_THROWS_AS(check_dgp(bad), Error);
}

TEST_CASE("generated panel") {
  const auto sim = generate_dgp(config(1, 4000));
  const auto& panel = sim.panel;
  CHECK(panel.n_units == 4000);
  CHECK(panel.n_waves == 10);
  CHECK(panel.n_covariates() == 30);
  for (Index j : {0, 7, 29}) {
    const double mean = panel.x.col(j).mean();
    const double sd = std::sqrt((panel.x.col(j).array() - mean).square().sum() / (panel.x.rows() - 1.0));
    CAPTURE(j);
    CHECK(std::abs(sd / 5.0 - 1.0) < 0.03);
  }
  auto narrow = config(1, 4000);
  narrow.x_sd = std::sqrt(5.0);
  const Eigen::VectorXd x = generate_dgp(narrow).panel.x.col(0);
  const double sd = std::sqrt((x.array() - x.mean()).square().sum() / (x.size() - 1.0));
  CHECK(std::abs(sd / std::sqrt(5.0) - 1.0) < 0.03);

  const auto& o = sim.oracle;
  CHECK(o.d_bar == doctest::Approx(panel.d.mean()).epsilon(1e-12));
  CHECK((panel.y - 0.5 * panel.d - o.alpha - o.l0 - o.u).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(demean_within(o.alpha, 10).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(demean_within(o.c, 10).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((panel.d - o.m0 - o.c - o.v).cwiseAbs().maxCoeff() < 1e-12);
  // alpha minus its correlated part leaves the unit draw a_i.
  const Eigen::VectorXd d_mean = broadcast_unit_means(panel.d, 10);
  const Eigen::VectorXd x_mean = broadcast_unit_means(Eigen::VectorXd(panel.x.col(0) + panel.x.col(2)), 10);
  const Eigen::VectorXd a_i = unit_means(Eigen::VectorXd(o.alpha - 0.25 * (d_mean.array() - o.d_bar).matrix() - 0.25 * x_mean), 10);
  const double a_sd = std::sqrt((a_i.array() - a_i.mean()).square().sum() / (a_i.size() - 1.0));
  CHECK(std::abs(a_sd / 0.95 - 1.0) < 0.05);
  CHECK(std::abs(a_i.mean()) < 0.05);

  const auto again = generate_dgp(config(1, 4000));
  CHECK(format_panel_csv(again.panel) == format_panel_csv(panel));
}

TEST_CASE("population mode") {
  auto cfg = config(2, 50, 3);
  cfg.population_mode = true;
  cfg.population_size = 5000;
  cfg.population_seed = 17;
  const auto a = generate_dgp(cfg);
  cfg.seed = 100;
  const auto b = generate_dgp(cfg);
  CHECK(a.oracle.d_bar == b.oracle.d_bar);
  CHECK(a.panel.y != b.panel.y);
  cfg.population_seed = 18;
  CHECK(generate_dgp(cfg).oracle.d_bar != a.oracle.d_bar);
  CHECK(a.panel.n_units == 50);
}

TEST_CASE("summaries") {
  SUBCASE("exact estimates") {
    const auto s = summarize_replications({rep(0, 0.5), rep(1, 0.5), rep(2, 0.5)}, 0.5);
    CHECK(s.bias == 0.0);
    CHECK(s.rmse == 0.0);
    CHECK(s.replications == 3);
  }
  SUBCASE("symmetric spread") {
    const double delta = 0.125;
    const auto s = summarize_replications({rep(0, 0.5 - delta), rep(1, 0.5 + delta), rep(2, 0.5 - delta), rep(3, 0.5 + delta)}, 0.5);
    CHECK(s.bias == 0.0);
    CHECK(s.rmse == delta);
    CHECK(s.sd_theta == doctest::Approx(delta * std::sqrt(4.0 / 3.0)));
    CHECK(s.se_sd_ratio == doctest::Approx(0.1 / s.sd_theta));
    CHECK(s.mc_se == doctest::Approx(s.sd_theta / 2.0));
  }
  SUBCASE("failures are counted and excluded") {
    const auto s = summarize_replications({rep(0, 1.0), rep(1, 99.0, 0.1, false), rep(2, 2.0)}, 1.0);
    CHECK(s.replications == 2);
    CHECK(s.failures == 1);
    CHECK(s.bias == 0.5);
    CHECK(s.trace.size() == 3);
  }
  SUBCASE("order does not matter") {
    const auto a = summarize_replications({rep(0, 0.3, 0.2), rep(1, 0.9, 0.1), rep(2, 0.4, 0.3)}, 0.5);
    const auto b = summarize_replications({rep(2, 0.4, 0.3), rep(0, 0.3, 0.2), rep(1, 0.9, 0.1)}, 0.5);
    CHECK(a.to_json() == b.to_json());
  }
}

TEST_CASE("tables") {
  McSummary s1 = summarize_replications({rep(0, 0.51, 0.02), rep(1, 0.47, 0.03)}, 0.5);
  s1.learner = "ols";
  s1.approach = "cre";
  s1.score = "po";
  s1.rmse_l = 1.23456789;
  McSummary s2 = s1;
  s2.learner = "lasso";
  s2.approach = "fd-exact";
  s2.model_rmse = 0.000123456;

  const auto one = emit_table({s1});
  CHECK(std::count(one.csv.begin(), one.csv.end(), '\n') == 2);
  CHECK(std::count(one.text.begin(), one.text.end(), '\n') == 2);
  const auto header = one.csv.substr(0, one.csv.find('\n'));
  CHECK(header == "learner,approach,score,replications,Bias,RMSE,SE/SD,Model RMSE,RMSE_l,RMSE_m");

  const auto ab = emit_table({s1, s2});
  const auto ba = emit_table({s2, s1});
  CHECK(ab.csv.substr(0, ab.csv.find('\n')) == ba.csv.substr(0, ba.csv.find('\n')));
  CHECK(ab.text.substr(0, ab.text.find('\n')) == ba.text.substr(0, ba.text.find('\n')));

  const auto lines = split(ab.csv, '\n');
  const auto row = split(lines[2], ',');
  REQUIRE(row.size() == 10);
  const double want[] = {s2.bias, s2.rmse, s2.se_sd_ratio, s2.model_rmse, s2.rmse_l, s2.rmse_m};
  for (int c = 0; c < 6; ++c) CHECK(std::abs(std::stod(row[static_cast<std::size_t>(4 + c)]) - want[c]) <= 5e-5);
  CHECK(ab.text.find("1.2346") != std::string::npos);
  CHECK_THROWS_AS(emit_table({}), Error);
}

TEST_CASE("Monte Carlo runs") {
  auto cfg = config(1, 100, 4);
  cfg.p = 5;
  NuisanceStrategy strategy;
  strategy.l = default_learner(LearnerKind::Ols);
  strategy.m = strategy.l;
  MonteCarloOptions options;
  options.replications = 5;
  const auto a = run_monte_carlo(cfg, strategy, options);
  CHECK(a.replications == 5);
  CHECK(a.trace.size() == 5);
  CHECK(a.learner == "ols");
  CHECK(a.approach == "cre");
  CHECK(a.max_moment_residual <= 1e-8);
  CHECK(a.rmse * a.rmse >= a.bias * a.bias - 1e-12);
  options.threads = 2;
  const auto b = run_monte_carlo(cfg, strategy, options);
  CHECK(a.to_json().dump() == b.to_json().dump());
  CHECK(format_trace_csv(a) == format_trace_csv(b));
  CHECK(a.trace[2].seed == mix_seed(cfg.seed, 2));

  options.oracle = true;
  const auto o = run_monte_carlo(cfg, strategy, options);
  CHECK(o.replications == 5);
  CHECK(o.learner == "oracle");
  options.replications = 1;
  CHECK_THROWS_AS(run_monte_carlo(cfg, strategy, options), Error);
}
