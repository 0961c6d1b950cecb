#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "generators.hpp"
#include "oracles.hpp"
#include "panel_dml/dml.hpp"
#include "panel_dml/errors.hpp"
#include "panel_dml/simulation.hpp"
#include "panel_dml/transforms.hpp"

using namespace panel_dml;
using namespace panel_dml::testing;

namespace {

NuisanceStrategy with_learner(Approach approach, LearnerKind kind) {
  NuisanceStrategy s;
  s.approach = approach;
  s.l = default_learner(kind);
  s.m = s.l;
  return s;
}

ScoreBundle bundle(std::vector<double> v, std::vector<double> u, int fold = 0, Index unit = 0) {
  ScoreBundle b;
  b.unit = unit;
  b.fold = fold;
  b.v_perp = Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Index>(v.size()));
  b.outcome_residual = Eigen::Map<Eigen::VectorXd>(u.data(), static_cast<Index>(u.size()));
  b.treatment = b.v_perp;
  return b;
}

/// Noiseless linear panel: y = theta d + x beta + alpha_i, d = x gamma + c_i (+ optional noise).
PanelDataset exact_linear(Rng& rng, Index n, Index t, Index p, double d_noise, Eigen::VectorXd* beta_out = nullptr) {
  LinearPanelTruth truth;
  auto panel = linear_panel(rng, n, t, p, 0.0, &truth);
  panel.d += normal_vector(rng, n * t, d_noise);
  panel.y = truth.theta * panel.d + panel.x * truth.beta;
  for (Index i = 0; i < n; ++i) panel.y.segment(i * t, t).array() += normal(rng);
  if (beta_out) *beta_out = truth.beta;
  return panel;
}

DgpConfig dgp(int design, Index n, std::uint64_t seed) {
  DgpConfig cfg;
  cfg.design = design;
  cfg.n_units = n;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("names round trip") {
  for (auto a : {Approach::Cre, Approach::FdExact, Approach::HybridWg, Approach::HybridFd, Approach::ApproxWg,
                 Approach::ApproxFd}) {
    CHECK(parse_approach(to_string(a)) == a);
  }
  CHECK(parse_score("iv") == ScoreKind::IV);
  CHECK(parse_correction("unit-weighted") == VarianceCorrection::UnitWeighted);
  CHECK_THROWS_AS(parse_approach("gmm"), Error);
  CHECK(score_waves(Approach::HybridFd, 10) == 9);
  CHECK(score_waves(Approach::Cre, 10) == 10);
}

TEST_CASE("CRE treatment shift") {
  Eigen::VectorXd m_tilde = Eigen::VectorXd::Constant(6, 0.4);
  Eigen::VectorXd d(6);
  d << 0, 1, 0.8, 1, 1, 1;
  const auto m_star = cre_adjust(m_tilde, d, 3);
  CHECK((m_star.head(3).array() - 0.6).abs().maxCoeff() < 1e-15);
  CHECK((m_star.tail(3).array() - 1.0).abs().maxCoeff() < 1e-15);

  auto rng = make_rng(1, 0);
  const Eigen::VectorXd noisy = normal_vector(rng, 40);
  const Eigen::VectorXd treat = normal_vector(rng, 40);
  const Eigen::VectorXd adjusted = cre_adjust(noisy, treat, 8);
  CHECK((unit_means(adjusted, 8) - unit_means(treat, 8)).cwiseAbs().maxCoeff() < 1e-14);

  // d = m~ + c_i exactly: the shift recovers d.
  Eigen::VectorXd c(40);
  for (Index i = 0; i < 5; ++i) c.segment(i * 8, 8).setConstant(normal(rng));
  CHECK((treat + c - cre_adjust(treat, treat + c, 8)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("FD-exact nuisances") {
  auto rng = make_rng(2, 0);
  Eigen::VectorXd beta;
  const auto panel = exact_linear(rng, 30, 4, 2, 0.0, &beta);
  auto strategy = with_learner(Approach::FdExact, LearnerKind::Ols);
  const auto features = build_features(panel, strategy);
  CHECK(features.x_plain.cols() == 4);
  CHECK(features.fit_waves == 3);
  SUBCASE("linear outcome is recovered") {
    const auto fitted = learn_nuisances(features, strategy, 0);
    std::vector<Index> units(30);
    std::iota(units.begin(), units.end(), 0);
    const auto [l_hat, m_hat] = predict_score_space(features, fitted, units);
    const Eigen::VectorXd y_fd = difference_within(panel.y, 4);
    CHECK((l_hat - y_fd).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((m_hat - difference_within(panel.d, 4)).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("unit-constant treatment has no differenced variation") {
    auto flat = panel;
    for (Index i = 0; i < 30; ++i) flat.d.segment(i * 4, 4).setConstant(normal(rng));
    const auto f = build_features(flat, strategy);
    const auto fitted = learn_nuisances(f, strategy, 0);
    CHECK(f.d_fit.cwiseAbs().maxCoeff() == 0.0);
    CHECK(fitted.m.predict(f.x_plain).cwiseAbs().maxCoeff() < 1e-10);
    DmlOptions options;
    options.k_folds = 2;
    try {
      dml_estimate(flat, strategy, options);
      FAIL("expected DegenerateDenominator");
    } catch (const EstimationError& e) {
      CHECK(e.code() == ErrorCode::DegenerateDenominator);
      CHECK(e.partial().stage == "solve");
      CHECK(e.partial().k_folds == 2);
    }
  }
  SUBCASE("T = 1 is rejected") {
    auto one = linear_panel(rng, 10, 1, 2);
    for (auto a : {Approach::FdExact, Approach::HybridFd, Approach::ApproxFd}) {
      try {
        build_features(one, with_learner(a, LearnerKind::Ols));
        FAIL("expected SingleWave");
      } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::SingleWave);
      }
    }
  }
}

TEST_CASE("FD-exact LASSO fits the discontinuous design better than OLS") {
  const auto sim = generate_dgp(dgp(3, 1000, 77));
  const auto lasso = learn_nuisances(sim.panel, with_learner(Approach::FdExact, LearnerKind::Lasso), 1);
  const auto ols = learn_nuisances(sim.panel, with_learner(Approach::FdExact, LearnerKind::Ols), 1);
  MESSAGE("rmse_m lasso " << lasso.m.train_rmse() << " ols " << ols.m.train_rmse());
  CHECK(lasso.m.train_rmse() < ols.m.train_rmse());
  CHECK(build_features(sim.panel, with_learner(Approach::FdExact, LearnerKind::Lasso)).x_dictionary.cols() == 525);
}

TEST_CASE("hybrid and approximate nuisances") {
  auto rng = make_rng(3, 0);
  SUBCASE("a unit-constant shift in the levels fit is annihilated") {
    const auto panel = linear_panel(rng, 20, 5, 2);
    const auto strategy = with_learner(Approach::HybridWg, LearnerKind::Ols);
    std::vector<Index> units(20);
    std::iota(units.begin(), units.end(), 0);
    auto outcome_predictions = [&](const PanelDataset& p) {
      const auto f = build_features(p, strategy);
      return predict_score_space(f, learn_nuisances(f, strategy, 0), units).first;
    };
    auto shifted = panel;
    shifted.y += 3.0 * broadcast_unit_means(panel.x, 5).col(0) - 2.0 * broadcast_unit_means(panel.x, 5).col(1);
    CHECK((outcome_predictions(shifted) - outcome_predictions(panel)).cwiseAbs().maxCoeff() < 1e-9);
  }
  SUBCASE("hybrid-WG with OLS equals within-group OLS") {
    const auto panel = linear_panel(rng, 50, 4, 3);
    DmlOptions options;
    options.k_folds = 1;
    options.diagnostics = true;
    const auto report = dml_estimate(panel, with_learner(Approach::HybridWg, LearnerKind::Ols), options);
    CHECK(std::abs(report.theta - wg_ols_theta(panel)) < 1e-8);
    CHECK(report.diagnostics_mode);
  }
  SUBCASE("approximate and exact FD coincide for linear nuisances") {
    const auto panel = exact_linear(rng, 40, 4, 2, 0.0);
    std::vector<Index> units(40);
    std::iota(units.begin(), units.end(), 0);
    auto predictions = [&](Approach a) {
      const auto s = with_learner(a, LearnerKind::Ols);
      const auto f = build_features(panel, s);
      return predict_score_space(f, learn_nuisances(f, s, 0), units);
    };
    const auto approx = predictions(Approach::ApproxFd);
    const auto exact = predictions(Approach::FdExact);
    CHECK((approx.first - exact.first).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((approx.second - exact.second).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("unit-constant covariates leave only the transformed mean") {
    auto panel = linear_panel(rng, 30, 3, 2);
    panel.x = broadcast_unit_means(panel.x, 3);
    auto strategy = with_learner(Approach::ApproxWg, LearnerKind::Cart);
    strategy.l.tuning.reset();
    const auto f = build_features(panel, strategy);
    CHECK(f.x_plain.cwiseAbs().maxCoeff() < 1e-12);
    const auto fitted = learn_nuisances(f, strategy, 0);
    CHECK((fitted.l.predict(f.x_plain).array() - f.y_fit.mean()).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("score bundles") {
  auto rng = make_rng(4, 0);
  const auto panel = exact_linear(rng, 12, 3, 2, 0.7);
  const auto strategy = with_learner(Approach::FdExact, LearnerKind::Ols);
  const auto features = build_features(panel, strategy);
  std::vector<Index> units(12);
  std::iota(units.begin(), units.end(), 0);
  // Exact nuisances are the noiseless parts of y and d after differencing.
  const auto fitted = learn_nuisances(features, strategy, 0);
  const auto [l_hat, m_hat] = predict_score_space(features, fitted, units);
  const auto bundles = build_scores(features, units, l_hat, m_hat);
  REQUIRE(bundles.size() == 12);
  CHECK(bundles[3].v_perp.size() == 2);
  const auto solution = solve_theta(bundles, ScoreKind::PO);
  for (const auto& b : bundles) CHECK(b.residual(solution.theta).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(bundles[0].residual(0.0) == bundles[0].outcome_residual);
}

TEST_CASE("solving for theta") {
  SUBCASE("single unit ratio") {
    const std::vector<ScoreBundle> b{bundle({1, 1}, {2, 2})};
    CHECK(solve_theta(b, ScoreKind::PO).theta == 2.0);
  }
  SUBCASE("no treatment variation") {
    const std::vector<ScoreBundle> b{bundle({0, 0}, {2, 2}), bundle({0, 0}, {1, 0}, 0, 1)};
    try {
      solve_theta(b, ScoreKind::PO);
      FAIL("expected DegenerateDenominator");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::DegenerateDenominator);
    }
  }
  SUBCASE("two folds with equal denominators average") {
    const std::vector<ScoreBundle> b{bundle({1, 1}, {1, 1}, 1, 0), bundle({1, 1}, {3, 3}, 0, 1)};
    const auto s = solve_theta(b, ScoreKind::PO);
    CHECK(s.theta == 2.0);
    CHECK(s.fold_theta == std::vector<double>{1.0, 3.0});
    CHECK(s.fold_units == std::vector<Index>{1, 1});
  }
  SUBCASE("IV and NO moments") {
    ScoreBundle b = bundle({1, 2}, {3, 1});
    b.treatment << 2, 2;
    const auto iv = unit_moments(b, ScoreKind::IV, 0.5);
    CHECK(iv.a == 6.0);
    CHECK(iv.b == 5.0 + 0.5 * (1.0 + 0.0));
    const auto no = unit_moments(b, ScoreKind::NO);
    CHECK(no.a == 8.0);
    CHECK(no.b == 8.0);
  }
}

TEST_CASE("cluster-robust variance") {
  SUBCASE("iid unit scores with known variance") {
    auto rng = make_rng(5, 0);
    const double v = 2.25;
    std::vector<ScoreBundle> bundles;
    Eigen::VectorXd psi(4000);
    for (Index i = 0; i < 4000; ++i) {
      const double sign = (i % 2) ? 1.0 : -1.0;
      psi[i] = std::sqrt(v) * normal(rng);
      bundles.push_back(bundle({sign}, {sign * (0.3 + psi[i])}, static_cast<int>(i % 5), i));
    }
    const auto solution = solve_theta(bundles, ScoreKind::PO);
    const auto var = cluster_robust_variance(bundles, solution, ScoreKind::PO, VarianceCorrection::None);
    CHECK(var.j_hat == 1.0);
    CHECK(std::abs(var.sigma2 - v) < 0.1 * v);
    CHECK(var.sigma2 == doctest::Approx(sample_variance(psi)).epsilon(0.01));
    CHECK(var.se == doctest::Approx(std::sqrt(var.sigma2 / 4000.0)).epsilon(1e-14));
  }
  SUBCASE("zero residuals leave only the fold term") {
    std::vector<ScoreBundle> bundles;
    for (int i = 0; i < 6; ++i) bundles.push_back(bundle({1.0, -0.5}, {2.0, -1.0}, i % 2, i));
    const auto solution = solve_theta(bundles, ScoreKind::PO);
    const auto var = cluster_robust_variance(bundles, solution, ScoreKind::PO);
    CHECK(var.sandwich == 0.0);
    CHECK(var.sigma2 == var.correction);
  }
  SUBCASE("fold dispersion term") {
    const std::vector<ScoreBundle> bundles{bundle({1}, {1}, 0, 0), bundle({1}, {3}, 1, 1)};
    const auto solution = solve_theta(bundles, ScoreKind::PO);
    const auto var = cluster_robust_variance(bundles, solution, ScoreKind::PO, VarianceCorrection::Unweighted);
    CHECK(var.correction == 1.0);
    CHECK(var.sandwich == 1.0);
    CHECK(var.se == doctest::Approx(1.0));
    CHECK(cluster_robust_variance(bundles, solution, ScoreKind::PO, VarianceCorrection::None).correction == 0.0);
  }
  SUBCASE("duplicating every unit halves the squared se") {
    auto rng = make_rng(6, 0);
    std::vector<ScoreBundle> bundles;
    for (int i = 0; i < 50; ++i) {
      bundles.push_back(bundle({normal(rng), normal(rng)}, {normal(rng), normal(rng)}, i % 3, i));
    }
    auto doubled = bundles;
    for (auto b : bundles) {
      b.unit += 50;
      doubled.push_back(b);
    }
    const auto a = cluster_robust_variance(bundles, solve_theta(bundles, ScoreKind::PO), ScoreKind::PO);
    const auto d = cluster_robust_variance(doubled, solve_theta(doubled, ScoreKind::PO), ScoreKind::PO);
    CHECK(std::abs(d.se * d.se / (a.se * a.se) - 0.5) < 1e-10);
  }
}

TEST_CASE("end-to-end estimates") {
  const auto sim = generate_dgp(dgp(1, 1000, 2024));
  DmlOptions options;
  options.seed = 31;
  SUBCASE("linear design, OLS, CRE") {
    const auto report = dml_estimate(sim.panel, with_learner(Approach::Cre, LearnerKind::Ols), options);
    CHECK(std::abs(report.theta - 0.5) <= 0.05);
    CHECK(report.se > 0.0);
    CHECK(report.ci_low == doctest::Approx(report.theta - 1.959963984540054 * report.se));
    CHECK(report.fold_theta.size() == 5);
    CHECK(report.model_rmse >= 0.0);
    CHECK(report.moment_residual <= 1e-8);
    const auto j = report.to_json();
    CHECK(j["approach"] == "cre");
    CHECK(j["k_folds"] == 5);
    const auto again = dml_estimate(sim.panel, with_learner(Approach::Cre, LearnerKind::Ols), options);
    CHECK(again.to_json().dump() == j.dump());
    const auto csv = format_scores_csv(report);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 10000);
  }
  SUBCASE("the non-orthogonal score is pulled toward zero") {
    DmlOptions no = options;
    no.score = ScoreKind::NO;
    const auto s = with_learner(Approach::Cre, LearnerKind::Ols);
    const auto po = dml_estimate(sim.panel, s, options);
    const auto biased = dml_estimate(sim.panel, s, no);
    MESSAGE("PO " << po.theta << " NO " << biased.theta);
    CHECK(biased.biased_score);
    CHECK(std::abs(biased.theta) < std::abs(po.theta));
    CHECK(std::abs(biased.theta - 0.5) > 10 * po.se);
  }
  SUBCASE("the IV score agrees with PO") {
    DmlOptions iv = options;
    iv.score = ScoreKind::IV;
    const auto s = with_learner(Approach::FdExact, LearnerKind::Ols);
    const auto a = dml_estimate(sim.panel, s, options);
    const auto b = dml_estimate(sim.panel, s, iv);
    CHECK(std::abs(a.theta - b.theta) < 1e-10);
    CHECK(b.moment_residual <= 1e-8);
  }
  SUBCASE("stars") {
    EstimateReport r;
    r.p_value = 0.004;
    CHECK(r.stars() == "***");
    r.p_value = 0.03;
    CHECK(r.stars() == "**");
    r.p_value = 0.07;
    CHECK(r.stars() == "*");
    r.p_value = 0.2;
    CHECK(r.stars().empty());
  }
  SUBCASE("a single fold needs diagnostics mode") {
    DmlOptions one = options;
    one.k_folds = 1;
    CHECK_THROWS_AS(dml_estimate(sim.panel, with_learner(Approach::Cre, LearnerKind::Ols), one), Error);
  }
}

TEST_CASE("oracle nuisances") {
  const auto sim = generate_dgp(dgp(2, 300, 5));
  DmlOptions options;
  options.seed = 2;
  for (auto a : {Approach::Cre, Approach::FdExact, Approach::HybridWg}) {
    const auto r = dml_estimate_oracle(sim.panel, a, sim.oracle.l_true(), sim.oracle.m_true(), options);
    CAPTURE(to_string(a));
    CHECK(r.oracle);
    CHECK(std::abs(r.theta - 0.5) < 5 * r.se);
    CHECK(r.rmse_m == doctest::Approx(std::sqrt(to_score_space(a, sim.oracle.v, 10).squaredNorm() / (300.0 * score_waves(a, 10)))).epsilon(0.05));
  }
}
