#include "panel_dml/dml.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>

#include "panel_dml/parallel.hpp"
#include "panel_dml/rng.hpp"
#include "panel_dml/transforms.hpp"
#include "panel_dml/tuning.hpp"

namespace panel_dml {

const char* to_string(Approach approach) noexcept {
  switch (approach) {
    case Approach::Cre: return "cre";
    case Approach::FdExact: return "fd-exact";
    case Approach::HybridWg: return "hybrid-wg";
    case Approach::HybridFd: return "hybrid-fd";
    case Approach::ApproxWg: return "approx-wg";
    case Approach::ApproxFd: return "approx-fd";
  }
  return "?";
}

const char* to_string(ScoreKind score) noexcept {
  switch (score) {
    case ScoreKind::PO: return "po";
    case ScoreKind::IV: return "iv";
    case ScoreKind::NO: return "no";
  }
  return "?";
}

const char* to_string(VarianceCorrection correction) noexcept {
  switch (correction) {
    case VarianceCorrection::Unweighted: return "unweighted";
    case VarianceCorrection::UnitWeighted: return "unit-weighted";
    case VarianceCorrection::None: return "none";
  }
  return "?";
}

Approach parse_approach(std::string_view name) {
  for (auto a : {Approach::Cre, Approach::FdExact, Approach::HybridWg, Approach::HybridFd, Approach::ApproxWg,
                 Approach::ApproxFd}) {
    if (name == to_string(a)) return a;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown approach '" + std::string(name) +
                                              "' (expected cre|fd-exact|hybrid-wg|hybrid-fd|approx-wg|approx-fd)");
}

ScoreKind parse_score(std::string_view name) {
  for (auto s : {ScoreKind::PO, ScoreKind::IV, ScoreKind::NO}) {
    if (name == to_string(s)) return s;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown score '" + std::string(name) + "' (expected po|iv|no)");
}

VarianceCorrection parse_correction(std::string_view name) {
  for (auto c : {VarianceCorrection::Unweighted, VarianceCorrection::UnitWeighted, VarianceCorrection::None}) {
    if (name == to_string(c)) return c;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown variance correction '" + std::string(name) + "'");
}

bool uses_first_difference(Approach approach) noexcept {
  return approach == Approach::FdExact || approach == Approach::HybridFd || approach == Approach::ApproxFd;
}

Index score_waves(Approach approach, Index n_waves) {
  return uses_first_difference(approach) ? n_waves - 1 : n_waves;
}

// ---------------------------------------------------------------------------
// Scores

UnitMoments unit_moments(const ScoreBundle& bundle, ScoreKind score, double theta_po) {
  const auto& v = bundle.v_perp;
  const auto& u = bundle.outcome_residual;
  const auto& d = bundle.treatment;
  switch (score) {
    case ScoreKind::PO:
      return {v.squaredNorm(), v.dot(u)};
    case ScoreKind::IV:
      return {v.dot(d), v.dot(u) + v.dot(d - v) * theta_po};
    case ScoreKind::NO:
      return {d.squaredNorm(), d.dot(u)};
  }
  return {};
}

namespace {

struct FoldGroup {
  Index key = 0;  // smallest unit index
  std::vector<std::size_t> members;
};

std::vector<FoldGroup> group_by_fold(const std::vector<ScoreBundle>& bundles) {
  std::map<int, FoldGroup> by_label;
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    auto [it, fresh] = by_label.try_emplace(bundles[i].fold);
    if (fresh || bundles[i].unit < it->second.key) it->second.key = bundles[i].unit;
    it->second.members.push_back(i);
  }
  std::vector<FoldGroup> groups;
  for (auto& [label, g] : by_label) {
    std::sort(g.members.begin(), g.members.end(),
              [&](std::size_t a, std::size_t b) { return bundles[a].unit < bundles[b].unit; });
    groups.push_back(std::move(g));
  }
  std::sort(groups.begin(), groups.end(), [](const FoldGroup& a, const FoldGroup& b) { return a.key < b.key; });
  return groups;
}

struct FoldSums {
  double a = 0.0;
  double b = 0.0;
  Index n = 0;
};

std::vector<FoldSums> fold_sums(const std::vector<ScoreBundle>& bundles, const std::vector<FoldGroup>& groups,
                                ScoreKind score, double theta_po) {
  std::vector<FoldSums> out;
  for (const auto& g : groups) {
    FoldSums s;
    for (std::size_t i : g.members) {
      const auto m = unit_moments(bundles[i], score, theta_po);
      s.a += m.a;
      s.b += m.b;
    }
    s.n = static_cast<Index>(g.members.size());
    out.push_back(s);
  }
  return out;
}

double pooled(const std::vector<FoldSums>& sums, double FoldSums::*field) {
  double total = 0.0;
  for (const auto& s : sums) total += s.*field / static_cast<double>(s.n);
  return total / static_cast<double>(sums.size());
}

}  // namespace

ThetaSolution solve_theta(const std::vector<ScoreBundle>& bundles, ScoreKind score) {
  if (bundles.empty()) throw Error(ErrorCode::TooFewUnits, "no score bundles to solve");
  for (const auto& b : bundles) {
    if (b.v_perp.size() != b.outcome_residual.size() || b.v_perp.size() != b.treatment.size()) {
      throw Error(ErrorCode::DimensionMismatch, "score bundle lengths disagree for unit " + std::to_string(b.unit));
    }
  }
  const auto groups = group_by_fold(bundles);
  double scale = 0.0;
  for (const auto& b : bundles) scale += b.treatment.squaredNorm() + b.v_perp.squaredNorm();

  auto solve = [&](ScoreKind kind, double theta_po, ThetaSolution& out) {
    const auto sums = fold_sums(bundles, groups, kind, theta_po);
    for (std::size_t k = 0; k < sums.size(); ++k) {
      if (!(scale > 0.0) || !(std::abs(sums[k].a) > 1e-14 * scale)) {
        throw Error(ErrorCode::DegenerateDenominator,
                    std::string(to_string(kind)) + " score denominator vanishes in the fold starting at unit " +
                        std::to_string(groups[k].key));
      }
    }
    out.theta = pooled(sums, &FoldSums::b) / pooled(sums, &FoldSums::a);
    out.fold_theta.clear();
    out.fold_units.clear();
    for (const auto& s : sums) {
      out.fold_theta.push_back(s.b / s.a);
      out.fold_units.push_back(s.n);
    }
  };

  ThetaSolution solution;
  if (score == ScoreKind::IV) {
    ThetaSolution po;
    solve(ScoreKind::PO, 0.0, po);
    solve(ScoreKind::IV, po.theta, solution);
    solution.theta_po = po.theta;
  } else {
    solve(score, 0.0, solution);
    solution.theta_po = score == ScoreKind::PO ? solution.theta : 0.0;
  }
  return solution;
}

VarianceEstimate cluster_robust_variance(const std::vector<ScoreBundle>& bundles, const ThetaSolution& solution,
                                         ScoreKind score, VarianceCorrection correction) {
  const auto groups = group_by_fold(bundles);
  const auto k = static_cast<double>(groups.size());
  double j_sum = 0.0;
  double s_sum = 0.0;
  for (const auto& g : groups) {
    double a = 0.0;
    double psi_sq = 0.0;
    for (std::size_t i : g.members) {
      const auto m = unit_moments(bundles[i], score, solution.theta_po);
      a += m.a;
      const double psi = m.b - m.a * solution.theta;
      psi_sq += psi * psi;
    }
    const auto n_k = static_cast<double>(g.members.size());
    j_sum += a / n_k;
    s_sum += psi_sq / n_k;
  }
  VarianceEstimate out;
  out.j_hat = j_sum / k;
  out.sandwich = (s_sum / k) / (out.j_hat * out.j_hat);
  if (correction != VarianceCorrection::None && !solution.fold_theta.empty()) {
    double mean = 0.0;
    for (double t : solution.fold_theta) mean += t;
    mean /= static_cast<double>(solution.fold_theta.size());
    double dispersion = 0.0;
    for (std::size_t f = 0; f < solution.fold_theta.size(); ++f) {
      const double dev = solution.fold_theta[f] - mean;
      const double weight = correction == VarianceCorrection::UnitWeighted
                                ? static_cast<double>(solution.fold_units[f])
                                : 1.0;
      dispersion += weight * dev * dev;
    }
    out.correction = dispersion / static_cast<double>(solution.fold_theta.size());
  }
  out.sigma2 = out.sandwich + out.correction;
  out.se = std::sqrt(out.sigma2 / static_cast<double>(bundles.size()));
  return out;
}

double moment_residual(const std::vector<ScoreBundle>& bundles, const ThetaSolution& solution, ScoreKind score) {
  const auto groups = group_by_fold(bundles);
  double mean_psi = 0.0;
  double scale = 0.0;
  for (const auto& g : groups) {
    double psi = 0.0;
    double mag = 0.0;
    for (std::size_t i : g.members) {
      const auto m = unit_moments(bundles[i], score, solution.theta_po);
      psi += m.b - m.a * solution.theta;
      mag += std::abs(m.b) + std::abs(m.a * solution.theta);
    }
    const auto n_k = static_cast<double>(g.members.size());
    mean_psi += psi / n_k;
    scale += mag / n_k;
  }
  return scale > 0.0 ? std::abs(mean_psi) / scale : 0.0;
}

// ---------------------------------------------------------------------------
// Features and nuisance learning

Eigen::VectorXd cre_adjust(const Eigen::VectorXd& m_tilde, const Eigen::VectorXd& d, Index n_waves) {
  if (m_tilde.size() != d.size() || n_waves < 1 || d.size() % n_waves != 0) {
    throw Error(ErrorCode::DimensionMismatch, "cre_adjust: inconsistent block sizes");
  }
  return m_tilde + broadcast_unit_means(d, n_waves) - broadcast_unit_means(m_tilde, n_waves);
}

Eigen::VectorXd to_score_space(Approach approach, const Eigen::VectorXd& levels, Index n_waves) {
  switch (approach) {
    case Approach::Cre: return levels;
    case Approach::FdExact:
    case Approach::HybridFd:
    case Approach::ApproxFd: return difference_within(levels, n_waves);
    case Approach::HybridWg:
    case Approach::ApproxWg: return demean_within(levels, n_waves);
  }
  return levels;
}

namespace {

bool wants_dictionary(const LearnerSpec& spec) { return spec.kind == LearnerKind::Lasso && spec.lasso.use_dictionary; }

std::vector<Index> block_rows(std::span<const Index> units, Index per_unit) {
  std::vector<Index> rows;
  rows.reserve(units.size() * static_cast<std::size_t>(per_unit));
  for (Index u : units) {
    for (Index t = 0; t < per_unit; ++t) rows.push_back(u * per_unit + t);
  }
  return rows;
}

std::vector<Index> all_units(Index n) {
  std::vector<Index> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = i;
  return out;
}

std::vector<Index> row_groups(std::span<const Index> units, Index per_unit) {
  std::vector<Index> groups;
  groups.reserve(units.size() * static_cast<std::size_t>(per_unit));
  for (Index u : units) groups.insert(groups.end(), static_cast<std::size_t>(per_unit), u);
  return groups;
}

}  // namespace

const Eigen::MatrixXd& FeatureSet::features_for(const LearnerSpec& spec) const {
  return wants_dictionary(spec) ? x_dictionary : x_plain;
}

FeatureSet build_features(const PanelDataset& panel, const NuisanceStrategy& strategy) {
  const Index t = panel.n_waves;
  const Approach approach = strategy.approach;
  if (uses_first_difference(approach) && t < 2) {
    throw Error(ErrorCode::SingleWave, std::string(to_string(approach)) + " needs at least two waves");
  }
  if (panel.n_units < 1 || t < 1) throw Error(ErrorCode::TooFewUnits, "empty panel");
  const bool dictionary = wants_dictionary(strategy.l) || wants_dictionary(strategy.m);

  FeatureSet f;
  f.approach = approach;
  f.n_units = panel.n_units;
  f.n_waves = t;
  f.score_waves = score_waves(approach, t);
  f.d_levels = panel.d;
  f.y_score = to_score_space(approach, panel.y, t);
  f.d_score = to_score_space(approach, panel.d, t);
  switch (approach) {
    case Approach::Cre:
    case Approach::HybridWg:
    case Approach::HybridFd: {
      const Index p = panel.x.cols();
      f.fit_waves = t;
      f.y_fit = panel.y;
      f.d_fit = panel.d;
      f.x_plain.resize(panel.n_rows(), 2 * p);
      f.x_plain.leftCols(p) = panel.x;
      f.x_plain.rightCols(p) = broadcast_unit_means(panel.x, t);
      if (dictionary) f.x_dictionary = expand_dictionary(f.x_plain).matrix;
      break;
    }
    case Approach::FdExact: {
      const Index p = panel.x.cols();
      f.fit_waves = t - 1;
      f.y_fit = f.y_score;
      f.d_fit = f.d_score;
      f.x_plain.resize(panel.n_units * (t - 1), 2 * p);
      for (Index i = 0; i < panel.n_units; ++i) {
        f.x_plain.block(i * (t - 1), 0, t - 1, p) = panel.x.middleRows(i * t, t - 1);
        f.x_plain.block(i * (t - 1), p, t - 1, p) = panel.x.middleRows(i * t + 1, t - 1);
      }
      if (dictionary) f.x_dictionary = difference_within(expand_dictionary(panel.x).matrix, t);
      break;
    }
    case Approach::ApproxWg:
    case Approach::ApproxFd: {
      const bool fd = approach == Approach::ApproxFd;
      f.fit_waves = f.score_waves;
      f.y_fit = f.y_score;
      f.d_fit = f.d_score;
      f.x_plain = apply_transform(panel.x, t, fd);
      if (dictionary) f.x_dictionary = expand_dictionary(f.x_plain).matrix;
      break;
    }
  }
  return f;
}

FittedNuisances learn_nuisances(const FeatureSet& features, const NuisanceStrategy& strategy, std::uint64_t seed,
                                std::span<const Index> units) {
  std::vector<Index> owned;
  if (units.empty()) {
    owned = all_units(features.n_units);
    units = owned;
  }
  const auto rows = block_rows(units, features.fit_waves);
  const auto groups = row_groups(units, features.fit_waves);
  const Eigen::VectorXd y = features.y_fit(rows);
  const Eigen::VectorXd d = features.d_fit(rows);

  FittedNuisances out;
  out.approach = features.approach;
  out.l_spec = strategy.l;
  out.m_spec = strategy.m;
  const auto& xl = features.features_for(strategy.l);
  const auto& xm = features.features_for(strategy.m);
  const bool shared_lasso = strategy.l.kind == LearnerKind::Lasso && strategy.m.kind == LearnerKind::Lasso &&
                            &xl == &xm && strategy.l.lasso.cv_folds == strategy.m.lasso.cv_folds;
  if (shared_lasso) {
    const Eigen::MatrixXd x = xl(rows, Eigen::all);
    const int folds = strategy.l.lasso.cv_folds;
    const LassoDesign design(x, cv_blocks(x.rows(), folds, seed, groups), folds);
    out.l = fit_lasso_cv(design, y, strategy.l.lasso);
    out.m = fit_lasso_cv(design, d, strategy.m.lasso);
    return out;
  }
  {
    const Eigen::MatrixXd x = xl(rows, Eigen::all);
    out.l = fit_learner(strategy.l, x, y, seed, groups);
    if (&xl == &xm) {
      out.m = fit_learner(strategy.m, x, d, mix_seed(seed, 1), groups);
      return out;
    }
  }
  const Eigen::MatrixXd x = xm(rows, Eigen::all);
  out.m = fit_learner(strategy.m, x, d, mix_seed(seed, 1), groups);
  return out;
}

FittedNuisances learn_nuisances(const PanelDataset& train, const NuisanceStrategy& strategy, std::uint64_t seed) {
  return learn_nuisances(build_features(train, strategy), strategy, seed);
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> predict_score_space(const FeatureSet& features,
                                                                const FittedNuisances& nuisances,
                                                                std::span<const Index> units) {
  const auto rows = block_rows(units, features.fit_waves);
  const auto& xl = features.features_for(nuisances.l_spec);
  const auto& xm = features.features_for(nuisances.m_spec);
  Eigen::VectorXd l_fit = nuisances.l.predict(xl(rows, Eigen::all));
  Eigen::VectorXd m_fit = nuisances.m.predict(xm(rows, Eigen::all));
  const Index t = features.n_waves;
  switch (features.approach) {
    case Approach::Cre: {
      const Eigen::VectorXd d = features.d_levels(rows);
      return {std::move(l_fit), cre_adjust(m_fit, d, t)};
    }
    case Approach::HybridWg:
    case Approach::HybridFd: {
      const bool fd = features.approach == Approach::HybridFd;
      return {apply_transform(l_fit, t, fd), apply_transform(m_fit, t, fd)};
    }
    default:
      return {std::move(l_fit), std::move(m_fit)};
  }
}

std::vector<ScoreBundle> build_scores(const FeatureSet& features, std::span<const Index> units,
                                      const Eigen::VectorXd& l_hat, const Eigen::VectorXd& m_hat, int fold) {
  const Index w = features.score_waves;
  const auto n = static_cast<Index>(units.size());
  if (l_hat.size() != n * w || m_hat.size() != n * w) {
    throw Error(ErrorCode::DimensionMismatch, "predictions do not match the score-space rows of the units");
  }
  std::vector<ScoreBundle> out;
  out.reserve(units.size());
  for (Index k = 0; k < n; ++k) {
    const Index u = units[static_cast<std::size_t>(k)];
    if (u < 0 || u >= features.n_units) throw Error(ErrorCode::DimensionMismatch, "unit index out of range");
    ScoreBundle b;
    b.unit = u;
    b.fold = fold;
    b.treatment = features.d_score.segment(u * w, w);
    b.v_perp = b.treatment - m_hat.segment(k * w, w);
    b.outcome_residual = features.y_score.segment(u * w, w) - l_hat.segment(k * w, w);
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<ScoreBundle> build_scores(const PanelDataset& eval, const FittedNuisances& nuisances,
                                      const NuisanceStrategy& strategy) {
  NuisanceStrategy s = strategy;
  s.approach = nuisances.approach;
  const auto features = build_features(eval, s);
  const auto units = all_units(features.n_units);
  const auto [l_hat, m_hat] = predict_score_space(features, nuisances, units);
  return build_scores(features, units, l_hat, m_hat);
}

// ---------------------------------------------------------------------------
// Reports

std::string EstimateReport::stars() const {
  if (p_value < 0.01) return "***";
  if (p_value < 0.05) return "**";
  if (p_value < 0.10) return "*";
  return "";
}

nlohmann::json EstimateReport::to_json() const {
  return {{"theta", theta},
          {"se", se},
          {"ci95", {ci_low, ci_high}},
          {"p_value", p_value},
          {"stars", stars()},
          {"j_hat", j_hat},
          {"sandwich_variance", sandwich_variance},
          {"correction_variance", correction_variance},
          {"fold_theta", fold_theta},
          {"fold_units", fold_units},
          {"rmse_l", rmse_l},
          {"rmse_m", rmse_m},
          {"model_rmse", model_rmse},
          {"moment_residual", moment_residual},
          {"n_units", n_units},
          {"n_waves", n_waves},
          {"approach", to_string(approach)},
          {"score", to_string(score)},
          {"biased_score", biased_score},
          {"diagnostics_mode", diagnostics_mode},
          {"oracle", oracle},
          {"k_folds", k_folds},
          {"seed", seed},
          {"variance_correction", to_string(correction)},
          {"learner_l", learner_l},
          {"learner_m", learner_m},
          {"tuned_l", tuned_l},
          {"tuned_m", tuned_m},
          {"stage", stage}};
}

std::string format_scores_csv(const EstimateReport& report) {
  std::string out = "unit,wave,fold,v_perp,residual\n";
  char buf[64];
  auto num = [&](double v) {
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, end);
  };
  for (const auto& b : report.bundles) {
    const Eigen::VectorXd r = b.residual(report.theta);
    for (Index t = 0; t < b.v_perp.size(); ++t) {
      out += std::to_string(b.unit) + "," + std::to_string(t + 1) + "," + std::to_string(b.fold) + ",";
      num(b.v_perp[t]);
      out += ",";
      num(r[t]);
      out += "\n";
    }
  }
  return out;
}

namespace {

FoldPlan resolve_plan(Index n_units, const DmlOptions& options, const FoldPlan* plan) {
  if (plan != nullptr) {
    if (static_cast<Index>(plan->assignment.size()) != n_units) {
      throw Error(ErrorCode::DimensionMismatch, "fold plan does not cover every unit");
    }
    if (plan->k == 1 && !options.diagnostics) {
      throw Error(ErrorCode::InvalidArgument, "a single fold is only allowed in diagnostics mode");
    }
    return *plan;
  }
  if (options.k_folds < 1) throw Error(ErrorCode::InvalidArgument, "k_folds must be positive");
  if (options.k_folds == 1) {
    if (!options.diagnostics) throw Error(ErrorCode::InvalidArgument, "k_folds = 1 requires diagnostics mode");
    if (n_units < 2) throw Error(ErrorCode::TooFewUnits, "at least two units are required");
    FoldPlan single;
    single.k = 1;
    single.assignment.assign(static_cast<std::size_t>(n_units), 0);
    single.seed = options.seed;
    return single;
  }
  return make_fold_plan(n_units, options.k_folds, options.seed);
}

struct FoldWork {
  int label = 0;
  std::vector<Index> eval;
  std::vector<Index> train;
  std::uint64_t seed = 0;
};

std::vector<FoldWork> plan_work(const FoldPlan& plan, std::uint64_t seed) {
  std::map<int, FoldWork> by_label;
  const auto n = static_cast<Index>(plan.assignment.size());
  for (Index i = 0; i < n; ++i) {
    auto& w = by_label[plan.assignment[static_cast<std::size_t>(i)]];
    w.label = plan.assignment[static_cast<std::size_t>(i)];
    w.eval.push_back(i);
  }
  std::vector<FoldWork> work;
  for (auto& [label, w] : by_label) {
    if (by_label.size() == 1) {
      w.train = w.eval;
    } else {
      for (Index i = 0; i < n; ++i) {
        if (plan.assignment[static_cast<std::size_t>(i)] != label) w.train.push_back(i);
      }
    }
    w.seed = mix_seed(seed, static_cast<std::uint64_t>(w.eval.front()));
    work.push_back(std::move(w));
  }
  std::sort(work.begin(), work.end(), [](const FoldWork& a, const FoldWork& b) { return a.eval.front() < b.eval.front(); });
  return work;
}

double rms(const Eigen::VectorXd& v) { return v.size() ? std::sqrt(v.squaredNorm() / static_cast<double>(v.size())) : 0.0; }

/// Solves, infers and fills the report from bundles already in canonical order.
void finish_report(EstimateReport& report, std::vector<ScoreBundle> bundles, const DmlOptions& options) {
  report.stage = "solve";
  const auto solution = solve_theta(bundles, options.score);
  report.theta = solution.theta;
  report.fold_theta = solution.fold_theta;
  report.fold_units = solution.fold_units;
  report.stage = "variance";
  const auto variance = cluster_robust_variance(bundles, solution, options.score, options.correction);
  report.se = variance.se;
  report.j_hat = variance.j_hat;
  report.sandwich_variance = variance.sandwich;
  report.correction_variance = variance.correction;
  constexpr double z975 = 1.959963984540054;
  report.ci_low = report.theta - z975 * report.se;
  report.ci_high = report.theta + z975 * report.se;
  report.p_value = report.se > 0.0 ? std::erfc(std::abs(report.theta / report.se) / std::sqrt(2.0)) : 0.0;
  report.moment_residual = moment_residual(bundles, solution, options.score);

  // Model RMSE from fold-local residuals, averaged over folds.
  const auto groups = group_by_fold(bundles);
  double model = 0.0;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    double sq = 0.0;
    Index count = 0;
    for (std::size_t i : groups[k].members) {
      sq += bundles[i].residual(solution.fold_theta[k]).squaredNorm();
      count += bundles[i].v_perp.size();
    }
    model += std::sqrt(sq / static_cast<double>(count));
  }
  report.model_rmse = model / static_cast<double>(groups.size());
  report.bundles = std::move(bundles);
  report.stage = "complete";
}

EstimateReport base_report(const PanelDataset& panel, Approach approach, const DmlOptions& options) {
  EstimateReport report;
  report.n_units = panel.n_units;
  report.n_waves = panel.n_waves;
  report.approach = approach;
  report.score = options.score;
  report.biased_score = options.score == ScoreKind::NO;
  report.diagnostics_mode = options.diagnostics;
  report.seed = options.seed;
  report.correction = options.correction;
  report.stage = "setup";
  return report;
}

LearnerSpec maybe_tune(const LearnerSpec& spec, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                       std::span<const Index> groups, std::uint64_t seed, int threads) {
  if (!spec.tuning) return spec;
  return grid_search_tune(spec, x, y, seed, groups, threads).best;
}

NuisanceStrategy tune_strategy(const FeatureSet& features, const NuisanceStrategy& strategy,
                               std::span<const Index> units, std::uint64_t seed, int threads) {
  NuisanceStrategy tuned = strategy;
  if (!strategy.l.tuning && !strategy.m.tuning) return tuned;
  const auto rows = block_rows(units, features.fit_waves);
  const auto groups = row_groups(units, features.fit_waves);
  const Eigen::VectorXd y = features.y_fit(rows);
  const Eigen::VectorXd d = features.d_fit(rows);
  if (strategy.l.tuning) {
    tuned.l = maybe_tune(strategy.l, features.features_for(strategy.l)(rows, Eigen::all), y, groups, mix_seed(seed, 11), threads);
  }
  if (strategy.m.tuning) {
    tuned.m = maybe_tune(strategy.m, features.features_for(strategy.m)(rows, Eigen::all), d, groups, mix_seed(seed, 12), threads);
  }
  return tuned;
}

NuisanceStrategy strip_tuning(NuisanceStrategy s) {
  s.l.tuning.reset();
  s.m.tuning.reset();
  return s;
}

}  // namespace

EstimateReport dml_estimate(const PanelDataset& panel, const NuisanceStrategy& strategy, const DmlOptions& options,
                            const FoldPlan* plan) {
  EstimateReport report = base_report(panel, strategy.approach, options);
  report.learner_l = strategy.l.id();
  report.learner_m = strategy.m.id();
  try {
    check_learner(strategy.l);
    check_learner(strategy.m);
    const FoldPlan folds = resolve_plan(panel.n_units, options, plan);
    report.k_folds = folds.k;
    report.stage = "features";
    const FeatureSet features = build_features(panel, strategy);
    const auto work = plan_work(folds, options.seed);
    const int threads = resolve_threads(options.threads);

    NuisanceStrategy resolved = options.tune ? strategy : strip_tuning(strategy);
    if (options.tune && !options.tune_on_folds) {
      report.stage = "tuning";
      resolved = strip_tuning(tune_strategy(features, resolved, all_units(features.n_units), options.seed, threads));
    }
    report.tuned_l = to_json(resolved.l);
    report.tuned_m = to_json(resolved.m);

    report.stage = "cross-fitting";
    std::vector<std::vector<ScoreBundle>> fold_bundles(work.size());
    std::vector<double> rmse_l(work.size()), rmse_m(work.size());
    parallel_for(work.size(), threads, [&](std::size_t k) {
      const auto& w = work[k];
      NuisanceStrategy local = resolved;
      if (options.tune && options.tune_on_folds) local = strip_tuning(tune_strategy(features, resolved, w.train, w.seed, 1));
      const auto fitted = learn_nuisances(features, local, w.seed, w.train);
      const auto [l_eval, m_eval] = predict_score_space(features, fitted, w.eval);
      fold_bundles[k] = build_scores(features, w.eval, l_eval, m_eval, w.label);
      const auto [l_train, m_train] = predict_score_space(features, fitted, w.train);
      const auto train_rows = block_rows(w.train, features.score_waves);
      rmse_l[k] = rms(Eigen::VectorXd(features.y_score(train_rows)) - l_train);
      rmse_m[k] = rms(Eigen::VectorXd(features.d_score(train_rows)) - m_train);
    });
    double sum_l = 0.0, sum_m = 0.0;
    std::vector<ScoreBundle> bundles;
    for (std::size_t k = 0; k < work.size(); ++k) {
      sum_l += rmse_l[k];
      sum_m += rmse_m[k];
      for (auto& b : fold_bundles[k]) bundles.push_back(std::move(b));
    }
    report.rmse_l = sum_l / static_cast<double>(work.size());
    report.rmse_m = sum_m / static_cast<double>(work.size());
    finish_report(report, std::move(bundles), options);
  } catch (const EstimationError&) {
    throw;
  } catch (const Error& e) {
    throw EstimationError(e, report);
  }
  return report;
}

EstimateReport dml_estimate_oracle(const PanelDataset& panel, Approach approach, const Eigen::VectorXd& l_levels,
                                   const Eigen::VectorXd& m_levels, const DmlOptions& options, const FoldPlan* plan) {
  EstimateReport report = base_report(panel, approach, options);
  report.oracle = true;
  report.learner_l = "oracle";
  report.learner_m = "oracle";
  try {
    if (l_levels.size() != panel.n_rows() || m_levels.size() != panel.n_rows()) {
      throw Error(ErrorCode::DimensionMismatch, "oracle nuisances must have one value per row");
    }
    if (uses_first_difference(approach) && panel.n_waves < 2) {
      throw Error(ErrorCode::SingleWave, std::string(to_string(approach)) + " needs at least two waves");
    }
    const FoldPlan folds = resolve_plan(panel.n_units, options, plan);
    report.k_folds = folds.k;
    FeatureSet features;
    features.approach = approach;
    features.n_units = panel.n_units;
    features.n_waves = panel.n_waves;
    features.score_waves = score_waves(approach, panel.n_waves);
    features.fit_waves = features.score_waves;
    features.y_score = to_score_space(approach, panel.y, panel.n_waves);
    features.d_score = to_score_space(approach, panel.d, panel.n_waves);
    const Eigen::VectorXd l_hat = to_score_space(approach, l_levels, panel.n_waves);
    const Eigen::VectorXd m_hat = to_score_space(approach, m_levels, panel.n_waves);
    report.rmse_l = rms(features.y_score - l_hat);
    report.rmse_m = rms(features.d_score - m_hat);

    std::vector<ScoreBundle> bundles;
    for (const auto& w : plan_work(folds, options.seed)) {
      const auto rows = block_rows(w.eval, features.score_waves);
      auto part = build_scores(features, w.eval, l_hat(rows), m_hat(rows), w.label);
      for (auto& b : part) bundles.push_back(std::move(b));
    }
    finish_report(report, std::move(bundles), options);
  } catch (const Error& e) {
    throw EstimationError(e, report);
  }
  return report;
}

}  // namespace panel_dml
