#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "panel_dml/errors.hpp"
#include "panel_dml/learners.hpp"
#include "panel_dml/panel.hpp"

namespace panel_dml {

enum class Approach { Cre, FdExact, HybridWg, HybridFd, ApproxWg, ApproxFd };
enum class ScoreKind { PO, IV, NO };
enum class VarianceCorrection { Unweighted, UnitWeighted, None };

const char* to_string(Approach approach) noexcept;
const char* to_string(ScoreKind score) noexcept;
const char* to_string(VarianceCorrection correction) noexcept;
/// cre, fd-exact, hybrid-wg, hybrid-fd, approx-wg, approx-fd.
Approach parse_approach(std::string_view name);
/// po, iv, no.
ScoreKind parse_score(std::string_view name);
/// unweighted, unit-weighted, none.
VarianceCorrection parse_correction(std::string_view name);

/// Rows per unit in score space: T, or T-1 when the transform differences.
Index score_waves(Approach approach, Index n_waves);
bool uses_first_difference(Approach approach) noexcept;

struct NuisanceStrategy {
  Approach approach = Approach::Cre;
  LearnerSpec l;
  LearnerSpec m;
};

struct DmlOptions {
  ScoreKind score = ScoreKind::PO;
  int k_folds = 5;
  std::uint64_t seed = 0;
  int threads = 0;  // 0: resolve from PANEL_DML_THREADS / hardware
  /// Permits k_folds == 1 (nuisances trained and evaluated on every unit).
  bool diagnostics = false;
  /// Run grid search for learners with a tuning grid.
  bool tune = true;
  /// Tune inside each cross-fitting fold instead of once on the full sample.
  bool tune_on_folds = false;
  VarianceCorrection correction = VarianceCorrection::Unweighted;
};

/// Score-space rows of one unit: V-perp, the outcome residual at theta = 0
/// (partialled outcome) and the transformed treatment.
struct ScoreBundle {
  Index unit = 0;
  int fold = 0;
  Eigen::VectorXd v_perp;
  Eigen::VectorXd outcome_residual;
  Eigen::VectorXd treatment;

  /// r(theta) = outcome_residual - v_perp * theta.
  Eigen::VectorXd residual(double theta) const { return outcome_residual - v_perp * theta; }
};

/// Per-unit moment pieces psi_i(theta) = b_i - a_i * theta.
struct UnitMoments {
  double a = 0.0;
  double b = 0.0;
};

/// IV uses theta_po in its outcome residual (g = l - m * theta_po).
UnitMoments unit_moments(const ScoreBundle& bundle, ScoreKind score, double theta_po = 0.0);

struct ThetaSolution {
  double theta = 0.0;
  /// Fold-local estimates, ordered by each fold's smallest unit index.
  std::vector<double> fold_theta;
  std::vector<Index> fold_units;
  double theta_po = 0.0;
};

/// Pooled solution of (1/K) sum_k N_k^-1 sum_i psi_i = 0. Throws DegenerateDenominator.
ThetaSolution solve_theta(const std::vector<ScoreBundle>& bundles, ScoreKind score);

struct VarianceEstimate {
  double se = 0.0;
  double j_hat = 0.0;
  double sandwich = 0.0;    // J^-1 S J^-1
  double correction = 0.0;  // fold-dispersion term
  double sigma2 = 0.0;      // sandwich + correction
};

VarianceEstimate cluster_robust_variance(const std::vector<ScoreBundle>& bundles, const ThetaSolution& solution,
                                         ScoreKind score, VarianceCorrection correction = VarianceCorrection::Unweighted);

/// |(1/K) sum_k N_k^-1 sum_i psi_i(theta)| divided by the mean of |b_i| + |a_i theta|.
double moment_residual(const std::vector<ScoreBundle>& bundles, const ThetaSolution& solution, ScoreKind score);

/// m*_it = m~_it + D-bar_i - mean_t m~_it for unit-major blocks of n_waves rows.
Eigen::VectorXd cre_adjust(const Eigen::VectorXd& m_tilde, const Eigen::VectorXd& d, Index n_waves);

/// Maps a levels column into the score space of `approach` (identity, Q_WG or Q_FD).
Eigen::VectorXd to_score_space(Approach approach, const Eigen::VectorXd& levels, Index n_waves);

/// Learner inputs for one approach, built on a whole panel; rows stay unit-major.
struct FeatureSet {
  Approach approach = Approach::Cre;
  Index n_units = 0;
  Index n_waves = 0;        // waves in the source panel
  Index fit_waves = 0;      // rows per unit in the learner inputs
  Index score_waves = 0;    // rows per unit in score space
  Eigen::VectorXd y_fit;
  Eigen::VectorXd d_fit;
  Eigen::MatrixXd x_plain;
  Eigen::MatrixXd x_dictionary;  // empty unless a LASSO learner expands the dictionary
  Eigen::VectorXd y_score;
  Eigen::VectorXd d_score;
  Eigen::VectorXd d_levels;      // treatment in levels (for the CRE shift)

  const Eigen::MatrixXd& features_for(const LearnerSpec& spec) const;
};

/// Throws SingleWave for difference-based approaches when T < 2.
FeatureSet build_features(const PanelDataset& panel, const NuisanceStrategy& strategy);

struct FittedNuisances {
  Approach approach = Approach::Cre;
  NuisanceModel l;
  NuisanceModel m;
  LearnerSpec l_spec;
  LearnerSpec m_spec;
};

/// Fits l and m on the given units of `features` (all units when `units` is empty).
FittedNuisances learn_nuisances(const FeatureSet& features, const NuisanceStrategy& strategy, std::uint64_t seed,
                                std::span<const Index> units = {});

/// Convenience: builds features on `train` and fits on every unit.
FittedNuisances learn_nuisances(const PanelDataset& train, const NuisanceStrategy& strategy, std::uint64_t seed);

/// Score-space predictions (l-hat, m-hat) for the given units.
std::pair<Eigen::VectorXd, Eigen::VectorXd> predict_score_space(const FeatureSet& features,
                                                                const FittedNuisances& nuisances,
                                                                std::span<const Index> units);

/// Bundles for `units`, from score-space predictions aligned with those units' rows.
std::vector<ScoreBundle> build_scores(const FeatureSet& features, std::span<const Index> units,
                                      const Eigen::VectorXd& l_hat, const Eigen::VectorXd& m_hat, int fold = 0);

/// Convenience for a separate evaluation panel.
std::vector<ScoreBundle> build_scores(const PanelDataset& eval, const FittedNuisances& nuisances,
                                      const NuisanceStrategy& strategy);

struct EstimateReport {
  double theta = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double p_value = 1.0;
  double j_hat = 0.0;
  double sandwich_variance = 0.0;
  double correction_variance = 0.0;
  std::vector<double> fold_theta;
  std::vector<Index> fold_units;
  double rmse_l = 0.0;
  double rmse_m = 0.0;
  double model_rmse = 0.0;
  double moment_residual = 0.0;
  Index n_units = 0;
  Index n_waves = 0;
  Approach approach = Approach::Cre;
  ScoreKind score = ScoreKind::PO;
  bool biased_score = false;
  bool diagnostics_mode = false;
  bool oracle = false;
  int k_folds = 0;
  std::uint64_t seed = 0;
  VarianceCorrection correction = VarianceCorrection::Unweighted;
  std::string learner_l;
  std::string learner_m;
  nlohmann::json tuned_l;
  nlohmann::json tuned_m;
  /// Stage reached; "complete" for a finished estimate.
  std::string stage = "complete";
  std::vector<ScoreBundle> bundles;

  nlohmann::json to_json() const;
  /// Star marks for two-sided normal p-values below 0.10, 0.05, 0.01.
  std::string stars() const;
};

/// Carries whatever the pipeline had computed when it failed.
class EstimationError : public Error {
 public:
  EstimationError(const Error& cause, EstimateReport partial)
      : Error(cause.code(), std::string("estimation failed at stage ") + partial.stage + ": " + cause.what()),
        partial_(std::move(partial)) {}

  const EstimateReport& partial() const noexcept { return partial_; }

 private:
  EstimateReport partial_;
};

/// Cross-fitted estimate. A custom fold plan may be supplied; otherwise one is drawn from options.seed.
EstimateReport dml_estimate(const PanelDataset& panel, const NuisanceStrategy& strategy, const DmlOptions& options,
                            const FoldPlan* plan = nullptr);

/// Same pipeline with known nuisances in levels (l0 and m0 per row) instead of learners.
EstimateReport dml_estimate_oracle(const PanelDataset& panel, Approach approach, const Eigen::VectorXd& l_levels,
                                   const Eigen::VectorXd& m_levels, const DmlOptions& options,
                                   const FoldPlan* plan = nullptr);

/// Per-row score dump: unit, wave, fold, v_perp, residual at theta.
std::string format_scores_csv(const EstimateReport& report);

}  // namespace panel_dml
