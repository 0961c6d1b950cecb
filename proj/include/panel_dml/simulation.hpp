#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "panel_dml/dml.hpp"
#include "panel_dml/panel.hpp"

namespace panel_dml {

struct DgpConfig {
  int design = 1;  // 1 linear, 2 smooth non-linear, 3 discontinuous non-linear
  Index n_units = 1000;
  Index n_waves = 10;
  Index p = 30;
  double theta = 0.5;
  double a = 0.25;
  double b = 0.5;
  // Standard deviations of the random components.
  double x_sd = 5.0;
  double a_sd = 0.95;
  double c_sd = 1.0;
  double u_sd = 1.0;
  double v_sd = 1.0;
  /// Subsample units from a fixed finite population instead of drawing them directly.
  bool population_mode = false;
  Index population_size = 1'000'000;
  std::uint64_t population_seed = 0;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
};

/// Throws InvalidArgument for an unknown design or inconsistent sizes (p must be >= 3).
void check_dgp(const DgpConfig& config);

/// Nuisance functions of a design at scalar covariates x1, x3.
double dgp_l0(const DgpConfig& config, double x1, double x3);
double dgp_m0(const DgpConfig& config, double x1, double x3);

/// Ground truth attached to a generated panel, one entry per row unless noted.
struct DgpOracle {
  Eigen::VectorXd l0;
  Eigen::VectorXd m0;
  Eigen::VectorXd alpha;  // unit effect repeated over waves
  Eigen::VectorXd c;      // unit treatment effect repeated over waves
  Eigen::VectorXd u;
  Eigen::VectorXd v;
  double d_bar = 0.0;     // grand treatment mean entering alpha
  double theta = 0.0;

  /// E[d | x, c] = m0 + c.
  Eigen::VectorXd m_true() const { return m0 + c; }
  /// E[y | x, unit] = theta * (m0 + c) + l0 + alpha.
  Eigen::VectorXd l_true() const { return theta * m_true() + l0 + alpha; }
};

struct SimulatedPanel {
  PanelDataset panel;
  DgpOracle oracle;
};

SimulatedPanel generate_dgp(const DgpConfig& config);

struct ReplicationResult {
  int replication = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  double theta = 0.0;
  double se = 0.0;
  double rmse_l = 0.0;
  double rmse_m = 0.0;
  double model_rmse = 0.0;
  double moment_residual = 0.0;
  std::string error;
};

struct McSummary {
  std::string learner;
  std::string approach;
  std::string score;
  double theta0 = 0.0;
  int replications = 0;  // successful
  int failures = 0;
  double bias = 0.0;
  double rmse = 0.0;
  double se_sd_ratio = 0.0;
  double mean_se = 0.0;
  double sd_theta = 0.0;
  double mc_se = 0.0;  // sd_theta / sqrt(replications)
  double model_rmse = 0.0;
  double rmse_l = 0.0;
  double rmse_m = 0.0;
  double max_moment_residual = 0.0;
  std::vector<ReplicationResult> trace;

  std::string label() const { return learner + " / " + approach; }
  nlohmann::json to_json() const;
};

/// Aggregates replications; failed ones are counted and excluded.
McSummary summarize_replications(std::vector<ReplicationResult> results, double theta0);

struct MonteCarloOptions {
  int replications = 50;
  DmlOptions dml;
  /// Use the generator's true nuisances instead of learners.
  bool oracle = false;
  int threads = 0;
};

/// Replication r draws data with seed mix_seed(config.seed, r) and cross-fits with the same seed.
McSummary run_monte_carlo(const DgpConfig& config, const NuisanceStrategy& strategy, const MonteCarloOptions& options);

struct FormattedTable {
  std::string csv;
  std::string text;
};

/// Columns: Bias, RMSE, SE/SD, Model RMSE, RMSE_l, RMSE_m. Text uses 4 decimals.
FormattedTable emit_table(const std::vector<McSummary>& summaries);

/// Per-replication trace: replication, seed, ok, theta, se.
std::string format_trace_csv(const McSummary& summary);

}  // namespace panel_dml
