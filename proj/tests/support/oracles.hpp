#pragma once

#include <vector>

#include <Eigen/Dense>

#include "panel_dml/panel.hpp"

namespace panel_dml::testing {

/// Classical within-group OLS slope on d (y and regressors demeaned within unit, no intercept).
double wg_ols_theta(const PanelDataset& panel);

/// Greedy regression tree SSE by exhaustive search at every node: each candidate split is
/// scored by recomputing both child SSEs from scratch.
double brute_force_greedy_sse(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int max_depth);

/// LASSO on an explicit design by accelerated proximal gradient:
/// minimize (1/2n)||y - Xb||^2 + lambda ||b||_1 (no intercept; caller centers).
Eigen::VectorXd lasso_fista(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda, int iterations = 200000);

struct LassoCvScan {
  std::vector<double> cv_mse;
  std::size_t best = 0;
  Eigen::VectorXd coefficients;  // original scale, at the selected lambda
  double intercept = 0.0;
};

/// CV over a lambda grid using given row blocks; each fold standardizes its own training rows.
LassoCvScan lasso_cv_reference(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const std::vector<double>& grid,
                               const std::vector<int>& blocks, int n_blocks);

/// Unbiased sample variance.
double sample_variance(const Eigen::VectorXd& v);

}  // namespace panel_dml::testing
