#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "panel_dml/learners.hpp"

namespace panel_dml {

struct TuningTrial {
  int evaluation = 0;
  std::vector<double> values;  // one per grid range, in range order
  double cv_rmse = 0.0;
  std::vector<double> fold_rmse;
};

struct TuningResult {
  LearnerSpec best;
  double best_cv_rmse = 0.0;
  std::vector<TuningTrial> trials;

  nlohmann::json to_json() const;
};

/// Random grid search. Each of the n_evals evaluations draws `resolution` values per
/// hyperparameter (integer ranges without replacement when wide enough) and zips them
/// into `resolution` configurations, so resolution * n_evals configurations are scored
/// by mean CV RMSE over folds shared by every configuration. Ties keep the earlier one.
/// The returned spec carries the winning values and no tuning grid. Throws EmptyGrid.
TuningResult grid_search_tune(const LearnerSpec& spec, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                              std::uint64_t seed, std::span<const Index> groups = {}, int threads = 1);

}  // namespace panel_dml
