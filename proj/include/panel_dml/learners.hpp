#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "panel_dml/panel.hpp"

namespace panel_dml {

enum class LearnerKind { Ols, Lasso, Cart, Forest, Boosting };

const char* to_string(LearnerKind kind) noexcept;
/// Accepts ols, lasso, cart, rf, boost. Throws InvalidArgument otherwise.
LearnerKind parse_learner_kind(std::string_view name);

struct LassoParams {
  /// Explicit descending grid; empty means the default log-spaced path.
  std::vector<double> lambda_grid;
  int n_lambda = 100;
  double lambda_min_ratio = 1e-4;
  int cv_folds = 5;
  /// Expand covariates with cubic polynomials and pairwise interactions before fitting.
  bool use_dictionary = true;
  double tolerance = 1e-7;
  int max_sweeps = 10000;
};

struct CartParams {
  double cp = 0.01;
  int max_depth = 30;
  int min_bucket = 5;
};

struct ForestParams {
  int num_trees = 100;
  int max_depth = 0;  // 0: unlimited
  int min_node_size = 5;
  int mtry = 0;       // 0: all covariates
  bool bootstrap = true;
};

struct BoostParams {
  int nrounds = 100;
  int max_depth = 6;
  double l2_lambda = 1.0;
  double learning_rate = 0.1;
  int min_leaf = 1;
};

struct HyperRange {
  std::string name;
  double lo = 0.0;
  double hi = 0.0;
  bool integer = false;
};

struct TuningGrid {
  std::vector<HyperRange> ranges;
  int resolution = 5;
  int n_evals = 5;
  int cv_folds = 5;
};

struct LearnerSpec {
  LearnerKind kind = LearnerKind::Ols;
  LassoParams lasso;
  CartParams cart;
  ForestParams forest;
  BoostParams boost;
  std::optional<TuningGrid> tuning;

  std::string id() const { return to_string(kind); }
};

/// Spec with library defaults; tree learners carry their tuning ranges
/// (cp in [0.001, 0.05], depth in [2, 10], boosting lambda in [0, 5]).
LearnerSpec default_learner(LearnerKind kind);
std::optional<TuningGrid> default_tuning_grid(LearnerKind kind);

/// Hyperparameter access by name: cp, maxdepth, minbucket (cart); num_trees,
/// max_depth, min_node_size, mtry (rf); nrounds, max_depth, lambda, eta, min_leaf (boost);
/// cv_folds, n_lambda, lambda_min_ratio (lasso).
double get_hyperparameter(const LearnerSpec& spec, std::string_view name);
void set_hyperparameter(LearnerSpec& spec, std::string_view name, double value);

/// Throws InvalidArgument when a hyperparameter is outside its documented range.
void check_learner(const LearnerSpec& spec);

nlohmann::json to_json(const LearnerSpec& spec);
LearnerSpec learner_from_json(const nlohmann::json& j);

/// A fitted prediction rule.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual Eigen::VectorXd predict(const Eigen::MatrixXd& x) const = 0;
  virtual nlohmann::json to_json() const = 0;
};

class NuisanceModel {
 public:
  NuisanceModel() = default;
  NuisanceModel(std::shared_ptr<const Predictor> predictor, const Eigen::MatrixXd& x_train,
                const Eigen::VectorXd& y_train, std::string learner_id);

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const { return predictor_->predict(x); }
  double train_rmse() const { return train_rmse_; }
  const std::string& learner_id() const { return learner_id_; }
  nlohmann::json to_json() const;

  template <class T>
  const T* as() const {
    return dynamic_cast<const T*>(predictor_.get());
  }

 private:
  std::shared_ptr<const Predictor> predictor_;
  double train_rmse_ = 0.0;
  std::string learner_id_;
};

class LinearPredictor : public Predictor {
 public:
  double intercept = 0.0;
  Eigen::VectorXd coefficients;

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const override;
  nlohmann::json to_json() const override;
};

/// LASSO fit with the quantities needed to audit it on the standardized scale.
class LassoPredictor : public LinearPredictor {
 public:
  double lambda = 0.0;
  std::vector<double> lambda_grid;
  std::vector<double> cv_mse;
  /// Standardization of the training design (population sd); zero sd marks an excluded column.
  Eigen::VectorXd column_means;
  Eigen::VectorXd column_sds;
  double target_mean = 0.0;
  Eigen::VectorXd standardized_coefficients;

  nlohmann::json to_json() const override;
};

// ---------------------------------------------------------------------------
// Fitting entry points.

/// Least squares with intercept. Throws RankDeficientError naming the first dependent column.
NuisanceModel fit_ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

/// Row-to-block assignment for k-fold CV; rows sharing a group land in one block.
std::vector<int> cv_blocks(Index n_rows, int folds, std::uint64_t seed, std::span<const Index> groups = {});

/// Design statistics reused across targets that share a design and CV split.
class LassoDesign {
 public:
  LassoDesign(const Eigen::MatrixXd& x, std::vector<int> block_of_row, int n_blocks);

  Index n_rows() const { return n_rows_; }
  Index n_cols() const { return n_cols_; }
  int n_blocks() const { return static_cast<int>(blocks_.size()); }

 private:
  friend NuisanceModel fit_lasso_cv(const LassoDesign&, const Eigen::VectorXd&, const LassoParams&);

  struct Block {
    std::vector<Index> rows;
    Eigen::MatrixXd x;       // rows of the block, centered by the global column mean
    Eigen::VectorXd sum;     // column sums
    Eigen::MatrixXd gram;    // lower triangle of x'x
  };

  Index n_rows_ = 0;
  Index n_cols_ = 0;
  Eigen::VectorXd center_;
  std::vector<Block> blocks_;
};

/// Cross-validated LASSO: coordinate descent along a descending lambda path,
/// lambda chosen by minimum mean CV squared error, coefficients on the original scale.
NuisanceModel fit_lasso_cv(const LassoDesign& design, const Eigen::VectorXd& y, const LassoParams& params);
NuisanceModel fit_lasso_cv(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const LassoParams& params,
                           std::uint64_t seed, std::span<const Index> groups = {});

NuisanceModel fit_cart(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const CartParams& params);
NuisanceModel fit_random_forest(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const ForestParams& params,
                                std::uint64_t seed);
NuisanceModel fit_boosting(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const BoostParams& params);

/// Dispatches on spec.kind. Dictionary expansion is the caller's concern.
NuisanceModel fit_learner(const LearnerSpec& spec, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                          std::uint64_t seed, std::span<const Index> groups = {});

}  // namespace panel_dml
