#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "panel_dml/learners.hpp"
#include "panel_dml/rng.hpp"

namespace panel_dml {

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
  double weight = 0.0;
};

/// Binary regression tree; rows with x[feature] <= threshold go left.
class RegressionTree {
 public:
  RegressionTree() = default;
  explicit RegressionTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

  double predict_row(const Eigen::MatrixXd& x, Index row) const;
  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  int leaf_count() const;
  int split_count() const { return static_cast<int>(nodes_.size()) - leaf_count(); }
  int depth() const;
  nlohmann::json to_json() const;

 private:
  std::vector<TreeNode> nodes_;
};

/// Per-column row orders sorted by value (ties by row index).
class PresortedColumns {
 public:
  explicit PresortedColumns(const Eigen::MatrixXd& x);
  const std::vector<int>& order(Index column) const { return orders_[static_cast<std::size_t>(column)]; }
  Index cols() const { return static_cast<Index>(orders_.size()); }

 private:
  std::vector<std::vector<int>> orders_;
};

struct GrowthParams {
  int max_depth = 30;            // <= 0: unlimited
  double min_split_weight = 2.0; // nodes lighter than this are not split
  double min_leaf_weight = 1.0;
  /// A split is kept only if its SSE reduction is at least cp * SSE(root).
  double cp = 0.0;
  /// Leaf value S/(W + l2_lambda); the split gain uses the same regularized score.
  double l2_lambda = 0.0;
  int mtry = 0;                  // <= 0 or >= p: every column eligible
};

/// Grows a tree level by level with greedy best splits. Candidate thresholds are
/// midpoints between consecutive distinct values; ties resolve to the lower column
/// index, then the lower threshold. `weights` are nonnegative case weights
/// (bootstrap counts); `rng` is required only when mtry restricts columns.
RegressionTree grow_tree(const Eigen::MatrixXd& x, const PresortedColumns& sorted, const Eigen::VectorXd& target,
                         std::span<const double> weights, const GrowthParams& params, Rng* rng = nullptr);

class TreePredictor : public Predictor {
 public:
  RegressionTree tree;

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const override { return tree.predict(x); }
  nlohmann::json to_json() const override;
};

class ForestPredictor : public Predictor {
 public:
  std::vector<RegressionTree> trees;

  /// Arithmetic mean of per_tree_predictions columns.
  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const override;
  Eigen::MatrixXd per_tree_predictions(const Eigen::MatrixXd& x) const;
  nlohmann::json to_json() const override;
};

class BoostedPredictor : public Predictor {
 public:
  double base = 0.0;
  double learning_rate = 0.1;
  std::vector<RegressionTree> trees;

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const override;
  /// Prediction after the first `rounds` trees.
  Eigen::VectorXd predict_rounds(const Eigen::MatrixXd& x, std::size_t rounds) const;
  nlohmann::json to_json() const override;
};

}  // namespace panel_dml
