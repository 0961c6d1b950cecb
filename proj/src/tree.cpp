#include "panel_dml/tree.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "panel_dml/errors.hpp"

namespace panel_dml {

double RegressionTree::predict_row(const Eigen::MatrixXd& x, Index row) const {
  int n = 0;
  while (nodes_[static_cast<std::size_t>(n)].feature >= 0) {
    const auto& node = nodes_[static_cast<std::size_t>(n)];
    n = x(row, node.feature) <= node.threshold ? node.left : node.right;
  }
  return nodes_[static_cast<std::size_t>(n)].value;
}

Eigen::VectorXd RegressionTree::predict(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd out(x.rows());
  for (Index r = 0; r < x.rows(); ++r) out[r] = predict_row(x, r);
  return out;
}

int RegressionTree::leaf_count() const {
  return static_cast<int>(std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.feature < 0; }));
}

int RegressionTree::depth() const {
  if (nodes_.empty()) return 0;
  std::vector<int> depth(nodes_.size(), 0);
  int deepest = 0;
  for (std::size_t n = 0; n < nodes_.size(); ++n) {
    if (nodes_[n].feature < 0) continue;
    for (int child : {nodes_[n].left, nodes_[n].right}) {
      depth[static_cast<std::size_t>(child)] = depth[n] + 1;
      deepest = std::max(deepest, depth[n] + 1);
    }
  }
  return deepest;
}

nlohmann::json RegressionTree::to_json() const {
  auto node_json = [&](auto&& self, int n) -> nlohmann::json {
    const auto& node = nodes_[static_cast<std::size_t>(n)];
    if (node.feature < 0) return {{"value", node.value}, {"weight", node.weight}};
    return {{"feature", node.feature},
            {"threshold", node.threshold},
            {"left", self(self, node.left)},
            {"right", self(self, node.right)}};
  };
  return nodes_.empty() ? nlohmann::json::object() : node_json(node_json, 0);
}

PresortedColumns::PresortedColumns(const Eigen::MatrixXd& x) {
  orders_.resize(static_cast<std::size_t>(x.cols()));
  for (Index j = 0; j < x.cols(); ++j) {
    auto& order = orders_[static_cast<std::size_t>(j)];
    order.resize(static_cast<std::size_t>(x.rows()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return x(a, j) < x(b, j); });
  }
}

namespace {

struct Candidate {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
};

double node_score(double sum, double weight, double lambda) { return sum * sum / (weight + lambda); }

}  // namespace

RegressionTree grow_tree(const Eigen::MatrixXd& x, const PresortedColumns& sorted, const Eigen::VectorXd& target,
                         std::span<const double> weights, const GrowthParams& params, Rng* rng) {
  const Index n = x.rows();
  const Index p = x.cols();
  if (target.size() != n || static_cast<Index>(weights.size()) != n || sorted.cols() != p) {
    throw Error(ErrorCode::DimensionMismatch, "tree inputs disagree in size");
  }
  const int max_depth = params.max_depth <= 0 ? std::numeric_limits<int>::max() : params.max_depth;
  const bool restrict_columns = params.mtry > 0 && params.mtry < p;
  if (restrict_columns && rng == nullptr) throw Error(ErrorCode::InvalidArgument, "mtry sampling needs a generator");
  const double lambda = params.l2_lambda;

  std::vector<TreeNode> nodes(1);
  std::vector<double> node_sum(1, 0.0);
  std::vector<int> node_of(static_cast<std::size_t>(n), -1);
  double root_sq = 0.0;
  for (Index r = 0; r < n; ++r) {
    const double w = weights[static_cast<std::size_t>(r)];
    if (w <= 0.0) continue;
    node_of[static_cast<std::size_t>(r)] = 0;
    nodes[0].weight += w;
    node_sum[0] += w * target[r];
    root_sq += w * target[r] * target[r];
  }
  if (nodes[0].weight <= 0.0) throw Error(ErrorCode::InvalidArgument, "tree needs positive total weight");
  nodes[0].value = node_sum[0] / (nodes[0].weight + lambda);
  const double root_sse = std::max(0.0, root_sq - node_sum[0] * node_sum[0] / nodes[0].weight);
  const double min_gain = std::max(params.cp * root_sse, 1e-12 * root_sse);

  auto splittable = [&](int node, int depth) {
    const double w = nodes[static_cast<std::size_t>(node)].weight;
    return depth < max_depth && w >= params.min_split_weight && w >= 2.0 * params.min_leaf_weight && root_sse > 0.0;
  };

  std::vector<int> active;
  if (splittable(0, 0)) active.push_back(0);

  std::vector<std::vector<int>> rows_by_column(static_cast<std::size_t>(p));
  for (Index j = 0; j < p; ++j) {
    auto& rows = rows_by_column[static_cast<std::size_t>(j)];
    for (int r : sorted.order(j)) {
      if (node_of[static_cast<std::size_t>(r)] >= 0) rows.push_back(r);
    }
  }

  std::vector<int> slot_of(1, -1);
  std::vector<int> column_ids(static_cast<std::size_t>(p));
  std::iota(column_ids.begin(), column_ids.end(), 0);

  for (int depth = 0; !active.empty(); ++depth) {
    const std::size_t slots = active.size();
    slot_of.assign(nodes.size(), -1);
    for (std::size_t s = 0; s < slots; ++s) slot_of[static_cast<std::size_t>(active[s])] = static_cast<int>(s);

    std::vector<char> allowed;
    if (restrict_columns) {
      allowed.assign(slots * static_cast<std::size_t>(p), 0);
      for (std::size_t s = 0; s < slots; ++s) {
        for (int m = 0; m < params.mtry; ++m) {
          const auto pick = m + static_cast<std::size_t>(uniform_index(*rng, static_cast<std::uint64_t>(p - m)));
          std::swap(column_ids[static_cast<std::size_t>(m)], column_ids[pick]);
          allowed[s * static_cast<std::size_t>(p) + static_cast<std::size_t>(column_ids[static_cast<std::size_t>(m)])] = 1;
        }
      }
    }

    std::vector<Candidate> best(slots);
    std::vector<double> left_w(slots), left_s(slots), last(slots);
    std::vector<char> seen(slots);
    for (Index j = 0; j < p; ++j) {
      std::fill(left_w.begin(), left_w.end(), 0.0);
      std::fill(left_s.begin(), left_s.end(), 0.0);
      std::fill(seen.begin(), seen.end(), 0);
      for (int r : rows_by_column[static_cast<std::size_t>(j)]) {
        const auto s = static_cast<std::size_t>(slot_of[static_cast<std::size_t>(node_of[static_cast<std::size_t>(r)])]);
        if (restrict_columns && !allowed[s * static_cast<std::size_t>(p) + static_cast<std::size_t>(j)]) continue;
        const double v = x(r, j);
        const auto& node = nodes[static_cast<std::size_t>(active[s])];
        if (seen[s] && v > last[s]) {
          const double right_w = node.weight - left_w[s];
          if (left_w[s] >= params.min_leaf_weight && right_w >= params.min_leaf_weight) {
            const double total_s = node_sum[static_cast<std::size_t>(active[s])];
            const double gain = node_score(left_s[s], left_w[s], lambda) +
                                node_score(total_s - left_s[s], right_w, lambda) -
                                node_score(total_s, node.weight, lambda);
            if (gain > best[s].gain) {
              double threshold = last[s] + 0.5 * (v - last[s]);
              if (!(threshold < v)) threshold = last[s];
              best[s] = {gain, static_cast<int>(j), threshold};
            }
          }
        }
        const double w = weights[static_cast<std::size_t>(r)];
        left_w[s] += w;
        left_s[s] += w * target[r];
        last[s] = v;
        seen[s] = 1;
      }
    }

    // Apply accepted splits.
    std::vector<char> was_split(slots, 0);
    for (std::size_t s = 0; s < slots; ++s) {
      if (best[s].feature < 0 || best[s].gain < min_gain || best[s].gain <= 0.0) continue;
      const int parent = active[s];
      const int left = static_cast<int>(nodes.size());
      nodes.emplace_back();
      nodes.emplace_back();
      node_sum.push_back(0.0);
      node_sum.push_back(0.0);
      auto& node = nodes[static_cast<std::size_t>(parent)];
      node.feature = best[s].feature;
      node.threshold = best[s].threshold;
      node.left = left;
      node.right = left + 1;
      was_split[s] = 1;
    }
    slot_of.resize(nodes.size(), -1);
    for (Index r = 0; r < n; ++r) {
      int& owner = node_of[static_cast<std::size_t>(r)];
      if (owner < 0) continue;
      const int s = slot_of[static_cast<std::size_t>(owner)];
      if (s < 0 || !was_split[static_cast<std::size_t>(s)]) continue;
      const auto& node = nodes[static_cast<std::size_t>(owner)];
      owner = x(r, node.feature) <= node.threshold ? node.left : node.right;
      const double w = weights[static_cast<std::size_t>(r)];
      nodes[static_cast<std::size_t>(owner)].weight += w;
      node_sum[static_cast<std::size_t>(owner)] += w * target[r];
    }

    std::vector<int> next;
    for (std::size_t s = 0; s < slots; ++s) {
      if (!was_split[s]) continue;
      const auto& node = nodes[static_cast<std::size_t>(active[s])];
      for (int child : {node.left, node.right}) {
        auto& c = nodes[static_cast<std::size_t>(child)];
        c.value = node_sum[static_cast<std::size_t>(child)] / (c.weight + lambda);
        if (splittable(child, depth + 1)) next.push_back(child);
      }
    }
    active = std::move(next);
    if (active.empty()) break;

    std::vector<char> keep(nodes.size(), 0);
    for (int a : active) keep[static_cast<std::size_t>(a)] = 1;
    for (auto& rows : rows_by_column) {
      std::erase_if(rows, [&](int r) { return !keep[static_cast<std::size_t>(node_of[static_cast<std::size_t>(r)])]; });
    }
  }
  return RegressionTree(std::move(nodes));
}

nlohmann::json TreePredictor::to_json() const { return {{"type", "cart"}, {"tree", tree.to_json()}}; }

Eigen::MatrixXd ForestPredictor::per_tree_predictions(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd out(x.rows(), static_cast<Index>(trees.size()));
  for (std::size_t t = 0; t < trees.size(); ++t) out.col(static_cast<Index>(t)) = trees[t].predict(x);
  return out;
}

Eigen::VectorXd ForestPredictor::predict(const Eigen::MatrixXd& x) const {
  return per_tree_predictions(x).rowwise().mean();
}

nlohmann::json ForestPredictor::to_json() const {
  auto list = nlohmann::json::array();
  for (const auto& tree : trees) list.push_back(tree.to_json());
  return {{"type", "rf"}, {"trees", std::move(list)}};
}

Eigen::VectorXd BoostedPredictor::predict_rounds(const Eigen::MatrixXd& x, std::size_t rounds) const {
  Eigen::VectorXd out = Eigen::VectorXd::Constant(x.rows(), base);
  for (std::size_t t = 0; t < std::min(rounds, trees.size()); ++t) out += learning_rate * trees[t].predict(x);
  return out;
}

Eigen::VectorXd BoostedPredictor::predict(const Eigen::MatrixXd& x) const { return predict_rounds(x, trees.size()); }

nlohmann::json BoostedPredictor::to_json() const {
  auto list = nlohmann::json::array();
  for (const auto& tree : trees) list.push_back(tree.to_json());
  return {{"type", "boost"}, {"base", base}, {"learning_rate", learning_rate}, {"trees", std::move(list)}};
}

}  // namespace panel_dml
