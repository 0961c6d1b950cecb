#include "panel_dml/learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "panel_dml/errors.hpp"
#include "panel_dml/parallel.hpp"
#include "panel_dml/rng.hpp"
#include "panel_dml/tree.hpp"

namespace panel_dml {

const char* to_string(LearnerKind kind) noexcept {
  switch (kind) {
    case LearnerKind::Ols: return "ols";
    case LearnerKind::Lasso: return "lasso";
    case LearnerKind::Cart: return "cart";
    case LearnerKind::Forest: return "rf";
    case LearnerKind::Boosting: return "boost";
  }
  return "?";
}

LearnerKind parse_learner_kind(std::string_view name) {
  for (auto kind : {LearnerKind::Ols, LearnerKind::Lasso, LearnerKind::Cart, LearnerKind::Forest, LearnerKind::Boosting}) {
    if (name == to_string(kind)) return kind;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown learner '" + std::string(name) + "' (expected ols|lasso|cart|rf|boost)");
}

std::optional<TuningGrid> default_tuning_grid(LearnerKind kind) {
  TuningGrid grid;
  switch (kind) {
    case LearnerKind::Cart:
      grid.ranges = {{"cp", 0.001, 0.05, false}, {"maxdepth", 2, 10, true}};
      return grid;
    case LearnerKind::Forest:
      grid.ranges = {{"max_depth", 2, 10, true}};
      return grid;
    case LearnerKind::Boosting:
      grid.ranges = {{"lambda", 0, 5, false}, {"max_depth", 2, 10, true}};
      return grid;
    default:
      return std::nullopt;
  }
}

LearnerSpec default_learner(LearnerKind kind) {
  LearnerSpec spec;
  spec.kind = kind;
  spec.tuning = default_tuning_grid(kind);
  return spec;
}

namespace {

struct ParamRef {
  double* real = nullptr;
  int* integer = nullptr;
};

ParamRef lookup(LearnerSpec& spec, std::string_view name) {
  switch (spec.kind) {
    case LearnerKind::Cart:
      if (name == "cp") return {&spec.cart.cp, nullptr};
      if (name == "maxdepth" || name == "max_depth") return {nullptr, &spec.cart.max_depth};
      if (name == "minbucket" || name == "min_bucket") return {nullptr, &spec.cart.min_bucket};
      break;
    case LearnerKind::Forest:
      if (name == "num_trees") return {nullptr, &spec.forest.num_trees};
      if (name == "max_depth") return {nullptr, &spec.forest.max_depth};
      if (name == "min_node_size") return {nullptr, &spec.forest.min_node_size};
      if (name == "mtry") return {nullptr, &spec.forest.mtry};
      break;
    case LearnerKind::Boosting:
      if (name == "nrounds") return {nullptr, &spec.boost.nrounds};
      if (name == "max_depth") return {nullptr, &spec.boost.max_depth};
      if (name == "lambda") return {&spec.boost.l2_lambda, nullptr};
      if (name == "eta") return {&spec.boost.learning_rate, nullptr};
      if (name == "min_leaf") return {nullptr, &spec.boost.min_leaf};
      break;
    case LearnerKind::Lasso:
      if (name == "cv_folds") return {nullptr, &spec.lasso.cv_folds};
      if (name == "n_lambda") return {nullptr, &spec.lasso.n_lambda};
      if (name == "lambda_min_ratio") return {&spec.lasso.lambda_min_ratio, nullptr};
      break;
    case LearnerKind::Ols:
      break;
  }
  throw Error(ErrorCode::InvalidArgument,
              "learner " + spec.id() + " has no hyperparameter '" + std::string(name) + "'");
}

}  // namespace

double get_hyperparameter(const LearnerSpec& spec, std::string_view name) {
  auto ref = lookup(const_cast<LearnerSpec&>(spec), name);
  return ref.real ? *ref.real : static_cast<double>(*ref.integer);
}

void set_hyperparameter(LearnerSpec& spec, std::string_view name, double value) {
  auto ref = lookup(spec, name);
  if (ref.real) {
    *ref.real = value;
  } else {
    *ref.integer = static_cast<int>(std::lround(value));
  }
}

void check_learner(const LearnerSpec& spec) {
  auto require = [&](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::InvalidArgument, spec.id() + ": " + what);
  };
  switch (spec.kind) {
    case LearnerKind::Ols:
      break;
    case LearnerKind::Lasso: {
      const auto& p = spec.lasso;
      require(p.cv_folds >= 2, "cv_folds must be at least 2");
      require(p.n_lambda >= 1, "n_lambda must be positive");
      require(p.lambda_min_ratio > 0 && p.lambda_min_ratio < 1, "lambda_min_ratio must lie in (0, 1)");
      require(p.tolerance > 0 && p.max_sweeps >= 1, "convergence controls must be positive");
      for (std::size_t i = 0; i < p.lambda_grid.size(); ++i) {
        require(std::isfinite(p.lambda_grid[i]) && p.lambda_grid[i] >= 0, "lambda grid values must be finite and >= 0");
        require(i == 0 || p.lambda_grid[i] <= p.lambda_grid[i - 1], "lambda grid must be sorted descending");
      }
      break;
    }
    case LearnerKind::Cart:
      require(spec.cart.cp >= 0, "cp must be >= 0");
      require(spec.cart.max_depth >= 1, "maxdepth must be >= 1");
      require(spec.cart.min_bucket >= 1, "minbucket must be >= 1");
      break;
    case LearnerKind::Forest:
      require(spec.forest.num_trees >= 1, "num_trees must be >= 1");
      require(spec.forest.max_depth >= 0, "max_depth must be >= 0");
      require(spec.forest.min_node_size >= 1, "min_node_size must be >= 1");
      require(spec.forest.mtry >= 0, "mtry must be >= 0");
      break;
    case LearnerKind::Boosting:
      require(spec.boost.nrounds >= 1, "nrounds must be >= 1");
      require(spec.boost.max_depth >= 1, "max_depth must be >= 1");
      require(spec.boost.l2_lambda >= 0, "lambda must be >= 0");
      require(spec.boost.learning_rate > 0 && spec.boost.learning_rate <= 1, "eta must lie in (0, 1]");
      require(spec.boost.min_leaf >= 1, "min_leaf must be >= 1");
      break;
  }
  if (spec.tuning) {
    require(!spec.tuning->ranges.empty(), "tuning grid is empty");
    require(spec.tuning->resolution >= 1 && spec.tuning->n_evals >= 1, "resolution and n_evals must be positive");
    require(spec.tuning->cv_folds >= 2, "tuning cv_folds must be at least 2");
    for (const auto& r : spec.tuning->ranges) {
      require(r.lo <= r.hi, "tuning range has lo > hi");
      (void)get_hyperparameter(spec, r.name);
    }
  }
}

nlohmann::json to_json(const LearnerSpec& spec) {
  nlohmann::json j{{"kind", spec.id()}};
  switch (spec.kind) {
    case LearnerKind::Ols:
      break;
    case LearnerKind::Lasso:
      j["lambda_grid"] = spec.lasso.lambda_grid;
      j["n_lambda"] = spec.lasso.n_lambda;
      j["lambda_min_ratio"] = spec.lasso.lambda_min_ratio;
      j["cv_folds"] = spec.lasso.cv_folds;
      j["use_dictionary"] = spec.lasso.use_dictionary;
      j["tolerance"] = spec.lasso.tolerance;
      j["max_sweeps"] = spec.lasso.max_sweeps;
      break;
    case LearnerKind::Cart:
      j["cp"] = spec.cart.cp;
      j["maxdepth"] = spec.cart.max_depth;
      j["minbucket"] = spec.cart.min_bucket;
      break;
    case LearnerKind::Forest:
      j["num_trees"] = spec.forest.num_trees;
      j["max_depth"] = spec.forest.max_depth;
      j["min_node_size"] = spec.forest.min_node_size;
      j["mtry"] = spec.forest.mtry;
      j["bootstrap"] = spec.forest.bootstrap;
      break;
    case LearnerKind::Boosting:
      j["nrounds"] = spec.boost.nrounds;
      j["max_depth"] = spec.boost.max_depth;
      j["lambda"] = spec.boost.l2_lambda;
      j["eta"] = spec.boost.learning_rate;
      j["min_leaf"] = spec.boost.min_leaf;
      break;
  }
  if (spec.tuning) {
    auto ranges = nlohmann::json::array();
    for (const auto& r : spec.tuning->ranges) {
      ranges.push_back({{"name", r.name}, {"lo", r.lo}, {"hi", r.hi}, {"integer", r.integer}});
    }
    j["tuning"] = {{"ranges", std::move(ranges)},
                   {"resolution", spec.tuning->resolution},
                   {"n_evals", spec.tuning->n_evals},
                   {"cv_folds", spec.tuning->cv_folds}};
  }
  return j;
}

LearnerSpec learner_from_json(const nlohmann::json& j) {
  LearnerSpec spec;
  spec.kind = parse_learner_kind(j.at("kind").get<std::string>());
  auto& lasso = spec.lasso;
  lasso.lambda_grid = j.value("lambda_grid", lasso.lambda_grid);
  lasso.n_lambda = j.value("n_lambda", lasso.n_lambda);
  lasso.lambda_min_ratio = j.value("lambda_min_ratio", lasso.lambda_min_ratio);
  lasso.use_dictionary = j.value("use_dictionary", lasso.use_dictionary);
  lasso.tolerance = j.value("tolerance", lasso.tolerance);
  lasso.max_sweeps = j.value("max_sweeps", lasso.max_sweeps);
  for (const char* key : {"cp", "maxdepth", "minbucket", "num_trees", "max_depth", "min_node_size", "mtry", "nrounds",
                          "lambda", "eta", "min_leaf", "cv_folds"}) {
    if (!j.contains(key)) continue;
    try {
      set_hyperparameter(spec, key, j.at(key).get<double>());
    } catch (const Error&) {
    }
  }
  spec.forest.bootstrap = j.value("bootstrap", spec.forest.bootstrap);
  if (j.contains("tuning") && !j.at("tuning").is_null()) {
    const auto& t = j.at("tuning");
    TuningGrid grid;
    for (const auto& r : t.at("ranges")) {
      grid.ranges.push_back({r.at("name").get<std::string>(), r.at("lo").get<double>(), r.at("hi").get<double>(),
                             r.value("integer", false)});
    }
    grid.resolution = t.value("resolution", grid.resolution);
    grid.n_evals = t.value("n_evals", grid.n_evals);
    grid.cv_folds = t.value("cv_folds", grid.cv_folds);
    spec.tuning = std::move(grid);
  }
  check_learner(spec);
  return spec;
}

NuisanceModel::NuisanceModel(std::shared_ptr<const Predictor> predictor, const Eigen::MatrixXd& x_train,
                             const Eigen::VectorXd& y_train, std::string learner_id)
    : predictor_(std::move(predictor)), learner_id_(std::move(learner_id)) {
  if (y_train.size() > 0) {
    train_rmse_ = std::sqrt((y_train - predictor_->predict(x_train)).squaredNorm() / static_cast<double>(y_train.size()));
  }
}

nlohmann::json NuisanceModel::to_json() const {
  auto j = predictor_->to_json();
  j["learner"] = learner_id_;
  j["train_rmse"] = train_rmse_;
  return j;
}

Eigen::VectorXd LinearPredictor::predict(const Eigen::MatrixXd& x) const {
  if (x.cols() != coefficients.size()) {
    throw Error(ErrorCode::DimensionMismatch, "linear model expects " + std::to_string(coefficients.size()) +
                                                  " columns, got " + std::to_string(x.cols()));
  }
  Eigen::VectorXd out = Eigen::VectorXd::Constant(x.rows(), intercept);
  for (Index j = 0; j < coefficients.size(); ++j) {
    if (coefficients[j] != 0.0) out.noalias() += coefficients[j] * x.col(j);
  }
  return out;
}

nlohmann::json LinearPredictor::to_json() const {
  return {{"type", "linear"},
          {"intercept", intercept},
          {"coefficients", std::vector<double>(coefficients.data(), coefficients.data() + coefficients.size())}};
}

nlohmann::json LassoPredictor::to_json() const {
  auto j = LinearPredictor::to_json();
  j["type"] = "lasso";
  j["lambda"] = lambda;
  j["lambda_grid"] = lambda_grid;
  j["cv_mse"] = cv_mse;
  return j;
}

// ---------------------------------------------------------------------------
// OLS

NuisanceModel fit_ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  const Index n = x.rows();
  const Index p = x.cols();
  if (y.size() != n) throw Error(ErrorCode::DimensionMismatch, "fit_ols: x and y row counts differ");
  Eigen::MatrixXd a(n, p + 1);
  a.col(0).setOnes();
  a.rightCols(p) = x;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  if (qr.rank() < p + 1) {
    // Locate the first column spanned by its predecessors.
    Eigen::MatrixXd basis(n, 0);
    for (Index j = 0; j <= p; ++j) {
      Eigen::VectorXd c = a.col(j);
      const double norm = c.norm();
      for (int pass = 0; pass < 2; ++pass) {
        for (Index k = 0; k < basis.cols(); ++k) c -= basis.col(k).dot(c) * basis.col(k);
      }
      if (c.norm() <= 1e-9 * std::max(norm, 1.0) || norm == 0.0) throw RankDeficientError(j - 1);
      basis.conservativeResize(Eigen::NoChange, basis.cols() + 1);
      basis.col(basis.cols() - 1) = c / c.norm();
    }
    throw RankDeficientError(p - 1);
  }
  const Eigen::VectorXd beta = qr.solve(y);
  auto model = std::make_shared<LinearPredictor>();
  model->intercept = beta[0];
  model->coefficients = beta.tail(p);
  return NuisanceModel(std::move(model), x, y, "ols");
}

// ---------------------------------------------------------------------------
// LASSO

std::vector<int> cv_blocks(Index n_rows, int folds, std::uint64_t seed, std::span<const Index> groups) {
  if (folds < 2) throw Error(ErrorCode::InvalidArgument, "cross-validation needs at least 2 folds");
  if (!groups.empty() && static_cast<Index>(groups.size()) != n_rows) {
    throw Error(ErrorCode::DimensionMismatch, "group labels do not match the row count");
  }
  std::vector<Index> labels;
  std::vector<Index> label_of(static_cast<std::size_t>(n_rows));
  for (Index r = 0; r < n_rows; ++r) {
    const Index g = groups.empty() ? r : groups[static_cast<std::size_t>(r)];
    if (labels.empty() || labels.back() != g) {
      auto it = std::find(labels.begin(), labels.end(), g);
      if (it == labels.end()) {
        labels.push_back(g);
        it = labels.end() - 1;
      }
      label_of[static_cast<std::size_t>(r)] = it - labels.begin();
    } else {
      label_of[static_cast<std::size_t>(r)] = static_cast<Index>(labels.size()) - 1;
    }
  }
  if (static_cast<Index>(labels.size()) < folds) {
    throw Error(ErrorCode::TooFewUnits, "cross-validation needs at least as many groups as folds");
  }
  std::vector<Index> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng(seed, 0x6376626c);
  shuffle(std::span<Index>(order), rng);
  std::vector<int> block_of_label(labels.size());
  for (std::size_t i = 0; i < order.size(); ++i) block_of_label[static_cast<std::size_t>(order[i])] = static_cast<int>(i % static_cast<std::size_t>(folds));
  std::vector<int> out(static_cast<std::size_t>(n_rows));
  for (Index r = 0; r < n_rows; ++r) out[static_cast<std::size_t>(r)] = block_of_label[static_cast<std::size_t>(label_of[static_cast<std::size_t>(r)])];
  return out;
}

LassoDesign::LassoDesign(const Eigen::MatrixXd& x, std::vector<int> block_of_row, int n_blocks)
    : n_rows_(x.rows()), n_cols_(x.cols()) {
  if (static_cast<Index>(block_of_row.size()) != n_rows_) {
    throw Error(ErrorCode::DimensionMismatch, "block assignment does not match the row count");
  }
  if (n_blocks < 2) throw Error(ErrorCode::InvalidArgument, "cross-validation needs at least 2 folds");
  center_ = n_rows_ > 0 ? Eigen::VectorXd(x.colwise().mean().transpose()) : Eigen::VectorXd::Zero(n_cols_);
  blocks_.resize(static_cast<std::size_t>(n_blocks));
  for (Index r = 0; r < n_rows_; ++r) {
    const int b = block_of_row[static_cast<std::size_t>(r)];
    if (b < 0 || b >= n_blocks) throw Error(ErrorCode::InvalidArgument, "block index out of range");
    blocks_[static_cast<std::size_t>(b)].rows.push_back(r);
  }
  for (auto& block : blocks_) {
    if (block.rows.empty()) throw Error(ErrorCode::TooFewUnits, "a cross-validation block is empty");
    block.x.resize(static_cast<Index>(block.rows.size()), n_cols_);
    for (std::size_t i = 0; i < block.rows.size(); ++i) {
      block.x.row(static_cast<Index>(i)) = x.row(block.rows[i]) - center_.transpose();
    }
    block.sum = block.x.colwise().sum().transpose();
    block.gram = Eigen::MatrixXd::Zero(n_cols_, n_cols_);
    block.gram.selfadjointView<Eigen::Lower>().rankUpdate(block.x.transpose());
  }
}

namespace {

double soft_threshold(double z, double lambda) {
  if (z > lambda) return z - lambda;
  if (z < -lambda) return z + lambda;
  return 0.0;
}

/// Standardized least-squares problem built from sufficient statistics.
struct StandardizedProblem {
  Index n = 0;
  Eigen::VectorXd mean_x;  // in the design's centered coordinates
  Eigen::VectorXd sd;      // population sd; 0 marks an excluded column
  double mean_y = 0.0;
  Eigen::MatrixXd corr;    // standardized Gram / n (full symmetric)
  Eigen::VectorXd xy;      // standardized x'y / n
  std::vector<Index> usable;
};

StandardizedProblem standardize(Index n, const Eigen::VectorXd& sum_x, Eigen::MatrixXd gram_lower, const Eigen::VectorXd& xty,
                                double sum_y) {
  StandardizedProblem sp;
  const double nd = static_cast<double>(n);
  sp.n = n;
  sp.mean_x = sum_x / nd;
  sp.mean_y = sum_y / nd;
  const Index p = sum_x.size();
  sp.sd.resize(p);
  sp.xy.resize(p);
  for (Index j = 0; j < p; ++j) {
    const double var = gram_lower(j, j) / nd - sp.mean_x[j] * sp.mean_x[j];
    const double scale = gram_lower(j, j) / nd;
    sp.sd[j] = (var > 1e-12 * std::max(scale, 1e-300) && var > 0.0) ? std::sqrt(var) : 0.0;
    if (sp.sd[j] > 0.0) sp.usable.push_back(j);
  }
  Eigen::MatrixXd& c = gram_lower;
  for (Index k = 0; k < p; ++k) {
    for (Index j = k; j < p; ++j) {
      if (sp.sd[j] == 0.0 || sp.sd[k] == 0.0) {
        c(j, k) = 0.0;
      } else {
        c(j, k) = (c(j, k) / nd - sp.mean_x[j] * sp.mean_x[k]) / (sp.sd[j] * sp.sd[k]);
      }
      c(k, j) = c(j, k);
    }
    sp.xy[k] = sp.sd[k] == 0.0 ? 0.0 : (xty[k] / nd - sp.mean_x[k] * sp.mean_y) / sp.sd[k];
  }
  sp.corr = std::move(c);
  return sp;
}

/// Coordinate descent for one lambda, warm-started from beta; grad holds xy - corr*beta.
void coordinate_descent(const StandardizedProblem& sp, double lambda, Eigen::VectorXd& beta, Eigen::VectorXd& grad,
                        const LassoParams& params) {
  auto sweep = [&](const std::vector<Index>& cols) {
    double max_change = 0.0;
    for (Index j : cols) {
      const double diag = sp.corr(j, j);
      const double updated = soft_threshold(grad[j] + diag * beta[j], lambda) / diag;
      const double delta = updated - beta[j];
      if (delta != 0.0) {
        beta[j] = updated;
        grad.noalias() -= delta * sp.corr.col(j);
        max_change = std::max(max_change, std::abs(delta));
      }
    }
    return max_change;
  };
  int sweeps = 0;
  std::vector<Index> active;
  while (sweeps < params.max_sweeps) {
    const double full_change = sweep(sp.usable);
    ++sweeps;
    if (full_change < params.tolerance) break;
    active.clear();
    for (Index j : sp.usable) {
      if (beta[j] != 0.0) active.push_back(j);
    }
    while (sweeps < params.max_sweeps) {
      ++sweeps;
      if (sweep(active) < params.tolerance) break;
    }
  }
}

std::vector<double> lambda_path(const LassoParams& params, double lambda_max) {
  if (!params.lambda_grid.empty()) return params.lambda_grid;
  if (!(lambda_max > 0.0)) return {0.0};
  std::vector<double> grid(static_cast<std::size_t>(params.n_lambda));
  if (params.n_lambda == 1) return {lambda_max};
  const double log_ratio = std::log(params.lambda_min_ratio);
  for (int i = 0; i < params.n_lambda; ++i) {
    grid[static_cast<std::size_t>(i)] = lambda_max * std::exp(log_ratio * i / (params.n_lambda - 1));
  }
  return grid;
}

}  // namespace

NuisanceModel fit_lasso_cv(const LassoDesign& design, const Eigen::VectorXd& y, const LassoParams& params) {
  if (y.size() != design.n_rows_) throw Error(ErrorCode::DimensionMismatch, "fit_lasso_cv: x and y row counts differ");
  LearnerSpec probe;
  probe.kind = LearnerKind::Lasso;
  probe.lasso = params;
  check_learner(probe);

  const Index p = design.n_cols_;
  const std::size_t n_blocks = design.blocks_.size();
  std::vector<Eigen::VectorXd> block_xy(n_blocks);
  std::vector<Eigen::VectorXd> block_y(n_blocks);
  std::vector<double> block_sum_y(n_blocks);
  Eigen::VectorXd total_sum = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd total_gram = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd total_xy = Eigen::VectorXd::Zero(p);
  double total_y = 0.0;
  for (std::size_t b = 0; b < n_blocks; ++b) {
    const auto& block = design.blocks_[b];
    block_y[b].resize(static_cast<Index>(block.rows.size()));
    for (std::size_t i = 0; i < block.rows.size(); ++i) block_y[b][static_cast<Index>(i)] = y[block.rows[i]];
    block_xy[b] = block.x.transpose() * block_y[b];
    block_sum_y[b] = block_y[b].sum();
    total_sum += block.sum;
    total_gram.triangularView<Eigen::Lower>() += block.gram;
    total_xy += block_xy[b];
    total_y += block_sum_y[b];
  }

  const StandardizedProblem full = standardize(design.n_rows_, total_sum, total_gram, total_xy, total_y);
  if (full.usable.empty()) {
    throw Error(ErrorCode::AllZeroVarianceColumns, "every covariate has zero variance");
  }
  const std::vector<double> grid = lambda_path(params, full.xy.cwiseAbs().maxCoeff());
  const std::size_t n_lambda = grid.size();

  std::vector<double> cv_mse(n_lambda, 0.0);
  for (std::size_t b = 0; b < n_blocks; ++b) {
    const auto& held = design.blocks_[b];
    const Index n_train = design.n_rows_ - static_cast<Index>(held.rows.size());
    Eigen::MatrixXd gram = total_gram;
    gram.triangularView<Eigen::Lower>() -= held.gram;
    const StandardizedProblem sp =
        standardize(n_train, total_sum - held.sum, std::move(gram), total_xy - block_xy[b], total_y - block_sum_y[b]);
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd grad = sp.xy;
    const Index n_held = static_cast<Index>(held.rows.size());
    for (std::size_t l = 0; l < n_lambda; ++l) {
      if (!sp.usable.empty()) coordinate_descent(sp, grid[l], beta, grad, params);
      Eigen::VectorXd pred = Eigen::VectorXd::Constant(n_held, sp.mean_y);
      for (Index j : sp.usable) {
        if (beta[j] == 0.0) continue;
        const double slope = beta[j] / sp.sd[j];
        pred.array() += slope * (held.x.col(j).array() - sp.mean_x[j]);
      }
      cv_mse[l] += (block_y[b] - pred).squaredNorm() / static_cast<double>(n_held);
    }
  }
  for (auto& m : cv_mse) m /= static_cast<double>(n_blocks);
  const std::size_t best = static_cast<std::size_t>(std::min_element(cv_mse.begin(), cv_mse.end()) - cv_mse.begin());

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd grad = full.xy;
  for (std::size_t l = 0; l <= best; ++l) coordinate_descent(full, grid[l], beta, grad, params);

  auto model = std::make_shared<LassoPredictor>();
  model->lambda = grid[best];
  model->lambda_grid = grid;
  model->cv_mse = cv_mse;
  model->column_means = design.center_ + full.mean_x;
  model->column_sds = full.sd;
  model->target_mean = full.mean_y;
  model->standardized_coefficients = beta;
  model->coefficients = Eigen::VectorXd::Zero(p);
  double intercept = full.mean_y;
  for (Index j : full.usable) {
    const double slope = beta[j] / full.sd[j];
    model->coefficients[j] = slope;
    intercept -= slope * model->column_means[j];
  }
  model->intercept = intercept;

  // Training rows in original order for the train_rmse computation.
  Eigen::MatrixXd x_train(design.n_rows_, p);
  for (const auto& block : design.blocks_) {
    for (std::size_t i = 0; i < block.rows.size(); ++i) {
      x_train.row(block.rows[i]) = block.x.row(static_cast<Index>(i)) + design.center_.transpose();
    }
  }
  return NuisanceModel(std::move(model), x_train, y, "lasso");
}

NuisanceModel fit_lasso_cv(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const LassoParams& params,
                           std::uint64_t seed, std::span<const Index> groups) {
  if (y.size() != x.rows()) throw Error(ErrorCode::DimensionMismatch, "fit_lasso_cv: x and y row counts differ");
  LassoDesign design(x, cv_blocks(x.rows(), params.cv_folds, seed, groups), params.cv_folds);
  return fit_lasso_cv(design, y, params);
}

// ---------------------------------------------------------------------------
// Trees

namespace {

void check_rows(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const char* who) {
  if (y.size() != x.rows()) throw Error(ErrorCode::DimensionMismatch, std::string(who) + ": x and y row counts differ");
  if (y.size() == 0) throw Error(ErrorCode::InvalidArgument, std::string(who) + ": no training rows");
}

}  // namespace

NuisanceModel fit_cart(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const CartParams& params) {
  check_rows(x, y, "fit_cart");
  LearnerSpec probe = default_learner(LearnerKind::Cart);
  probe.cart = params;
  check_learner(probe);
  GrowthParams growth;
  growth.max_depth = params.max_depth;
  growth.min_leaf_weight = params.min_bucket;
  growth.min_split_weight = 2.0 * params.min_bucket;
  growth.cp = params.cp;
  const std::vector<double> weights(static_cast<std::size_t>(y.size()), 1.0);
  auto model = std::make_shared<TreePredictor>();
  model->tree = grow_tree(x, PresortedColumns(x), y, weights, growth);
  return NuisanceModel(std::move(model), x, y, "cart");
}

NuisanceModel fit_random_forest(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const ForestParams& params,
                                std::uint64_t seed) {
  check_rows(x, y, "fit_random_forest");
  LearnerSpec probe = default_learner(LearnerKind::Forest);
  probe.forest = params;
  check_learner(probe);
  const PresortedColumns sorted(x);
  GrowthParams growth;
  growth.max_depth = params.max_depth;
  growth.min_split_weight = std::max(2, params.min_node_size);
  growth.min_leaf_weight = 1.0;
  growth.mtry = params.mtry;
  const auto n = static_cast<std::size_t>(y.size());
  auto model = std::make_shared<ForestPredictor>();
  model->trees.resize(static_cast<std::size_t>(params.num_trees));
  parallel_for(model->trees.size(), resolve_threads(0), [&](std::size_t t) {
    Rng rng = make_rng(seed, t);
    std::vector<double> weights(n, params.bootstrap ? 0.0 : 1.0);
    if (params.bootstrap) {
      for (std::size_t i = 0; i < n; ++i) weights[static_cast<std::size_t>(uniform_index(rng, n))] += 1.0;
    }
    model->trees[t] = grow_tree(x, sorted, y, weights, growth, &rng);
  });
  return NuisanceModel(std::move(model), x, y, "rf");
}

NuisanceModel fit_boosting(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const BoostParams& params) {
  check_rows(x, y, "fit_boosting");
  LearnerSpec probe = default_learner(LearnerKind::Boosting);
  probe.boost = params;
  check_learner(probe);
  const PresortedColumns sorted(x);
  GrowthParams growth;
  growth.max_depth = params.max_depth;
  growth.min_leaf_weight = params.min_leaf;
  growth.min_split_weight = 2.0 * params.min_leaf;
  growth.l2_lambda = params.l2_lambda;
  const std::vector<double> weights(static_cast<std::size_t>(y.size()), 1.0);
  auto model = std::make_shared<BoostedPredictor>();
  model->base = y.mean();
  model->learning_rate = params.learning_rate;
  Eigen::VectorXd fitted = Eigen::VectorXd::Constant(y.size(), model->base);
  for (int round = 0; round < params.nrounds; ++round) {
    const Eigen::VectorXd residual = y - fitted;
    model->trees.push_back(grow_tree(x, sorted, residual, weights, growth));
    fitted.noalias() += params.learning_rate * model->trees.back().predict(x);
  }
  return NuisanceModel(std::move(model), x, y, "boost");
}

NuisanceModel fit_learner(const LearnerSpec& spec, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                          std::uint64_t seed, std::span<const Index> groups) {
  switch (spec.kind) {
    case LearnerKind::Ols: return fit_ols(x, y);
    case LearnerKind::Lasso: return fit_lasso_cv(x, y, spec.lasso, seed, groups);
    case LearnerKind::Cart: return fit_cart(x, y, spec.cart);
    case LearnerKind::Forest: return fit_random_forest(x, y, spec.forest, seed);
    case LearnerKind::Boosting: return fit_boosting(x, y, spec.boost);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown learner kind");
}

}  // namespace panel_dml
