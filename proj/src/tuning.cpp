#include "panel_dml/tuning.hpp"

#include <cmath>
#include <numeric>

#include "panel_dml/errors.hpp"
#include "panel_dml/parallel.hpp"
#include "panel_dml/rng.hpp"

namespace panel_dml {

namespace {

std::vector<double> draw_values(const HyperRange& range, int count, Rng& rng) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(count));
  if (range.integer) {
    const auto lo = static_cast<long>(std::ceil(range.lo));
    const auto hi = static_cast<long>(std::floor(range.hi));
    const auto width = static_cast<std::uint64_t>(std::max(0L, hi - lo) + 1);
    if (width >= static_cast<std::uint64_t>(count)) {
      std::vector<long> pool(width);
      std::iota(pool.begin(), pool.end(), lo);
      for (int i = 0; i < count; ++i) {
        const auto pick = static_cast<std::size_t>(i) + uniform_index(rng, width - static_cast<std::uint64_t>(i));
        std::swap(pool[static_cast<std::size_t>(i)], pool[pick]);
        out.push_back(static_cast<double>(pool[static_cast<std::size_t>(i)]));
      }
    } else {
      for (int i = 0; i < count; ++i) out.push_back(static_cast<double>(lo + static_cast<long>(uniform_index(rng, width))));
    }
  } else {
    for (int i = 0; i < count; ++i) out.push_back(range.lo + (range.hi - range.lo) * uniform01(rng));
  }
  return out;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, const std::vector<Index>& rows) { return m(rows, Eigen::all); }
Eigen::VectorXd take_rows(const Eigen::VectorXd& v, const std::vector<Index>& rows) { return v(rows); }

}  // namespace

nlohmann::json TuningResult::to_json() const {
  auto list = nlohmann::json::array();
  for (const auto& t : trials) {
    list.push_back({{"evaluation", t.evaluation}, {"values", t.values}, {"cv_rmse", t.cv_rmse}});
  }
  return {{"best", panel_dml::to_json(best)}, {"best_cv_rmse", best_cv_rmse}, {"trials", std::move(list)}};
}

TuningResult grid_search_tune(const LearnerSpec& spec, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                              std::uint64_t seed, std::span<const Index> groups, int threads) {
  if (!spec.tuning || spec.tuning->ranges.empty()) {
    throw Error(ErrorCode::EmptyGrid, "learner " + spec.id() + " has no tuning grid");
  }
  check_learner(spec);
  if (y.size() != x.rows()) throw Error(ErrorCode::DimensionMismatch, "grid_search_tune: x and y row counts differ");
  const TuningGrid& grid = *spec.tuning;

  std::vector<TuningTrial> trials;
  Rng rng = make_rng(seed, 0x74756e65);
  for (int e = 0; e < grid.n_evals; ++e) {
    std::vector<std::vector<double>> columns;
    for (const auto& range : grid.ranges) columns.push_back(draw_values(range, grid.resolution, rng));
    for (int c = 0; c < grid.resolution; ++c) {
      TuningTrial trial;
      trial.evaluation = e;
      for (const auto& column : columns) trial.values.push_back(column[static_cast<std::size_t>(c)]);
      trials.push_back(std::move(trial));
    }
  }

  const auto blocks = cv_blocks(x.rows(), grid.cv_folds, seed, groups);
  std::vector<std::vector<Index>> train_rows(static_cast<std::size_t>(grid.cv_folds));
  std::vector<std::vector<Index>> held_rows(static_cast<std::size_t>(grid.cv_folds));
  for (Index r = 0; r < x.rows(); ++r) {
    for (int f = 0; f < grid.cv_folds; ++f) {
      (blocks[static_cast<std::size_t>(r)] == f ? held_rows : train_rows)[static_cast<std::size_t>(f)].push_back(r);
    }
  }

  auto configure = [&](const TuningTrial& trial) {
    LearnerSpec candidate = spec;
    candidate.tuning.reset();
    for (std::size_t h = 0; h < grid.ranges.size(); ++h) set_hyperparameter(candidate, grid.ranges[h].name, trial.values[h]);
    return candidate;
  };

  parallel_for(trials.size(), threads, [&](std::size_t t) {
    const LearnerSpec candidate = configure(trials[t]);
    auto& trial = trials[t];
    for (int f = 0; f < grid.cv_folds; ++f) {
      const auto& tr = train_rows[static_cast<std::size_t>(f)];
      const auto& ho = held_rows[static_cast<std::size_t>(f)];
      std::vector<Index> train_groups;
      if (!groups.empty()) {
        for (Index r : tr) train_groups.push_back(groups[static_cast<std::size_t>(r)]);
      }
      const auto model = fit_learner(candidate, take_rows(x, tr), take_rows(y, tr), mix_seed(seed, static_cast<std::uint64_t>(f)),
                                     train_groups);
      const Eigen::VectorXd err = take_rows(y, ho) - model.predict(take_rows(x, ho));
      trial.fold_rmse.push_back(std::sqrt(err.squaredNorm() / static_cast<double>(ho.size())));
    }
    trial.cv_rmse = std::accumulate(trial.fold_rmse.begin(), trial.fold_rmse.end(), 0.0) / grid.cv_folds;
  });

  std::size_t best = 0;
  for (std::size_t t = 1; t < trials.size(); ++t) {
    if (trials[t].cv_rmse < trials[best].cv_rmse) best = t;
  }
  TuningResult result;
  result.best = configure(trials[best]);
  result.best_cv_rmse = trials[best].cv_rmse;
  result.trials = std::move(trials);
  return result;
}

}  // namespace panel_dml
