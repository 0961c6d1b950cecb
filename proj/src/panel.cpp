#include "panel_dml/panel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "panel_dml/errors.hpp"
#include "panel_dml/rng.hpp"

namespace panel_dml {

namespace {

void check_finite(const PanelDataset& panel) {
  for (Index r = 0; r < panel.n_rows(); ++r) {
    const auto data_row = static_cast<std::size_t>(r + 1);
    if (!std::isfinite(panel.y[r])) throw NonFiniteValueError(data_row, "y");
    if (!std::isfinite(panel.d[r])) throw NonFiniteValueError(data_row, "d");
    for (Index j = 0; j < panel.x.cols(); ++j) {
      if (!std::isfinite(panel.x(r, j))) {
        throw NonFiniteValueError(data_row, panel.covariate_names[static_cast<std::size_t>(j)]);
      }
    }
  }
}

}  // namespace

std::vector<std::string> default_covariate_names(Index p) {
  std::vector<std::string> names;
  for (Index j = 0; j < p; ++j) names.push_back("x" + std::to_string(j + 1));
  return names;
}

void validate(const PanelDataset& panel) {
  const auto rows = static_cast<std::size_t>(panel.n_rows());
  if (panel.d.size() != panel.n_rows() || panel.x.rows() != panel.n_rows() ||
      panel.unit_ids.size() != rows || panel.wave_ids.size() != rows ||
      panel.covariate_names.size() != static_cast<std::size_t>(panel.x.cols())) {
    throw Error(ErrorCode::DimensionMismatch, "column lengths disagree");
  }
  check_finite(panel);
  if (panel.n_waves < 1 || panel.n_units * panel.n_waves != panel.n_rows()) {
    throw Error(ErrorCode::UnbalancedPanel, "row count is not N*T");
  }
  for (Index i = 0; i < panel.n_units; ++i) {
    const auto base = static_cast<std::size_t>(i * panel.n_waves);
    const auto label = panel.unit_ids[base];
    if (i > 0 && panel.unit_ids[base - 1] >= label) {
      throw Error(ErrorCode::UnbalancedPanel,
                  "unit " + std::to_string(label) + " rows are not a contiguous sorted block of " +
                      std::to_string(panel.n_waves));
    }
    for (Index t = 0; t < panel.n_waves; ++t) {
      const auto r = base + static_cast<std::size_t>(t);
      if (panel.unit_ids[r] != label) {
        throw Error(ErrorCode::UnbalancedPanel,
                    "unit " + std::to_string(label) + " has fewer than " + std::to_string(panel.n_waves) + " rows");
      }
      if (panel.wave_ids[r] != t + 1) {
        if (t > 0 && panel.wave_ids[r] == panel.wave_ids[r - 1]) {
          throw Error(ErrorCode::DuplicateWave,
                      "unit " + std::to_string(label) + " wave " + std::to_string(panel.wave_ids[r]));
        }
        throw Error(ErrorCode::UnbalancedPanel,
                    "unit " + std::to_string(label) + " is missing wave " + std::to_string(t + 1));
      }
    }
  }
}

PanelDataset assemble_panel(const RawPanel& raw) {
  const std::size_t n = raw.unit.size();
  const std::size_t p = raw.covariate_names.size();
  if (raw.wave.size() != n || raw.y.size() != n || raw.d.size() != n || raw.x.size() != n * p) {
    throw Error(ErrorCode::DimensionMismatch, "raw columns have different lengths");
  }
  if (n == 0) throw Error(ErrorCode::UnbalancedPanel, "no rows");
  for (std::size_t r = 0; r < n; ++r) {
    if (!std::isfinite(raw.y[r])) throw NonFiniteValueError(r + 1, "y");
    if (!std::isfinite(raw.d[r])) throw NonFiniteValueError(r + 1, "d");
    for (std::size_t j = 0; j < p; ++j) {
      if (!std::isfinite(raw.x[r * p + j])) throw NonFiniteValueError(r + 1, raw.covariate_names[j]);
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::pair(raw.unit[a], raw.wave[a]) < std::pair(raw.unit[b], raw.wave[b]);
  });
  for (std::size_t k = 1; k < n; ++k) {
    const auto a = order[k - 1];
    const auto b = order[k];
    if (raw.unit[a] == raw.unit[b] && raw.wave[a] == raw.wave[b]) {
      throw Error(ErrorCode::DuplicateWave,
                  "unit " + std::to_string(raw.unit[b]) + " wave " + std::to_string(raw.wave[b]));
    }
  }

  std::vector<std::int64_t> waves(raw.wave);
  std::sort(waves.begin(), waves.end());
  waves.erase(std::unique(waves.begin(), waves.end()), waves.end());
  const auto T = waves.size();
  if (n % T != 0) throw Error(ErrorCode::UnbalancedPanel, "row count is not a multiple of the wave count");

  PanelDataset panel;
  panel.n_waves = static_cast<Index>(T);
  panel.n_units = static_cast<Index>(n / T);
  panel.wave_labels = waves;
  panel.covariate_names = raw.covariate_names;
  panel.y.resize(static_cast<Index>(n));
  panel.d.resize(static_cast<Index>(n));
  panel.x.resize(static_cast<Index>(n), static_cast<Index>(p));
  panel.unit_ids.resize(n);
  panel.wave_ids.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto src = order[k];
    const auto block_start = k - k % T;
    const auto expected = waves[k % T];
    if (raw.unit[order[block_start]] != raw.unit[src] || raw.wave[src] != expected) {
      throw Error(ErrorCode::UnbalancedPanel,
                  "unit " + std::to_string(raw.unit[src]) + " is missing wave " + std::to_string(expected));
    }
    const auto r = static_cast<Index>(k);
    panel.unit_ids[k] = raw.unit[src];
    panel.wave_ids[k] = static_cast<int>(k % T) + 1;
    panel.y[r] = raw.y[src];
    panel.d[r] = raw.d[src];
    for (std::size_t j = 0; j < p; ++j) panel.x(r, static_cast<Index>(j)) = raw.x[src * p + j];
  }
  validate(panel);
  return panel;
}

PanelDataset select_units(const PanelDataset& panel, std::span<const Index> units) {
  const Index T = panel.n_waves;
  const auto rows = static_cast<Index>(units.size()) * T;
  PanelDataset out;
  out.n_units = static_cast<Index>(units.size());
  out.n_waves = T;
  out.covariate_names = panel.covariate_names;
  out.wave_labels = panel.wave_labels;
  out.y.resize(rows);
  out.d.resize(rows);
  out.x.resize(rows, panel.x.cols());
  out.unit_ids.resize(static_cast<std::size_t>(rows));
  out.wave_ids.resize(static_cast<std::size_t>(rows));
  for (std::size_t k = 0; k < units.size(); ++k) {
    const Index src = units[k] * T;
    const Index dst = static_cast<Index>(k) * T;
    out.y.segment(dst, T) = panel.y.segment(src, T);
    out.d.segment(dst, T) = panel.d.segment(src, T);
    out.x.middleRows(dst, T) = panel.x.middleRows(src, T);
    for (Index t = 0; t < T; ++t) {
      out.unit_ids[static_cast<std::size_t>(dst + t)] = panel.unit_ids[static_cast<std::size_t>(src + t)];
      out.wave_ids[static_cast<std::size_t>(dst + t)] = panel.wave_ids[static_cast<std::size_t>(src + t)];
    }
  }
  return out;
}

std::vector<Index> FoldPlan::units_in(int fold) const {
  std::vector<Index> units;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] == fold) units.push_back(static_cast<Index>(i));
  }
  return units;
}

std::vector<Index> FoldPlan::units_outside(int fold) const {
  std::vector<Index> units;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] != fold) units.push_back(static_cast<Index>(i));
  }
  return units;
}

Index FoldPlan::fold_size(int fold) const {
  return static_cast<Index>(std::count(assignment.begin(), assignment.end(), fold));
}

FoldPlan make_fold_plan(Index n_units, int k, std::uint64_t seed) {
  if (k < 2) throw Error(ErrorCode::InvalidArgument, "fold count must be at least 2");
  if (n_units < 2 * static_cast<Index>(k)) {
    throw Error(ErrorCode::TooFewUnits,
                std::to_string(n_units) + " units cannot fill " + std::to_string(k) + " folds");
  }
  std::vector<Index> order(static_cast<std::size_t>(n_units));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng = make_rng(seed, 0x666f6c64);
  shuffle(std::span<Index>(order), rng);

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.assignment.assign(order.size(), 0);
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    plan.assignment[static_cast<std::size_t>(order[pos])] = static_cast<int>(pos % static_cast<std::size_t>(k));
  }
  return plan;
}

}  // namespace panel_dml
