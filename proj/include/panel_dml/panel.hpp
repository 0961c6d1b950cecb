#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace panel_dml {

using Eigen::Index;

/// Balanced long-format panel. Rows are stored unit-major: the T waves of unit i
/// occupy rows [i*T, (i+1)*T) and wave_ids run 1..T inside each block.
struct PanelDataset {
  std::vector<std::int64_t> unit_ids;
  std::vector<int> wave_ids;
  Eigen::VectorXd y;
  Eigen::VectorXd d;
  Eigen::MatrixXd x;
  std::vector<std::string> covariate_names;
  /// Original wave labels, wave_labels[t-1] for canonical wave t.
  std::vector<std::int64_t> wave_labels;
  Index n_units = 0;
  Index n_waves = 0;

  Index n_rows() const { return y.size(); }
  Index n_covariates() const { return x.cols(); }
  Index row(Index unit, Index wave) const { return unit * n_waves + wave; }
  std::int64_t unit_label(Index unit) const { return unit_ids[static_cast<std::size_t>(unit * n_waves)]; }
};

/// Rows as they come off a file, in arbitrary order with arbitrary wave labels.
struct RawPanel {
  std::vector<std::int64_t> unit;
  std::vector<std::int64_t> wave;
  std::vector<double> y;
  std::vector<double> d;
  /// Row-major covariate values, unit.size() * covariate_names.size().
  std::vector<double> x;
  std::vector<std::string> covariate_names;
};

/// Throws UnbalancedPanel, DuplicateWave, NonFiniteValue or DimensionMismatch
/// when a PanelDataset invariant is violated.
void validate(const PanelDataset& panel);

/// Sorts rows by (unit, wave), relabels waves to 1..T and validates.
PanelDataset assemble_panel(const RawPanel& raw);

/// Sub-panel holding the given units (indices into 0..N-1), in the order given.
PanelDataset select_units(const PanelDataset& panel, std::span<const Index> units);

/// Default covariate names x1..xp.
std::vector<std::string> default_covariate_names(Index p);

struct FoldPlan {
  int k = 0;
  /// assignment[i] is the fold of unit index i.
  std::vector<int> assignment;
  std::uint64_t seed = 0;

  std::vector<Index> units_in(int fold) const;
  std::vector<Index> units_outside(int fold) const;
  Index fold_size(int fold) const;
};

/// Seeded shuffle of the unit list, dealt round-robin into k folds.
/// Throws InvalidArgument when k < 2 and TooFewUnits when n_units < 2k.
FoldPlan make_fold_plan(Index n_units, int k, std::uint64_t seed);

PanelDataset read_panel_csv(const std::filesystem::path& path);
PanelDataset parse_panel_csv(std::string_view text);
void write_panel_csv(const std::filesystem::path& path, const PanelDataset& panel);
std::string format_panel_csv(const PanelDataset& panel);

}  // namespace panel_dml
