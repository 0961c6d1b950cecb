#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "panel_dml/panel.hpp"

namespace panel_dml {

enum class TransformKind { WG, FD, CRE, HybridWG, HybridFD, ApproxWG, ApproxFD };

const char* to_string(TransformKind kind) noexcept;

/// True for kinds whose score space drops the first wave.
inline bool is_fd_family(TransformKind kind) noexcept {
  return kind == TransformKind::FD || kind == TransformKind::HybridFD || kind == TransformKind::ApproxFD;
}

struct TransformedPanel {
  /// For FD the panel holds waves 2..T, so data.n_waves == T - 1 and wave_ids start at 2.
  PanelDataset data;
  TransformKind kind = TransformKind::WG;
  std::vector<std::string> source_columns;
};

// Column operators over unit-major blocks of `n_waves` rows. They accept any
// dense expression; each column is treated independently.

template <class Derived>
typename Derived::PlainObject unit_means(const Eigen::MatrixBase<Derived>& m, Index n_waves) {
  const Index n_units = m.rows() / n_waves;
  typename Derived::PlainObject out(n_units, m.cols());
  for (Index i = 0; i < n_units; ++i) out.row(i) = m.middleRows(i * n_waves, n_waves).colwise().mean();
  return out;
}

/// Each row replaced by its unit's mean.
template <class Derived>
typename Derived::PlainObject broadcast_unit_means(const Eigen::MatrixBase<Derived>& m, Index n_waves) {
  typename Derived::PlainObject out(m.rows(), m.cols());
  for (Index start = 0; start < m.rows(); start += n_waves) {
    const auto mean = m.middleRows(start, n_waves).colwise().mean().eval();
    out.middleRows(start, n_waves).rowwise() = mean;
  }
  return out;
}

/// Within-group operator Q(w)_it = w_it - mean_t w_it.
template <class Derived>
typename Derived::PlainObject demean_within(const Eigen::MatrixBase<Derived>& m, Index n_waves) {
  typename Derived::PlainObject out(m.rows(), m.cols());
  for (Index start = 0; start < m.rows(); start += n_waves) {
    const auto mean = m.middleRows(start, n_waves).colwise().mean().eval();
    out.middleRows(start, n_waves) = m.middleRows(start, n_waves).rowwise() - mean;
  }
  return out;
}

/// First-difference operator; each block of T rows becomes T-1 rows w_it - w_i,t-1.
template <class Derived>
typename Derived::PlainObject difference_within(const Eigen::MatrixBase<Derived>& m, Index n_waves) {
  const Index n_units = m.rows() / n_waves;
  const Index out_waves = n_waves - 1;
  typename Derived::PlainObject out(n_units * out_waves, m.cols());
  for (Index i = 0; i < n_units; ++i) {
    out.middleRows(i * out_waves, out_waves) =
        m.middleRows(i * n_waves + 1, out_waves) - m.middleRows(i * n_waves, out_waves);
  }
  return out;
}

/// Applies Q of the given family (WG or FD) to a unit-major column block.
template <class Derived>
typename Derived::PlainObject apply_transform(const Eigen::MatrixBase<Derived>& m, Index n_waves, bool first_difference) {
  return first_difference ? difference_within(m, n_waves) : demean_within(m, n_waves);
}

TransformedPanel within_group(const PanelDataset& panel);

/// Throws SingleWave when T == 1.
TransformedPanel first_difference(const PanelDataset& panel);

/// Appends per-unit covariate means (columns "mean_<name>"), and optionally the
/// per-unit treatment mean as a final "mean_d" column.
PanelDataset mundlak_augment(const PanelDataset& panel, bool include_treatment_mean);

/// Rows for waves 2..T with differenced y and d; covariates are (x_{t-1}, x_t),
/// named "lag_<name>" then "<name>". Throws SingleWave when T == 1.
PanelDataset fd_lag_augment(const PanelDataset& panel);

struct DictionaryTerm {
  enum class Kind { Raw, Square, Cube, Interaction };
  Kind kind = Kind::Raw;
  Index j = 0;
  Index k = 0;  // second factor for interactions

  std::string label(const std::vector<std::string>& names) const;
  bool operator==(const DictionaryTerm&) const = default;
};

struct Dictionary {
  Eigen::MatrixXd matrix;
  std::vector<DictionaryTerm> terms;
};

/// 3p + p(p-1)/2.
Index dictionary_width(Index p);

/// Column order: raw 1..p, squares 1..p, cubes 1..p, interactions (j,k) with j<k in lexicographic order.
std::vector<DictionaryTerm> dictionary_terms(Index p);

Dictionary expand_dictionary(const Eigen::MatrixXd& x);

nlohmann::json dictionary_to_json(const std::vector<DictionaryTerm>& terms, const std::vector<std::string>& names);

}  // namespace panel_dml
