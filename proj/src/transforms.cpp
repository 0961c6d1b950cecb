#include "panel_dml/transforms.hpp"

#include "panel_dml/errors.hpp"

namespace panel_dml {

const char* to_string(TransformKind kind) noexcept {
  switch (kind) {
    case TransformKind::WG: return "wg";
    case TransformKind::FD: return "fd";
    case TransformKind::CRE: return "cre";
    case TransformKind::HybridWG: return "hybrid-wg";
    case TransformKind::HybridFD: return "hybrid-fd";
    case TransformKind::ApproxWG: return "approx-wg";
    case TransformKind::ApproxFD: return "approx-fd";
  }
  return "unknown";
}

namespace {

std::vector<std::string> source_columns_of(const PanelDataset& panel) {
  std::vector<std::string> cols{"y", "d"};
  cols.insert(cols.end(), panel.covariate_names.begin(), panel.covariate_names.end());
  return cols;
}

void require_multiple_waves(const PanelDataset& panel) {
  if (panel.n_waves < 2) throw Error(ErrorCode::SingleWave, "first differencing needs at least two waves");
}

/// Unit ids and wave ids for waves 2..T of every unit.
void fill_fd_ids(const PanelDataset& panel, PanelDataset& out) {
  out.unit_ids.clear();
  out.wave_ids.clear();
  for (Index i = 0; i < panel.n_units; ++i) {
    for (Index t = 1; t < panel.n_waves; ++t) {
      out.unit_ids.push_back(panel.unit_label(i));
      out.wave_ids.push_back(static_cast<int>(t + 1));
    }
  }
}

}  // namespace

TransformedPanel within_group(const PanelDataset& panel) {
  TransformedPanel out;
  out.kind = TransformKind::WG;
  out.source_columns = source_columns_of(panel);
  out.data = panel;
  out.data.y = demean_within(panel.y, panel.n_waves);
  out.data.d = demean_within(panel.d, panel.n_waves);
  out.data.x = demean_within(panel.x, panel.n_waves);
  return out;
}

TransformedPanel first_difference(const PanelDataset& panel) {
  require_multiple_waves(panel);
  TransformedPanel out;
  out.kind = TransformKind::FD;
  out.source_columns = source_columns_of(panel);
  out.data.n_units = panel.n_units;
  out.data.n_waves = panel.n_waves - 1;
  out.data.covariate_names = panel.covariate_names;
  out.data.wave_labels = panel.wave_labels;
  out.data.y = difference_within(panel.y, panel.n_waves);
  out.data.d = difference_within(panel.d, panel.n_waves);
  out.data.x = difference_within(panel.x, panel.n_waves);
  fill_fd_ids(panel, out.data);
  return out;
}

PanelDataset mundlak_augment(const PanelDataset& panel, bool include_treatment_mean) {
  PanelDataset out = panel;
  const Index p = panel.n_covariates();
  out.x.resize(panel.n_rows(), 2 * p + (include_treatment_mean ? 1 : 0));
  out.x.leftCols(p) = panel.x;
  out.x.middleCols(p, p) = broadcast_unit_means(panel.x, panel.n_waves);
  for (Index j = 0; j < p; ++j) out.covariate_names.push_back("mean_" + panel.covariate_names[static_cast<std::size_t>(j)]);
  if (include_treatment_mean) {
    out.x.col(2 * p) = broadcast_unit_means(panel.d, panel.n_waves);
    out.covariate_names.emplace_back("mean_d");
  }
  return out;
}

PanelDataset fd_lag_augment(const PanelDataset& panel) {
  require_multiple_waves(panel);
  const Index T = panel.n_waves;
  const Index p = panel.n_covariates();
  PanelDataset out;
  out.n_units = panel.n_units;
  out.n_waves = T - 1;
  out.wave_labels = panel.wave_labels;
  out.y = difference_within(panel.y, T);
  out.d = difference_within(panel.d, T);
  out.x.resize(panel.n_units * (T - 1), 2 * p);
  for (Index i = 0; i < panel.n_units; ++i) {
    out.x.block(i * (T - 1), 0, T - 1, p) = panel.x.middleRows(i * T, T - 1);
    out.x.block(i * (T - 1), p, T - 1, p) = panel.x.middleRows(i * T + 1, T - 1);
  }
  for (const auto& name : panel.covariate_names) out.covariate_names.push_back("lag_" + name);
  for (const auto& name : panel.covariate_names) out.covariate_names.push_back(name);
  fill_fd_ids(panel, out);
  return out;
}

std::string DictionaryTerm::label(const std::vector<std::string>& names) const {
  const auto& a = names[static_cast<std::size_t>(j)];
  switch (kind) {
    case Kind::Raw: return a;
    case Kind::Square: return a + "^2";
    case Kind::Cube: return a + "^3";
    case Kind::Interaction: return a + "*" + names[static_cast<std::size_t>(k)];
  }
  return a;
}

Index dictionary_width(Index p) { return 3 * p + p * (p - 1) / 2; }

std::vector<DictionaryTerm> dictionary_terms(Index p) {
  using Kind = DictionaryTerm::Kind;
  std::vector<DictionaryTerm> terms;
  terms.reserve(static_cast<std::size_t>(dictionary_width(p)));
  for (Kind kind : {Kind::Raw, Kind::Square, Kind::Cube}) {
    for (Index j = 0; j < p; ++j) terms.push_back({kind, j, j});
  }
  for (Index j = 0; j < p; ++j) {
    for (Index k = j + 1; k < p; ++k) terms.push_back({Kind::Interaction, j, k});
  }
  return terms;
}

Dictionary expand_dictionary(const Eigen::MatrixXd& x) {
  if (x.cols() < 1) throw Error(ErrorCode::InvalidArgument, "dictionary needs at least one covariate");
  Dictionary dict;
  dict.terms = dictionary_terms(x.cols());
  dict.matrix.resize(x.rows(), static_cast<Index>(dict.terms.size()));
  for (std::size_t c = 0; c < dict.terms.size(); ++c) {
    const auto& term = dict.terms[c];
    auto out = dict.matrix.col(static_cast<Index>(c));
    const auto a = x.col(term.j).array();
    switch (term.kind) {
      case DictionaryTerm::Kind::Raw: out = a.matrix(); break;
      case DictionaryTerm::Kind::Square: out = a.square().matrix(); break;
      case DictionaryTerm::Kind::Cube: out = a.cube().matrix(); break;
      case DictionaryTerm::Kind::Interaction: out = (a * x.col(term.k).array()).matrix(); break;
    }
  }
  return dict;
}

nlohmann::json dictionary_to_json(const std::vector<DictionaryTerm>& terms, const std::vector<std::string>& names) {
  static constexpr const char* kinds[] = {"raw", "square", "cube", "interaction"};
  auto out = nlohmann::json::array();
  for (const auto& term : terms) {
    nlohmann::json entry{{"kind", kinds[static_cast<int>(term.kind)]}, {"j", term.j}, {"label", term.label(names)}};
    if (term.kind == DictionaryTerm::Kind::Interaction) entry["k"] = term.k;
    out.push_back(std::move(entry));
  }
  return out;
}

}  // namespace panel_dml
