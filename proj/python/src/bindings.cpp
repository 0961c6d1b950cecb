#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "panel_dml/cli.hpp"
#include "panel_dml/dml.hpp"
#include "panel_dml/simulation.hpp"
#include "panel_dml/transforms.hpp"
#include "panel_dml/tuning.hpp"

namespace py = pybind11;
using namespace panel_dml;

namespace {

py::object to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

PanelDataset panel_from_arrays(const std::vector<std::int64_t>& unit, const std::vector<std::int64_t>& wave,
                               const Eigen::VectorXd& y, const Eigen::VectorXd& d, const Eigen::MatrixXd& x,
                               std::vector<std::string> names) {
  const auto n = unit.size();
  if (wave.size() != n || static_cast<std::size_t>(y.size()) != n || static_cast<std::size_t>(d.size()) != n ||
      static_cast<std::size_t>(x.rows()) != n) {
    throw Error(ErrorCode::DimensionMismatch, "unit, wave, y, d and x must have the same number of rows");
  }
  RawPanel raw;
  raw.unit = unit;
  raw.wave = wave;
  raw.y.assign(y.data(), y.data() + y.size());
  raw.d.assign(d.data(), d.data() + d.size());
  raw.covariate_names = names.empty() ? default_covariate_names(x.cols()) : std::move(names);
  raw.x.reserve(n * static_cast<std::size_t>(x.cols()));
  for (Index r = 0; r < x.rows(); ++r) {
    for (Index c = 0; c < x.cols(); ++c) raw.x.push_back(x(r, c));
  }
  return assemble_panel(raw);
}

NuisanceStrategy make_strategy(const std::string& approach, const std::string& learner, const std::string& learner_l,
                               const std::string& learner_m) {
  NuisanceStrategy s;
  s.approach = parse_approach(approach);
  s.l = default_learner(parse_learner_kind(learner_l.empty() ? learner : learner_l));
  s.m = default_learner(parse_learner_kind(learner_m.empty() ? learner : learner_m));
  return s;
}

DmlOptions make_options(const std::string& score, int folds, std::uint64_t seed, bool diagnostics, bool tune, int threads) {
  DmlOptions o;
  o.score = parse_score(score);
  o.k_folds = folds;
  o.seed = seed;
  o.diagnostics = diagnostics;
  o.tune = tune;
  o.threads = threads;
  return o;
}

py::dict panel_dict(const PanelDataset& p) {
  py::dict out;
  out["unit"] = p.unit_ids;
  std::vector<std::int64_t> waves;
  for (int w : p.wave_ids) waves.push_back(p.wave_labels[static_cast<std::size_t>(w - 1)]);
  out["wave"] = waves;
  out["y"] = p.y;
  out["d"] = p.d;
  out["x"] = p.x;
  out["covariate_names"] = p.covariate_names;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Double machine learning for static panels with fixed effects";

  static py::exception<Error> base(m, "PanelDmlError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(base.ptr(), e.what());
    }
  });

  m.def("dictionary_width", &dictionary_width, py::arg("p"));
  m.def("expand_dictionary", [](const Eigen::MatrixXd& x) { return expand_dictionary(x).matrix; }, py::arg("x"));

  m.def(
      "generate_dgp",
      [](int design, Index n_units, Index n_waves, Index p, std::uint64_t seed, double theta) {
        DgpConfig cfg;
        cfg.design = design;
        cfg.n_units = n_units;
        cfg.n_waves = n_waves;
        cfg.p = p;
        cfg.seed = seed;
        cfg.theta = theta;
        const auto sim = generate_dgp(cfg);
        py::dict out = panel_dict(sim.panel);
        out["l_true"] = sim.oracle.l_true();
        out["m_true"] = sim.oracle.m_true();
        out["theta"] = theta;
        return out;
      },
      py::arg("design") = 1, py::arg("n_units") = 1000, py::arg("n_waves") = 10, py::arg("p") = 30,
      py::arg("seed") = 0, py::arg("theta") = 0.5);

  m.def(
      "estimate",
      [](const std::vector<std::int64_t>& unit, const std::vector<std::int64_t>& wave, const Eigen::VectorXd& y,
         const Eigen::VectorXd& d, const Eigen::MatrixXd& x, const std::string& approach, const std::string& score,
         const std::string& learner, const std::string& learner_l, const std::string& learner_m, int folds,
         std::uint64_t seed, bool diagnostics, bool tune, int threads) {
        const auto panel = panel_from_arrays(unit, wave, y, d, x, {});
        EstimateReport report;
        {
          py::gil_scoped_release release;
          report = dml_estimate(panel, make_strategy(approach, learner, learner_l, learner_m),
                                make_options(score, folds, seed, diagnostics, tune, threads));
        }
        return to_python(report.to_json());
      },
      py::arg("unit"), py::arg("wave"), py::arg("y"), py::arg("d"), py::arg("x"), py::arg("approach") = "cre",
      py::arg("score") = "po", py::arg("learner") = "ols", py::arg("learner_l") = "", py::arg("learner_m") = "",
      py::arg("folds") = 5, py::arg("seed") = 0, py::arg("diagnostics") = false, py::arg("tune") = true,
      py::arg("threads") = 0);

  m.def(
      "estimate_csv",
      [](const std::string& path, const std::string& approach, const std::string& score, const std::string& learner,
         int folds, std::uint64_t seed) {
        const auto panel = read_panel_csv(path);
        EstimateReport report;
        {
          py::gil_scoped_release release;
          report = dml_estimate(panel, make_strategy(approach, learner, "", ""),
                                make_options(score, folds, seed, false, true, 0));
        }
        return to_python(report.to_json());
      },
      py::arg("path"), py::arg("approach") = "cre", py::arg("score") = "po", py::arg("learner") = "ols",
      py::arg("folds") = 5, py::arg("seed") = 0);

  m.def(
      "monte_carlo",
      [](int design, Index n_units, Index n_waves, Index p, int reps, const std::string& approach,
         const std::string& learner, const std::string& score, int folds, std::uint64_t seed, bool oracle, int threads) {
        DgpConfig cfg;
        cfg.design = design;
        cfg.n_units = n_units;
        cfg.n_waves = n_waves;
        cfg.p = p;
        cfg.seed = seed;
        MonteCarloOptions mc;
        mc.replications = reps;
        mc.dml = make_options(score, folds, seed, false, true, threads);
        mc.oracle = oracle;
        mc.threads = threads;
        McSummary summary;
        {
          py::gil_scoped_release release;
          summary = run_monte_carlo(cfg, make_strategy(approach, learner, "", ""), mc);
        }
        return to_python(summary.to_json());
      },
      py::arg("design") = 1, py::arg("n_units") = 1000, py::arg("n_waves") = 10, py::arg("p") = 30,
      py::arg("reps") = 50, py::arg("approach") = "cre", py::arg("learner") = "ols", py::arg("score") = "po",
      py::arg("folds") = 5, py::arg("seed") = 0, py::arg("oracle") = false, py::arg("threads") = 0);

  m.def(
      "fit_predict",
      [](const std::string& learner, const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::MatrixXd& x_new,
         std::uint64_t seed) {
        const auto model = fit_learner(default_learner(parse_learner_kind(learner)), x, y, seed);
        return model.predict(x_new);
      },
      py::arg("learner"), py::arg("x"), py::arg("y"), py::arg("x_new"), py::arg("seed") = 0);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<std::string> argv{"panel-dml"};
        argv.insert(argv.end(), args.begin(), args.end());
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = run_cli(argv, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
