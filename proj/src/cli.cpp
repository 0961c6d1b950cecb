#include "panel_dml/cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "panel_dml/dml.hpp"
#include "panel_dml/errors.hpp"
#include "panel_dml/rng.hpp"
#include "panel_dml/simulation.hpp"
#include "panel_dml/tuning.hpp"

namespace panel_dml {

namespace {

struct CommonArgs {
  std::string approach = "cre";
  std::string score = "po";
  std::string learner = "ols";
  std::string learner_l;
  std::string learner_m;
  std::vector<std::string> params;
  std::string specs_file;
  int folds = 5;
  std::uint64_t seed = 0;
  int threads = 0;
  std::string out;
  bool diagnostics = false;
  bool tune_on_folds = false;
  bool no_tune = false;
  int resolution = 5;
  int n_evals = 5;
  std::string correction = "unweighted";
};

void add_learner_options(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--approach", a.approach, "cre|fd-exact|hybrid-wg|hybrid-fd|approx-wg|approx-fd")->capture_default_str();
  cmd->add_option("--learner", a.learner, "ols|lasso|cart|rf|boost for both nuisances")->capture_default_str();
  cmd->add_option("--learner-l", a.learner_l, "learner for the outcome nuisance");
  cmd->add_option("--learner-m", a.learner_m, "learner for the treatment nuisance");
  cmd->add_option("--param", a.params, "hyperparameter override name=value (both learners; repeatable)");
  cmd->add_option("--specs", a.specs_file, "JSON file with tuned learner specs {\"l\": ..., \"m\": ...}");
  cmd->add_option("--seed", a.seed, "random seed")->capture_default_str();
  cmd->add_option("--threads", a.threads, "thread cap (0: PANEL_DML_THREADS or hardware)")->capture_default_str();
  cmd->add_option("--resolution", a.resolution, "tuning: values drawn per hyperparameter and evaluation")->capture_default_str();
  cmd->add_option("--n-evals", a.n_evals, "tuning: number of evaluations")->capture_default_str();
  cmd->add_option("--out", a.out, "output JSON path");
}

void add_estimation_options(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--score", a.score, "po|iv|no")->capture_default_str();
  cmd->add_option("--folds", a.folds, "cross-fitting folds")->capture_default_str();
  cmd->add_option("--correction", a.correction, "fold-dispersion term: unweighted|unit-weighted|none")->capture_default_str();
  cmd->add_flag("--diagnostics", a.diagnostics, "allow a single fold (train and evaluate on every unit)");
  cmd->add_flag("--tune-on-folds", a.tune_on_folds, "tune inside every cross-fitting fold");
  cmd->add_flag("--no-tune", a.no_tune, "use the given hyperparameters without grid search");
}

LearnerSpec make_learner(const std::string& name, const CommonArgs& a) {
  LearnerSpec spec = default_learner(parse_learner_kind(name));
  for (const auto& p : a.params) {
    const auto eq = p.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::InvalidArgument, "--param expects name=value, got '" + p + "'");
    const std::string key = p.substr(0, eq);
    const std::string text = p.substr(eq + 1);
    double value = 0.0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || end != text.data() + text.size()) {
      throw Error(ErrorCode::InvalidArgument, "--param value for '" + key + "' is not a number");
    }
    try {
      set_hyperparameter(spec, key, value);
      if (spec.tuning) {
        std::erase_if(spec.tuning->ranges, [&](const HyperRange& r) { return r.name == key; });
        if (spec.tuning->ranges.empty()) spec.tuning.reset();
      }
    } catch (const Error&) {
      if (a.learner_l.empty() && a.learner_m.empty()) throw;
    }
  }
  if (spec.tuning) {
    spec.tuning->resolution = a.resolution;
    spec.tuning->n_evals = a.n_evals;
  }
  check_learner(spec);
  return spec;
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, "'" + path + "': " + e.what());
  }
}

NuisanceStrategy make_strategy(const CommonArgs& a) {
  NuisanceStrategy s;
  s.approach = parse_approach(a.approach);
  if (!a.specs_file.empty()) {
    const auto j = read_json_file(a.specs_file);
    try {
      s.l = learner_from_json(j.at("l"));
      s.m = learner_from_json(j.at("m"));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError, "'" + a.specs_file + "': " + e.what());
    }
    return s;
  }
  s.l = make_learner(a.learner_l.empty() ? a.learner : a.learner_l, a);
  s.m = make_learner(a.learner_m.empty() ? a.learner : a.learner_m, a);
  return s;
}

DmlOptions make_options(const CommonArgs& a) {
  DmlOptions o;
  o.score = parse_score(a.score);
  o.k_folds = a.folds;
  o.seed = a.seed;
  o.threads = a.threads;
  o.diagnostics = a.diagnostics;
  o.tune = !a.no_tune;
  o.tune_on_folds = a.tune_on_folds;
  o.correction = parse_correction(a.correction);
  if (o.k_folds == 1 && !o.diagnostics) {
    throw Error(ErrorCode::InvalidArgument, "--folds 1 is only allowed together with --diagnostics");
  }
  if (o.k_folds < 1) throw Error(ErrorCode::InvalidArgument, "--folds must be positive");
  return o;
}

nlohmann::json common_config(const CommonArgs& a, const NuisanceStrategy& s) {
  return {{"approach", a.approach},
          {"score", a.score},
          {"learner_l", to_json(s.l)},
          {"learner_m", to_json(s.m)},
          {"folds", a.folds},
          {"seed", a.seed},
          {"diagnostics", a.diagnostics},
          {"tune", !a.no_tune},
          {"tune_on_folds", a.tune_on_folds},
          {"correction", a.correction}};
}

void write_text(const std::string& path, const std::string& text) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  std::ofstream out(target, std::ios::binary);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write '" + path + "'");
  out << text;
}

std::string with_extension(const std::string& path, const char* ext) {
  return std::filesystem::path(path).replace_extension(ext).string();
}

std::string fmt(double v, int decimals = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

int cmd_estimate(const CommonArgs& a, const std::string& data, const std::string& scores_out, std::ostream& out) {
  const auto strategy = make_strategy(a);
  const auto options = make_options(a);
  const PanelDataset panel = read_panel_csv(data);
  const auto report = dml_estimate(panel, strategy, options);

  out << "theta  " << fmt(report.theta) << report.stars() << "\n"
      << "se     " << fmt(report.se) << "\n"
      << "95% CI [" << fmt(report.ci_low) << ", " << fmt(report.ci_high) << "]\n"
      << "p      " << fmt(report.p_value) << "\n"
      << "approach " << to_string(report.approach) << ", score " << to_string(report.score) << ", learners "
      << report.learner_l << "/" << report.learner_m << ", folds " << report.k_folds << ", units " << report.n_units
      << ", waves " << report.n_waves << "\n";
  if (report.biased_score) out << "note: the no-orthogonalization score is biased; use it for diagnostics only\n";
  out << "significance: * p<0.10, ** p<0.05, *** p<0.01\n";

  if (!a.out.empty()) {
    nlohmann::json j = report.to_json();
    auto config = common_config(a, strategy);
    config["command"] = "estimate";
    config["data"] = data;
    j["config"] = std::move(config);
    write_text(a.out, j.dump(2) + "\n");
  }
  if (!scores_out.empty()) write_text(scores_out, format_scores_csv(report));
  return kExitOk;
}

struct SimulateArgs {
  int dgp = 1;
  Index n = 1000;
  Index t = 10;
  Index p = 30;
  int reps = 50;
  std::string trace;
  bool oracle = false;
  bool population = false;
  Index population_size = 1'000'000;
  std::uint64_t population_seed = 0;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int cmd_simulate(const CommonArgs& a, const SimulateArgs& sim, std::ostream& out) {
  if (sim.dgp < 1 || sim.dgp > 3) throw Error(ErrorCode::InvalidArgument, "--dgp must be 1, 2 or 3");
  if (sim.reps < 2) throw Error(ErrorCode::InvalidArgument, "--reps must be at least 2");
  DgpConfig cfg;
  cfg.design = sim.dgp;
  cfg.n_units = sim.n;
  cfg.n_waves = sim.t;
  cfg.p = sim.p;
  cfg.seed = a.seed;
  cfg.population_mode = sim.population;
  cfg.population_size = sim.population_size;
  cfg.population_seed = sim.population_seed;
  check_dgp(cfg);
  const auto options = make_options(a);

  MonteCarloOptions mc;
  mc.replications = sim.reps;
  mc.dml = options;
  mc.oracle = sim.oracle;
  mc.threads = a.threads;

  std::vector<McSummary> summaries;
  nlohmann::json learners = nlohmann::json::array();
  const auto approaches = split_list(a.approach);
  const auto learner_names = split_list(a.learner);
  if (approaches.empty() || learner_names.empty()) throw Error(ErrorCode::InvalidArgument, "empty approach or learner list");
  for (const auto& learner : learner_names) {
    for (const auto& approach : approaches) {
      CommonArgs row = a;
      row.approach = approach;
      row.learner = learner;
      const auto strategy = make_strategy(row);
      summaries.push_back(run_monte_carlo(cfg, strategy, mc));
      learners.push_back({{"approach", approach}, {"l", to_json(strategy.l)}, {"m", to_json(strategy.m)}});
      if (sim.oracle) break;
    }
  }
  const auto table = emit_table(summaries);
  out << table.text;
  for (const auto& s : summaries) {
    if (s.failures > 0) out << s.label() << ": " << s.failures << " failed replications excluded\n";
  }

  if (!a.out.empty()) {
    nlohmann::json j;
    CommonArgs first = a;
    first.approach = approaches.front();
    first.learner = learner_names.front();
    auto config = common_config(first, make_strategy(first));
    config["approach"] = a.approach;
    config["learner"] = a.learner;
    config["command"] = "simulate";
    config["dgp"] = cfg.to_json();
    config["reps"] = sim.reps;
    config["oracle"] = sim.oracle;
    config["strategies"] = std::move(learners);
    j["config"] = std::move(config);
    j["summaries"] = nlohmann::json::array();
    for (const auto& s : summaries) j["summaries"].push_back(s.to_json());
    write_text(a.out, j.dump(2) + "\n");
    write_text(with_extension(a.out, ".csv"), table.csv);
    write_text(with_extension(a.out, ".txt"), table.text);
  }
  if (!sim.trace.empty()) {
    std::string csv;
    for (std::size_t i = 0; i < summaries.size(); ++i) {
      std::string part = format_trace_csv(summaries[i]);
      std::istringstream lines(part);
      std::string line;
      std::getline(lines, line);
      if (i == 0) csv += "learner,approach," + line + "\n";
      while (std::getline(lines, line)) csv += summaries[i].learner + "," + summaries[i].approach + "," + line + "\n";
    }
    write_text(sim.trace, csv);
  }
  return kExitOk;
}

int cmd_tune(const CommonArgs& a, const std::string& data, int cv_folds, std::ostream& out) {
  NuisanceStrategy strategy = make_strategy(a);
  const PanelDataset panel = read_panel_csv(data);
  const FeatureSet features = build_features(panel, strategy);
  std::vector<Index> groups;
  for (Index i = 0; i < features.n_units; ++i) groups.insert(groups.end(), static_cast<std::size_t>(features.fit_waves), i);

  nlohmann::json j;
  nlohmann::json trials;
  auto tune_one = [&](LearnerSpec& spec, const Eigen::VectorXd& target, const char* which, std::uint64_t stream) {
    if (!spec.tuning) {
      out << which << ": " << spec.id() << " has no tuning grid; kept as given\n";
      return;
    }
    spec.tuning->cv_folds = cv_folds;
    const auto result =
        grid_search_tune(spec, features.features_for(spec), target, mix_seed(a.seed, stream), groups, a.threads);
    spec = result.best;
    out << which << ": " << spec.id() << " cv rmse " << fmt(result.best_cv_rmse) << " after " << result.trials.size()
        << " configurations:";
    const auto spec_json = to_json(spec);
    for (const auto& [key, value] : spec_json.items()) {
      if (key != "kind") out << " " << key << "=" << value.dump();
    }
    out << "\n";
    trials[which] = result.to_json();
  };
  tune_one(strategy.l, features.y_fit, "l", 11);
  tune_one(strategy.m, features.d_fit, "m", 12);

  j["l"] = to_json(strategy.l);
  j["m"] = to_json(strategy.m);
  j["search"] = std::move(trials);
  auto config = common_config(a, strategy);
  config["command"] = "tune";
  config["data"] = data;
  config["cv_folds"] = cv_folds;
  j["config"] = std::move(config);
  if (!a.out.empty()) write_text(a.out, j.dump(2) + "\n");
  return kExitOk;
}

int exit_code_for(const Error& e) {
  if (e.is_data_error()) return kExitData;
  if (e.is_numerical_error()) return kExitNumerical;
  return kExitUsage;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Double machine learning for panel data with fixed effects", "panel-dml"};
  app.set_config("--config", "", "INI file; section names select the subcommand, flags win");
  app.require_subcommand(1);

  CommonArgs est_args;
  std::string est_data;
  std::string scores_out;
  auto* estimate = app.add_subcommand("estimate", "Estimate theta on a CSV panel");
  estimate->add_option("--data", est_data, "CSV with columns unit, wave, y, d and covariates")->required();
  estimate->add_option("--scores-out", scores_out, "write per-row scores as CSV");
  add_learner_options(estimate, est_args);
  add_estimation_options(estimate, est_args);

  CommonArgs sim_args;
  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo study on a simulated design");
  simulate->add_option("--dgp", sim.dgp, "design 1|2|3")->required();
  simulate->add_option("--n", sim.n, "units per replication")->capture_default_str();
  simulate->add_option("--t", sim.t, "waves")->capture_default_str();
  simulate->add_option("--p", sim.p, "covariates")->capture_default_str();
  simulate->add_option("--reps", sim.reps, "replications")->capture_default_str();
  simulate->add_option("--trace", sim.trace, "write per-replication estimates as CSV");
  simulate->add_flag("--oracle", sim.oracle, "use the true nuisance functions instead of learners");
  simulate->add_flag("--population", sim.population, "subsample from a fixed finite population");
  simulate->add_option("--population-size", sim.population_size)->capture_default_str();
  simulate->add_option("--population-seed", sim.population_seed)->capture_default_str();
  add_learner_options(simulate, sim_args);
  add_estimation_options(simulate, sim_args);

  CommonArgs tune_args;
  std::string tune_data;
  int tune_folds = 5;
  auto* tune = app.add_subcommand("tune", "Grid-search learner hyperparameters on a CSV panel");
  tune->add_option("--data", tune_data, "CSV panel")->required();
  tune->add_option("--folds", tune_folds, "cross-validation folds")->capture_default_str();
  add_learner_options(tune, tune_args);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << "run 'panel-dml --help' for usage\n";
    return kExitUsage;
  }

  try {
    if (*estimate) return cmd_estimate(est_args, est_data, scores_out, out);
    if (*simulate) return cmd_simulate(sim_args, sim, out);
    if (*tune) return cmd_tune(tune_args, tune_data, tune_folds, out);
  } catch (const Error& e) {
    const int code = exit_code_for(e);
    err << (code == kExitUsage ? "usage error: " : code == kExitData ? "data error: " : "numerical failure: ") << e.what()
        << "\n";
    return code;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace panel_dml
