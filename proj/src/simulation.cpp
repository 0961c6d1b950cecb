#include "panel_dml/simulation.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <random>
#include <tuple>
#include <unordered_set>

#include "panel_dml/errors.hpp"
#include "panel_dml/parallel.hpp"
#include "panel_dml/rng.hpp"

namespace panel_dml {

nlohmann::json DgpConfig::to_json() const {
  return {{"design", design},   {"n_units", n_units}, {"n_waves", n_waves},
          {"p", p},             {"theta", theta},     {"a", a},
          {"b", b},             {"x_sd", x_sd},       {"a_sd", a_sd},
          {"c_sd", c_sd},       {"u_sd", u_sd},       {"v_sd", v_sd},
          {"population_mode", population_mode},       {"population_size", population_size},
          {"population_seed", population_seed},       {"seed", seed}};
}

void check_dgp(const DgpConfig& config) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorCode::InvalidArgument, what);
  };
  require(config.design >= 1 && config.design <= 3, "design must be 1, 2 or 3");
  require(config.n_units >= 1, "n_units must be positive");
  require(config.n_waves >= 1, "n_waves must be positive");
  require(config.p >= 3, "p must be at least 3 (the design uses covariates 1 and 3)");
  for (double sd : {config.x_sd, config.a_sd, config.c_sd, config.u_sd, config.v_sd}) {
    require(std::isfinite(sd) && sd >= 0.0, "standard deviations must be finite and nonnegative");
  }
  if (config.population_mode) {
    require(config.population_size >= config.n_units, "population_size must be at least n_units");
  }
}

namespace {

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

double dgp_l0(const DgpConfig& config, double x1, double x3) {
  switch (config.design) {
    case 1: return config.a * x1 + x3;
    case 2: return logistic(x1) + config.a * std::cos(x3);
    case 3: return config.b * x1 * x3 + config.a * x3 * (x3 > 0.0 ? 1.0 : 0.0);
  }
  throw Error(ErrorCode::InvalidArgument, "design must be 1, 2 or 3");
}

double dgp_m0(const DgpConfig& config, double x1, double x3) {
  switch (config.design) {
    case 1: return config.a * x1 + x3;
    case 2: return std::cos(x1) + config.a * logistic(x3);
    case 3: return config.a * x1 * (x1 > 0.0 ? 1.0 : 0.0) + config.b * x1 * x3;
  }
  throw Error(ErrorCode::InvalidArgument, "design must be 1, 2 or 3");
}

namespace {

struct UnitDraw {
  double c = 0.0;
  double a = 0.0;
  Eigen::VectorXd v;
  Eigen::VectorXd u;
  Eigen::MatrixXd x;  // T x p, or T x 3 with only columns 0 and 2 filled
};

/// Draw order: c, a, V, U, x1, x3, then the remaining covariates column by column.
UnitDraw draw_unit(const DgpConfig& cfg, std::uint64_t seed, std::uint64_t stream, bool all_columns) {
  Rng rng = make_rng(seed, stream);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Index t = cfg.n_waves;
  UnitDraw out;
  out.c = cfg.c_sd * normal(rng);
  out.a = cfg.a_sd * normal(rng);
  out.v.resize(t);
  out.u.resize(t);
  for (Index w = 0; w < t; ++w) out.v[w] = cfg.v_sd * normal(rng);
  for (Index w = 0; w < t; ++w) out.u[w] = cfg.u_sd * normal(rng);
  out.x = Eigen::MatrixXd::Zero(t, all_columns ? cfg.p : 3);
  for (Index col : {Index{0}, Index{2}}) {
    for (Index w = 0; w < t; ++w) out.x(w, col) = cfg.x_sd * normal(rng);
  }
  if (all_columns) {
    for (Index col = 1; col < cfg.p; ++col) {
      if (col == 2) continue;
      for (Index w = 0; w < t; ++w) out.x(w, col) = cfg.x_sd * normal(rng);
    }
  }
  return out;
}

double unit_treatment_sum(const DgpConfig& cfg, const UnitDraw& draw) {
  double s = 0.0;
  for (Index w = 0; w < cfg.n_waves; ++w) s += dgp_m0(cfg, draw.x(w, 0), draw.x(w, 2)) + draw.c + draw.v[w];
  return s;
}

using PopulationKey = std::tuple<int, Index, Index, std::uint64_t, double, double, double, double, double>;

double population_treatment_mean(const DgpConfig& cfg) {
  static std::mutex guard;
  static std::map<PopulationKey, double> cache;
  const PopulationKey key{cfg.design, cfg.population_size, cfg.n_waves, cfg.population_seed,
                          cfg.a,      cfg.b,               cfg.x_sd,    cfg.c_sd,
                          cfg.v_sd};
  std::lock_guard lock(guard);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  double total = 0.0;
  for (Index i = 0; i < cfg.population_size; ++i) {
    total += unit_treatment_sum(cfg, draw_unit(cfg, cfg.population_seed, static_cast<std::uint64_t>(i), false));
  }
  const double mean = total / static_cast<double>(cfg.population_size * cfg.n_waves);
  cache.emplace(key, mean);
  return mean;
}

std::vector<Index> sample_population(const DgpConfig& cfg) {
  Rng rng = make_rng(cfg.seed, 0x706f70);
  std::unordered_set<Index> chosen;
  std::vector<Index> out;
  const Index n = cfg.n_units;
  const Index big = cfg.population_size;
  for (Index j = big - n; j < big; ++j) {
    auto pick = static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(j + 1)));
    if (chosen.contains(pick)) pick = j;
    chosen.insert(pick);
    out.push_back(pick);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

SimulatedPanel generate_dgp(const DgpConfig& config) {
  check_dgp(config);
  const Index n = config.n_units;
  const Index t = config.n_waves;
  const Index p = config.p;
  std::vector<Index> population_index;
  if (config.population_mode) population_index = sample_population(config);

  SimulatedPanel sim;
  auto& panel = sim.panel;
  auto& oracle = sim.oracle;
  const Index rows = n * t;
  panel.n_units = n;
  panel.n_waves = t;
  panel.x.resize(rows, p);
  panel.y.resize(rows);
  panel.d.resize(rows);
  panel.unit_ids.resize(static_cast<std::size_t>(rows));
  panel.wave_ids.resize(static_cast<std::size_t>(rows));
  panel.covariate_names = default_covariate_names(p);
  for (Index w = 0; w < t; ++w) panel.wave_labels.push_back(w + 1);
  oracle.theta = config.theta;
  for (auto* v : {&oracle.l0, &oracle.m0, &oracle.alpha, &oracle.c, &oracle.u, &oracle.v}) v->resize(rows);

  std::vector<double> a_i(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const auto label = config.population_mode ? population_index[static_cast<std::size_t>(i)] : i;
    const auto stream_seed = config.population_mode ? config.population_seed : config.seed;
    UnitDraw draw = draw_unit(config, stream_seed, static_cast<std::uint64_t>(label), true);
    a_i[static_cast<std::size_t>(i)] = draw.a;
    for (Index w = 0; w < t; ++w) {
      const Index r = i * t + w;
      panel.unit_ids[static_cast<std::size_t>(r)] = label + 1;
      panel.wave_ids[static_cast<std::size_t>(r)] = static_cast<int>(w + 1);
      panel.x.row(r) = draw.x.row(w);
      const double x1 = draw.x(w, 0);
      const double x3 = draw.x(w, 2);
      oracle.l0[r] = dgp_l0(config, x1, x3);
      oracle.m0[r] = dgp_m0(config, x1, x3);
      oracle.c[r] = draw.c;
      oracle.u[r] = draw.u[w];
      oracle.v[r] = draw.v[w];
      panel.d[r] = oracle.m0[r] + draw.c + draw.v[w];
    }
  }
  oracle.d_bar = config.population_mode ? population_treatment_mean(config) : panel.d.mean();
  for (Index i = 0; i < n; ++i) {
    const double d_mean = panel.d.segment(i * t, t).mean();
    const double x_mean = (panel.x.col(0).segment(i * t, t) + panel.x.col(2).segment(i * t, t)).mean();
    const double alpha = 0.25 * (d_mean - oracle.d_bar) + 0.25 * x_mean + a_i[static_cast<std::size_t>(i)];
    for (Index w = 0; w < t; ++w) {
      const Index r = i * t + w;
      oracle.alpha[r] = alpha;
      panel.y[r] = panel.d[r] * config.theta + oracle.l0[r] + alpha + oracle.u[r];
    }
  }
  return sim;
}

// ---------------------------------------------------------------------------
// Monte Carlo

nlohmann::json McSummary::to_json() const {
  auto trace_json = nlohmann::json::array();
  for (const auto& r : trace) {
    nlohmann::json j{{"replication", r.replication}, {"seed", r.seed}, {"ok", r.ok}};
    if (r.ok) {
      j["theta"] = r.theta;
      j["se"] = r.se;
      j["moment_residual"] = r.moment_residual;
    } else {
      j["error"] = r.error;
    }
    trace_json.push_back(std::move(j));
  }
  return {{"learner", learner},
          {"approach", approach},
          {"score", score},
          {"theta0", theta0},
          {"replications", replications},
          {"failures", failures},
          {"bias", bias},
          {"rmse", rmse},
          {"se_sd_ratio", se_sd_ratio},
          {"mean_se", mean_se},
          {"sd_theta", sd_theta},
          {"mc_se", mc_se},
          {"model_rmse", model_rmse},
          {"rmse_l", rmse_l},
          {"rmse_m", rmse_m},
          {"max_moment_residual", max_moment_residual},
          {"trace", std::move(trace_json)}};
}

McSummary summarize_replications(std::vector<ReplicationResult> results, double theta0) {
  McSummary s;
  s.theta0 = theta0;
  std::sort(results.begin(), results.end(),
            [](const ReplicationResult& a, const ReplicationResult& b) { return a.replication < b.replication; });
  double sum_dev = 0.0, sum_sq = 0.0, sum_theta = 0.0, sum_se = 0.0;
  for (const auto& r : results) {
    if (!r.ok) {
      ++s.failures;
      continue;
    }
    ++s.replications;
    sum_dev += r.theta - theta0;
    sum_sq += (r.theta - theta0) * (r.theta - theta0);
    sum_theta += r.theta;
    sum_se += r.se;
    s.model_rmse += r.model_rmse;
    s.rmse_l += r.rmse_l;
    s.rmse_m += r.rmse_m;
    s.max_moment_residual = std::max(s.max_moment_residual, r.moment_residual);
  }
  if (s.replications > 0) {
    const auto n = static_cast<double>(s.replications);
    s.bias = sum_dev / n;
    s.rmse = std::sqrt(sum_sq / n);
    s.mean_se = sum_se / n;
    s.model_rmse /= n;
    s.rmse_l /= n;
    s.rmse_m /= n;
    if (s.replications > 1) {
      const double mean = sum_theta / n;
      double var = 0.0;
      for (const auto& r : results) {
        if (r.ok) var += (r.theta - mean) * (r.theta - mean);
      }
      s.sd_theta = std::sqrt(var / (n - 1.0));
      s.mc_se = s.sd_theta / std::sqrt(n);
      s.se_sd_ratio = s.sd_theta > 0.0 ? s.mean_se / s.sd_theta : 0.0;
    }
  }
  s.trace = std::move(results);
  return s;
}

McSummary run_monte_carlo(const DgpConfig& config, const NuisanceStrategy& strategy, const MonteCarloOptions& options) {
  check_dgp(config);
  if (options.replications < 2) throw Error(ErrorCode::InvalidArgument, "at least 2 replications are required");
  const int threads = resolve_threads(options.threads);
  std::vector<ReplicationResult> results(static_cast<std::size_t>(options.replications));
  parallel_for(results.size(), threads, [&](std::size_t r) {
    ReplicationResult& out = results[r];
    out.replication = static_cast<int>(r);
    out.seed = mix_seed(config.seed, r);
    DgpConfig cfg = config;
    cfg.seed = out.seed;
    DmlOptions dml = options.dml;
    dml.seed = out.seed;
    dml.threads = threads > 1 ? 1 : dml.threads;
    try {
      const auto sim = generate_dgp(cfg);
      const auto report =
          options.oracle
              ? dml_estimate_oracle(sim.panel, strategy.approach, sim.oracle.l_true(), sim.oracle.m_true(), dml)
              : dml_estimate(sim.panel, strategy, dml);
      out.ok = true;
      out.theta = report.theta;
      out.se = report.se;
      out.rmse_l = report.rmse_l;
      out.rmse_m = report.rmse_m;
      out.model_rmse = report.model_rmse;
      out.moment_residual = report.moment_residual;
    } catch (const Error& e) {
      out.ok = false;
      out.error = e.what();
    }
  });
  McSummary summary = summarize_replications(std::move(results), config.theta);
  summary.learner = options.oracle ? std::string("oracle")
                                   : (strategy.l.id() == strategy.m.id() ? strategy.l.id()
                                                                         : strategy.l.id() + "+" + strategy.m.id());
  summary.approach = to_string(strategy.approach);
  summary.score = to_string(options.dml.score);
  return summary;
}

namespace {

std::string shortest(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

FormattedTable emit_table(const std::vector<McSummary>& summaries) {
  if (summaries.empty()) throw Error(ErrorCode::InvalidArgument, "emit_table needs at least one summary");
  static const char* metric_names[] = {"Bias", "RMSE", "SE/SD", "Model RMSE", "RMSE_l", "RMSE_m"};
  auto metrics = [](const McSummary& s) {
    return std::array<double, 6>{s.bias, s.rmse, s.se_sd_ratio, s.model_rmse, s.rmse_l, s.rmse_m};
  };

  FormattedTable table;
  table.csv = "learner,approach,score,replications";
  for (const char* m : metric_names) table.csv += std::string(",") + m;
  table.csv += "\n";
  for (const auto& s : summaries) {
    table.csv += csv_field(s.learner) + "," + csv_field(s.approach) + "," + csv_field(s.score) + "," +
                 std::to_string(s.replications);
    for (double v : metrics(s)) table.csv += "," + shortest(v);
    table.csv += "\n";
  }

  std::vector<std::vector<std::string>> cells;
  cells.push_back({"Learner", "Approach", "Score", "R"});
  for (const char* m : metric_names) cells.back().push_back(m);
  for (const auto& s : summaries) {
    std::vector<std::string> row{s.learner, s.approach, s.score, std::to_string(s.replications)};
    for (double v : metrics(s)) row.push_back(fixed4(v));
    cells.push_back(std::move(row));
  }
  std::vector<std::size_t> width(cells.front().size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  for (const auto& row : cells) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      const std::string pad(width[c] - row[c].size(), ' ');
      if (c > 0) line += "  ";
      line += c < 3 ? row[c] + pad : pad + row[c];
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    table.text += line + "\n";
  }
  return table;
}

std::string format_trace_csv(const McSummary& summary) {
  std::string out = "replication,seed,ok,theta,se\n";
  for (const auto& r : summary.trace) {
    out += std::to_string(r.replication) + "," + std::to_string(r.seed) + "," + (r.ok ? "1" : "0") + ",";
    out += r.ok ? shortest(r.theta) + "," + shortest(r.se) : std::string(",");
    out += "\n";
  }
  return out;
}

}  // namespace panel_dml
