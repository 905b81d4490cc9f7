// Command-line front end: Riccati oracle, tabular solvers and HJ DQN runs.
//
// Exit codes: 0 success, 2 configuration error, 3 numerical divergence.

#include "hjq/experiment.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace hjq;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

struct CommonFlags {
  std::string config;
  std::optional<long> seed;
  std::optional<std::string> out;
  std::optional<long> steps;
  std::vector<std::string> sets;  ///< key=value overrides
  std::vector<std::pair<std::string, std::string>> fields;  ///< from per-field flags
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "Config file (key = value lines)");
  cmd->add_option("--seed", f.seed, "Run this single seed");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--steps", f.steps, "Environment steps (training) or iterations (tabular)");
  cmd->add_option("--set", f.sets, "Override a config key: --set key=value (repeatable)");
}

/// One `--<key>` flag per config key, except those covered by the common flags.
void add_field_flags(CLI::App* cmd, CommonFlags& f, std::vector<std::string>& storage) {
  const auto& table = detail::fields();
  storage.resize(table.size());
  for (std::size_t i = 0; i < table.size(); ++i) {
    const std::string& key = table[i].key;
    if (key == "out" || key == "seeds" || key == "total_steps") continue;
    std::string flag = key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    cmd->add_option("--" + flag, storage[i], "Config key " + key)
        ->each([&f, key](const std::string& v) { f.fields.emplace_back(key, v); });
  }
}

enum class StepsMeaning { env_steps, iterations };

ExperimentConfig resolve(const CommonFlags& f, StepsMeaning steps) {
  ExperimentConfig c = f.config.empty() ? ExperimentConfig{} : load_config(f.config);
  for (const auto& [k, v] : f.fields) set_field(c, k, v);
  for (const std::string& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_field(c, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }
  if (f.seed) c.seeds = {*f.seed};
  if (f.out) c.out = *f.out;
  if (f.steps) {
    if (steps == StepsMeaning::env_steps)
      c.total_steps = *f.steps;
    else
      c.grid_iterations = *f.steps;
  }
  validate(c);
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

int cmd_riccati(const CommonFlags& f) {
  ExperimentConfig c = resolve(f, StepsMeaning::env_steps);
  if (c.benchmark == "grid-lq1d") c.benchmark = "lq";
  const LqBenchmark b = make_lq_benchmark(c);
  nlohmann::ordered_json j;
  j["gamma"] = c.resolved_gamma();
  j["A"] = detail::matrix_json(b.lq.A);
  j["B"] = detail::matrix_json(b.lq.B);
  j["P"] = detail::matrix_json(b.riccati.P);
  j["K"] = detail::matrix_json(b.riccati.gain);
  j["residual"] = b.riccati.residual;
  j["integration_steps"] = b.riccati.steps;
  nlohmann::ordered_json states = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < b.eval_states.size(); ++i) {
    const Vector& x = b.eval_states[i];
    states.push_back({{"x0", std::vector<double>(x.data(), x.data() + x.size())},
                      {"optimal_cost", b.optimal_costs[i]}});
  }
  j["eval_states"] = states;
  const std::string text = j.dump(2) + "\n";
  write_text(fs::path(c.out) / "riccati.json", text);
  std::cout << text;
  return 0;
}

std::string tabular_csv(const std::vector<TabularRow>& rows) {
  std::string s = "iter,sup_residual,sup_error_to_fixed_point,bound\n";
  char buf[160];
  for (const TabularRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g\n", r.iter, r.sup_residual,
                  r.sup_error_to_fixed_point, r.bound);
    s += buf;
  }
  return s;
}

std::string grid_values_csv(const GridQ& q) {
  std::string s = "x,a,q\n";
  char buf[128];
  Vector x, a;
  for (std::size_t i = 0; i < q.size(); ++i) {
    q.node(i, x, a);
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", x[0], a[0], q[i]);
    s += buf;
  }
  return s;
}

struct GridSetup {
  ControlSystem sys;
  GridQ q0;
  BellmanOperator op;
  ValueIterationResult fixed;
};

GridSetup solve_grid(const ExperimentConfig& c) {
  ControlSystem sys = make_grid_benchmark(c);
  GridQ q0(sys.state_box, sys.action_box, c.grid_resolution);
  BellmanOperator op(sys, q0, c.grid_h, c.grid_L);
  ValueIterationResult fixed = value_iterate(q0, op, sys.gamma, c.grid_tol, 10'000'000);
  return {std::move(sys), std::move(q0), std::move(op), std::move(fixed)};
}

int cmd_grid_solve(const CommonFlags& f) {
  const ExperimentConfig c = resolve(f, StepsMeaning::iterations);
  const GridSetup g = solve_grid(c);
  const auto rows = track_q_sync(g.q0, g.fixed.q, g.op, g.sys.gamma, QSyncSchedule::constant(1.0),
                                 c.grid_iterations);
  write_text(fs::path(c.out) / "grid_solve.csv", tabular_csv(rows));
  write_text(fs::path(c.out) / "q_fixed_point.csv", grid_values_csv(g.fixed.q));
  std::cout << "value iteration: " << g.fixed.iterations << " sweeps, residual "
            << g.fixed.residual << ", error bound " << g.fixed.error_bound << "\n";
  return 0;
}

int cmd_qlearn_tabular(const CommonFlags& f) {
  const ExperimentConfig c = resolve(f, StepsMeaning::iterations);
  const GridSetup g = solve_grid(c);
  const QSyncSchedule schedule = c.grid_schedule == "harmonic"
                                     ? QSyncSchedule::harmonic()
                                     : QSyncSchedule::constant(c.grid_alpha);
  const auto rows = track_q_sync(g.q0, g.fixed.q, g.op, g.sys.gamma, schedule, c.grid_iterations);
  write_text(fs::path(c.out) / "qlearn_tabular.csv", tabular_csv(rows));
  const TabularRow& last = rows.back();
  std::cout << "after " << last.iter << " updates: error " << last.sup_error_to_fixed_point
            << ", bound " << last.bound << "\n";
  return 0;
}

int report(const std::vector<SeedCurve>& curves) {
  bool diverged = false;
  for (const SeedCurve& curve : curves) {
    if (!curve.error.empty()) {
      std::cerr << "seed " << curve.seed << " failed: " << curve.error << "\n";
      diverged = diverged || curve.diverged;
      continue;
    }
    std::cout << "seed " << curve.seed << ": cost_ratio_log10 "
              << detail::fmt_metric(curve.points.front().cost_ratio_log10) << " -> "
              << detail::fmt_metric(curve.points.back().cost_ratio_log10)
              << " (aborted episodes " << curve.aborted_episodes << ")\n";
  }
  const Summary s = summarize(curves);
  std::cout << "median final " << detail::fmt_metric(s.median_final) << " +- "
            << detail::fmt_metric(s.half_std_final) << "\n";
  return diverged ? kExitDivergence : 0;
}

int cmd_train(const CommonFlags& f) {
  const ExperimentConfig c = resolve(f, StepsMeaning::env_steps);
  if (c.benchmark == "grid-lq1d")
    throw ConfigError("train-hjdqn needs an LQ benchmark (lq or lq-sde)");
  return report(run_experiment(c));
}

int cmd_ablate(const CommonFlags& f, const std::string& field, const std::vector<std::string>& values) {
  const ExperimentConfig base = resolve(f, StepsMeaning::env_steps);
  if (values.empty()) throw ConfigError("ablate: --values must list at least one value");
  std::string table = "field,value,median_initial,median_final,half_std_final\n";
  int code = 0;
  for (const std::string& v : values) {
    ExperimentConfig variant = ablation_variant(base, field, v);
    variant.out = (fs::path(base.out) / (field + "=" + v)).string();
    std::cout << "== " << field << " = " << v << "\n";
    const auto curves = run_experiment(variant);
    if (report(curves) != 0) code = kExitDivergence;
    const Summary s = summarize(curves);
    table += field + "," + v + "," + detail::fmt_metric(s.median_initial) + "," +
             detail::fmt_metric(s.median_final) + "," + detail::fmt_metric(s.half_std_final) + "\n";
  }
  write_text(fs::path(base.out) / "ablation.csv", table);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  hjq::keep_large_allocations_on_heap();
  CLI::App app{"Continuous-time Q-learning: Riccati oracle, tabular HJB solvers, HJ DQN"};
  app.require_subcommand(1);
  // `-h` would collide with the sampling-interval flag `--h`.
  app.set_help_flag("--help", "Print this help message and exit");

  CommonFlags riccati_f, grid_f, tab_f, train_f, ablate_f;
  std::vector<std::string> train_storage, ablate_storage;
  std::string ablate_field;
  std::vector<std::string> ablate_values;

  auto* riccati = app.add_subcommand("riccati", "Solve the discounted CARE for the LQ benchmark");
  add_common(riccati, riccati_f);
  auto* grid = app.add_subcommand("grid-solve", "Value iteration on the 1-D clipped LQ grid");
  add_common(grid, grid_f);
  auto* tab = app.add_subcommand("qlearn-tabular", "Synchronous tabular Q-learning on the grid");
  add_common(tab, tab_f);
  auto* train = app.add_subcommand("train-hjdqn", "Train HJ DQN on an LQ benchmark");
  add_common(train, train_f);
  add_field_flags(train, train_f, train_storage);
  auto* ablate = app.add_subcommand("ablate", "Rerun training varying one config key");
  add_common(ablate, ablate_f);
  add_field_flags(ablate, ablate_f, ablate_storage);
  ablate->add_option("--field", ablate_field, "Config key to vary")->required();
  ablate->add_option("--values", ablate_values, "Comma-separated values")
      ->required()
      ->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*riccati) return cmd_riccati(riccati_f);
    if (*grid) return cmd_grid_solve(grid_f);
    if (*tab) return cmd_qlearn_tabular(tab_f);
    if (*train) return cmd_train(train_f);
    if (*ablate) return cmd_ablate(ablate_f, ablate_field, ablate_values);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "numerical divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const MaxIterationsExceeded& e) {
    std::cerr << "numerical divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
