#pragma once

// Experiment orchestration: flat key-value configs, seeded multi-run training
// on LQ benchmarks, the log10 cost-ratio metric, and CSV / JSON output.

#include "hjq/grid_q.hpp"
#include "hjq/hjdqn.hpp"
#include "hjq/lq_oracle.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#ifndef HJQ_GIT_DESCRIBE
#define HJQ_GIT_DESCRIBE "unknown"
#endif

namespace hjq {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::string benchmark = "lq";  ///< lq | lq-sde | grid-lq1d
  int dim = 2;

  // Learner settings. gamma is derived from discount_factor and h unless set.
  double h = 0.05;
  double L = 10.0;
  double discount_factor = 0.99999;
  std::optional<double> gamma;
  double lr = 1e-3;
  double polyak = 1e-3;
  double sigma = 0.1;
  long buffer_capacity = 20000;
  long batch_size = 512;
  int episode_length = 200;
  std::string smoothing = "none";
  bool double_q = true;
  std::vector<int> hidden = {256, 256};

  std::vector<long> seeds = {0, 1, 2, 3, 4};
  long total_steps = 50000;
  long eval_interval = 1000;
  std::string out = "out";

  long system_seed = 12345;
  long eval_seed = 777;
  int eval_states = 10;
  double eval_horizon = 30.0;
  double state_box = 1.0;
  double action_box = 10.0;
  double sde_sigma = 0.05;
  bool record_wallclock = false;

  // grid-lq1d benchmark
  std::vector<int> grid_resolution = {101, 101};
  double grid_h = 0.1;
  double grid_gamma = 1.0;
  double grid_L = 1.0;
  double grid_a = 0.5;
  double grid_b = 1.0;
  double grid_tol = 1e-10;
  long grid_iterations = 200;
  std::string grid_schedule = "constant";  ///< constant | harmonic
  double grid_alpha = 1.0;

  bool operator==(const ExperimentConfig&) const = default;

  double resolved_gamma() const { return gamma ? *gamma : gamma_from_factor(discount_factor, h); }

  TrainConfig train_config(std::uint64_t seed) const {
    TrainConfig t;
    t.h = h;
    t.L = L;
    t.gamma = resolved_gamma();
    t.lr = lr;
    t.polyak = polyak;
    t.sigma = sigma;
    t.buffer_capacity = static_cast<std::size_t>(buffer_capacity);
    t.batch_size = static_cast<std::size_t>(batch_size);
    t.episode_length = episode_length;
    t.smoothing = parse_smoothing(smoothing);
    t.double_q = double_q;
    t.seed = seed;
    t.hidden = hidden;
    return t;
  }
};

// ---------------------------------------------------------------------------
// Config format: `key = value` per line, `#` starts a comment, lists are
// comma-separated.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& v) {
  std::size_t pos = 0;
  double d = std::stod(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("trailing characters");
  return d;
}

inline long parse_long(const std::string& v) {
  std::size_t pos = 0;
  long d = std::stol(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("trailing characters");
  return d;
}

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("expected true or false");
}

template <class T, class P>
std::vector<T> parse_list(const std::string& v, P&& parse) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<T>(parse(trim(item))));
  if (out.empty()) throw std::invalid_argument("empty list");
  return out;
}

inline std::string fmt_double(double d) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", d);
  return buf;
}

template <class T>
std::string fmt_list(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::optional<std::string>(const ExperimentConfig&)> get;
};

#define HJQ_FIELD(name, parse, format)                                                  \
  Field {                                                                               \
    #name, [](ExperimentConfig& c, const std::string& v) { c.name = parse; },           \
        [](const ExperimentConfig& c) -> std::optional<std::string> { return format; }  \
  }

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      HJQ_FIELD(benchmark, v, c.benchmark),
      HJQ_FIELD(dim, static_cast<int>(parse_long(v)), std::to_string(c.dim)),
      HJQ_FIELD(h, parse_double(v), fmt_double(c.h)),
      HJQ_FIELD(L, parse_double(v), fmt_double(c.L)),
      HJQ_FIELD(discount_factor, parse_double(v), fmt_double(c.discount_factor)),
      Field{"gamma", [](ExperimentConfig& c, const std::string& v) { c.gamma = parse_double(v); },
            [](const ExperimentConfig& c) -> std::optional<std::string> {
              if (!c.gamma) return std::nullopt;
              return fmt_double(*c.gamma);
            }},
      HJQ_FIELD(lr, parse_double(v), fmt_double(c.lr)),
      HJQ_FIELD(polyak, parse_double(v), fmt_double(c.polyak)),
      HJQ_FIELD(sigma, parse_double(v), fmt_double(c.sigma)),
      HJQ_FIELD(buffer_capacity, parse_long(v), std::to_string(c.buffer_capacity)),
      HJQ_FIELD(batch_size, parse_long(v), std::to_string(c.batch_size)),
      HJQ_FIELD(episode_length, static_cast<int>(parse_long(v)), std::to_string(c.episode_length)),
      HJQ_FIELD(smoothing, v, c.smoothing),
      HJQ_FIELD(double_q, parse_bool(v), std::string(c.double_q ? "true" : "false")),
      HJQ_FIELD(hidden, (parse_list<int>(v, parse_long)), fmt_list(c.hidden)),
      HJQ_FIELD(seeds, (parse_list<long>(v, parse_long)), fmt_list(c.seeds)),
      HJQ_FIELD(total_steps, parse_long(v), std::to_string(c.total_steps)),
      HJQ_FIELD(eval_interval, parse_long(v), std::to_string(c.eval_interval)),
      HJQ_FIELD(out, v, c.out),
      HJQ_FIELD(system_seed, parse_long(v), std::to_string(c.system_seed)),
      HJQ_FIELD(eval_seed, parse_long(v), std::to_string(c.eval_seed)),
      HJQ_FIELD(eval_states, static_cast<int>(parse_long(v)), std::to_string(c.eval_states)),
      HJQ_FIELD(eval_horizon, parse_double(v), fmt_double(c.eval_horizon)),
      HJQ_FIELD(state_box, parse_double(v), fmt_double(c.state_box)),
      HJQ_FIELD(action_box, parse_double(v), fmt_double(c.action_box)),
      HJQ_FIELD(sde_sigma, parse_double(v), fmt_double(c.sde_sigma)),
      HJQ_FIELD(record_wallclock, parse_bool(v), std::string(c.record_wallclock ? "true" : "false")),
      HJQ_FIELD(grid_resolution, (parse_list<int>(v, parse_long)), fmt_list(c.grid_resolution)),
      HJQ_FIELD(grid_h, parse_double(v), fmt_double(c.grid_h)),
      HJQ_FIELD(grid_gamma, parse_double(v), fmt_double(c.grid_gamma)),
      HJQ_FIELD(grid_L, parse_double(v), fmt_double(c.grid_L)),
      HJQ_FIELD(grid_a, parse_double(v), fmt_double(c.grid_a)),
      HJQ_FIELD(grid_b, parse_double(v), fmt_double(c.grid_b)),
      HJQ_FIELD(grid_tol, parse_double(v), fmt_double(c.grid_tol)),
      HJQ_FIELD(grid_iterations, parse_long(v), std::to_string(c.grid_iterations)),
      HJQ_FIELD(grid_schedule, v, c.grid_schedule),
      HJQ_FIELD(grid_alpha, parse_double(v), fmt_double(c.grid_alpha)),
  };
  return table;
}

#undef HJQ_FIELD

}  // namespace detail

/// Checks every invariant; the message names the violated requirement.
inline void validate(const ExperimentConfig& c) {
  if (c.benchmark != "lq" && c.benchmark != "lq-sde" && c.benchmark != "grid-lq1d")
    throw ConfigError("benchmark must be one of lq, lq-sde, grid-lq1d");
  if (c.dim < 1) throw ConfigError("dim must be >= 1");
  if (!(c.discount_factor > 0.0 && c.discount_factor < 1.0))
    throw ConfigError("discount_factor must lie in (0, 1)");
  try {
    c.train_config(0).validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.seeds.empty()) throw ConfigError("seeds must not be empty");
  if (c.total_steps < 0) throw ConfigError("total_steps must be >= 0");
  if (c.eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
  if (c.eval_states < 1) throw ConfigError("eval_states must be >= 1");
  if (!(c.eval_horizon > 0.0)) throw ConfigError("eval_horizon must be positive");
  if (!(c.state_box > 0.0) || !(c.action_box > 0.0))
    throw ConfigError("state_box and action_box half-widths must be positive");
  if (!(c.sde_sigma >= 0.0)) throw ConfigError("sde_sigma must be non-negative");
  if (c.grid_resolution.size() != 2)
    throw ConfigError("grid_resolution needs two entries (state, action)");
  for (int r : c.grid_resolution)
    if (r < 2) throw ConfigError("grid_resolution entries must be >= 2");
  if (!(c.grid_h > 0.0) || !(c.grid_gamma * c.grid_h < 1.0))
    throw ConfigError("grid_h must satisfy 0 < grid_h < 1/grid_gamma so that 1 - gamma h is positive");
  if (!(c.grid_L > 0.0)) throw ConfigError("grid_L must be positive");
  if (c.grid_schedule != "constant" && c.grid_schedule != "harmonic")
    throw ConfigError("grid_schedule must be constant or harmonic");
  if (!(c.grid_alpha >= 0.0 && c.grid_alpha <= 1.0))
    throw ConfigError("grid_alpha must lie in [0, 1]");
}

/// Sets one key from its textual value (same rules as the config file).
inline void set_field(ExperimentConfig& c, const std::string& key, const std::string& value) {
  for (const auto& f : detail::fields()) {
    if (f.key == key) {
      try {
        f.set(c, value);
      } catch (const std::exception& e) {
        throw ConfigError("bad value for '" + key + "': " + e.what());
      }
      return;
    }
  }
  throw ConfigError("unknown key '" + key + "'");
}

inline ExperimentConfig parse_config(std::istream& in, const std::string& source = "<config>") {
  ExperimentConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (value.empty()) throw ConfigError(where + "missing value for '" + key + "'");
    try {
      set_field(c, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  validate(c);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in, path);
}

inline std::string format_config(const ExperimentConfig& c) {
  std::string s;
  for (const auto& f : detail::fields())
    if (auto v = f.get(c)) s += f.key + " = " + *v + "\n";
  return s;
}

inline void save_config(const ExperimentConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config file '" + path + "'");
  out << format_config(c);
}

// ---------------------------------------------------------------------------
// Benchmarks
// ---------------------------------------------------------------------------

struct LqBenchmark {
  LinearQuadraticSystem lq;
  ControlSystem sys;
  RiccatiSolution riccati;
  std::vector<Vector> eval_states;
  std::vector<double> optimal_costs;
};

inline LqBenchmark make_lq_benchmark(const ExperimentConfig& c) {
  if (c.benchmark != "lq" && c.benchmark != "lq-sde")
    throw ConfigError("benchmark '" + c.benchmark + "' is not an LQ benchmark");
  LqBenchmark b;
  Rng sys_rng(static_cast<std::uint64_t>(c.system_seed));
  b.lq = make_random_lq(c.dim, sys_rng, c.resolved_gamma());
  b.sys = make_control_system(b.lq, Box::symmetric(c.dim, c.state_box),
                              Box::symmetric(c.dim, c.action_box));
  if (c.benchmark == "lq-sde") b.sys = with_additive_noise(b.sys, c.sde_sigma);
  b.riccati = solve_care(b.lq);
  Rng eval_rng(static_cast<std::uint64_t>(c.eval_seed));
  for (int i = 0; i < c.eval_states; ++i) {
    b.eval_states.push_back(b.sys.state_box.sample(eval_rng));
    b.optimal_costs.push_back(optimal_cost(b.riccati, b.eval_states.back()));
  }
  return b;
}

inline ControlSystem make_grid_benchmark(const ExperimentConfig& c) {
  return clipped_lq_1d(c.grid_a, c.grid_b, c.grid_gamma);
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

struct CurvePoint {
  long env_step = 0;
  double eval_return = 0.0;
  double cost_ratio_log10 = 0.0;
  double wallclock_s = 0.0;
};

struct SeedCurve {
  long seed = 0;
  std::vector<CurvePoint> points;
  int aborted_episodes = 0;
  std::string error;  ///< non-empty when the run failed
  bool diverged = false;  ///< the failure was numerical divergence
};

struct Evaluation {
  double eval_return = 0.0;       ///< minus the mean discounted cost
  double cost_ratio_log10 = 0.0;  ///< mean over evaluation states of log10(cost / optimal)
};

/// Greedy noise-free rollouts of `critic` from the fixed evaluation states with a0 = 0.
template <class Critic>
Evaluation evaluate_greedy(const LqBenchmark& b, const Critic& critic, const TrainConfig& cfg,
                           double horizon) {
  double cost_sum = 0.0, log_sum = 0.0;
  const Vector a0 = Vector::Zero(b.sys.action_dim);
  for (std::size_t i = 0; i < b.eval_states.size(); ++i) {
    const Rollout r = rollout_greedy(b.sys, critic, b.eval_states[i], a0, cfg, horizon, false);
    if (r.diverged) return {-kDivergedCost, kDivergedCost};
    cost_sum += r.discounted_cost;
    log_sum += std::log10(r.discounted_cost / b.optimal_costs[i]);
  }
  const double n = static_cast<double>(b.eval_states.size());
  return {-cost_sum / n, log_sum / n};
}

inline SeedCurve run_seed(const ExperimentConfig& c, const LqBenchmark& b, long seed) {
  SeedCurve curve;
  curve.seed = seed;
  const auto start = std::chrono::steady_clock::now();
  const TrainConfig cfg = c.train_config(static_cast<std::uint64_t>(seed));
  Learner learner(cfg, static_cast<int>(b.sys.state_dim), static_cast<int>(b.sys.action_dim),
                  b.sys.action_box);
  long steps = 0;
  auto record = [&] {
    const Evaluation e = evaluate_greedy(b, learner.pair.online, cfg, c.eval_horizon);
    double wall = 0.0;
    if (c.record_wallclock)
      wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    curve.points.push_back({steps, e.eval_return, e.cost_ratio_log10, wall});
  };
  record();
  while (steps < c.total_steps) {
    const long budget = std::min<long>(cfg.episode_length, c.total_steps - steps);
    const EpisodeResult ep = run_episode(
        b.sys, learner,
        [&] {
          ++steps;
          if (steps % c.eval_interval == 0) record();
        },
        static_cast<int>(budget));
    if (ep.aborted) ++curve.aborted_episodes;
    if (cfg.episode_length == 0) break;
  }
  if (curve.points.back().env_step != steps) record();
  return curve;
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_metric(double v) {
  if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) return "inf";
  if (v == -std::numeric_limits<double>::infinity()) return "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double half_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return 0.5 * std::sqrt(ss / static_cast<double>(v.size()));
}

inline nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace detail

inline constexpr const char* kCsvHeader = "env_step,eval_return,cost_ratio_log10,wallclock_s";

inline std::string format_csv(const SeedCurve& curve) {
  std::string s = std::string(kCsvHeader) + "\n";
  for (const CurvePoint& p : curve.points) {
    char wall[32];
    std::snprintf(wall, sizeof wall, "%.3f", p.wallclock_s);
    s += std::to_string(p.env_step) + "," + detail::fmt_metric(p.eval_return) + "," +
         detail::fmt_metric(p.cost_ratio_log10) + "," + wall + "\n";
  }
  return s;
}

/// Writes `<prefix>_seed<k>.csv` for one curve.
inline void write_csv(const SeedCurve& curve, const std::string& prefix) {
  if (curve.points.empty()) throw std::invalid_argument("write_csv: empty curve");
  const std::string path = prefix + "_seed" + std::to_string(curve.seed) + ".csv";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_csv: cannot write '" + path + "'");
  out << format_csv(curve);
  if (!out) throw std::runtime_error("write_csv: write failed for '" + path + "'");
}

inline const char* kDiscountNote =
    "learner targets and returns use the per-step factor (1 - gamma h); the Riccati oracle "
    "and evaluation costs use exp(-gamma t); gamma = -log(discount_factor) / h unless set";

struct Summary {
  std::vector<double> initial;
  std::vector<double> final;
  double median_initial = 0.0;
  double median_final = 0.0;
  double half_std_final = 0.0;
  bool any_failed = false;
};

inline Summary summarize(const std::vector<SeedCurve>& curves) {
  Summary s;
  for (const auto& c : curves) {
    if (!c.error.empty() || c.points.empty()) {
      s.any_failed = true;
      continue;
    }
    s.initial.push_back(c.points.front().cost_ratio_log10);
    s.final.push_back(c.points.back().cost_ratio_log10);
  }
  s.median_initial = detail::median(s.initial);
  s.median_final = detail::median(s.final);
  s.half_std_final = detail::half_std(s.final);
  return s;
}

/// Per-seed CSVs, meta.json with everything needed to rerun, and summary.json.
inline void write_outputs(const ExperimentConfig& c, const LqBenchmark& b,
                          const std::vector<SeedCurve>& curves, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (const auto& curve : curves)
    if (!curve.points.empty()) write_csv(curve, (fs::path(dir) / "curve").string());

  nlohmann::ordered_json meta;
  nlohmann::ordered_json cfg;
  for (const auto& f : detail::fields())
    if (auto v = f.get(c)) cfg[f.key] = *v;
  meta["config"] = cfg;
  meta["config_text"] = format_config(c);
  meta["git_describe"] = HJQ_GIT_DESCRIBE;
  meta["discount_convention"] = kDiscountNote;
  meta["gamma"] = c.resolved_gamma();
  meta["per_step_factor"] = 1.0 - c.resolved_gamma() * c.h;
  meta["system"] = {{"A", detail::matrix_json(b.lq.A)},
                    {"B", detail::matrix_json(b.lq.B)},
                    {"Qc", detail::matrix_json(b.lq.Qc)},
                    {"Rc", detail::matrix_json(b.lq.Rc)}};
  meta["riccati"] = {{"P", detail::matrix_json(b.riccati.P)}, {"residual", b.riccati.residual}};
  meta["eval_seed"] = c.eval_seed;
  nlohmann::json states = nlohmann::json::array();
  for (const Vector& x : b.eval_states) states.push_back(std::vector<double>(x.data(), x.data() + x.size()));
  meta["eval_states"] = states;
  meta["eval_initial_action"] = "zero";
  meta["initial_state_action_distribution"] = "uniform over state_box x action_box";
  std::ofstream(fs::path(dir) / "meta.json") << meta.dump(2) << "\n";

  const Summary s = summarize(curves);
  nlohmann::ordered_json sum;
  nlohmann::ordered_json per_seed = nlohmann::ordered_json::array();
  for (const auto& curve : curves) {
    nlohmann::ordered_json e;
    e["seed"] = curve.seed;
    if (!curve.error.empty()) {
      e["error"] = curve.error;
    } else {
      e["initial"] = detail::fmt_metric(curve.points.front().cost_ratio_log10);
      e["final"] = detail::fmt_metric(curve.points.back().cost_ratio_log10);
      e["aborted_episodes"] = curve.aborted_episodes;
    }
    per_seed.push_back(e);
  }
  sum["seeds"] = per_seed;
  sum["median_initial_cost_ratio_log10"] = detail::fmt_metric(s.median_initial);
  sum["median_final_cost_ratio_log10"] = detail::fmt_metric(s.median_final);
  sum["half_std_final_cost_ratio_log10"] = detail::fmt_metric(s.half_std_final);
  std::ofstream(fs::path(dir) / "summary.json") << sum.dump(2) << "\n";
}

/// Runs every seed independently; a failing seed is recorded and the rest continue.
/// Outputs go under `c.out` when `write` is set.
inline std::vector<SeedCurve> run_experiment(const ExperimentConfig& c, bool write = true) {
  validate(c);
  const LqBenchmark b = make_lq_benchmark(c);
  std::vector<SeedCurve> curves;
  for (long seed : c.seeds) {
    try {
      curves.push_back(run_seed(c, b, seed));
    } catch (const std::exception& e) {
      SeedCurve failed;
      failed.seed = seed;
      failed.error = e.what();
      failed.diverged = dynamic_cast<const DivergenceError*>(&e) != nullptr;
      curves.push_back(std::move(failed));
    }
  }
  if (write) write_outputs(c, b, curves, c.out);
  return curves;
}

/**
 * Variant of `base` with one field changed. Changing h rescales the learning
 * rate by the same factor; gamma follows from discount_factor unless pinned.
 */
inline ExperimentConfig ablation_variant(const ExperimentConfig& base, const std::string& key,
                                         const std::string& value) {
  ExperimentConfig v = base;
  set_field(v, key, value);
  if (key == "h") v.lr = base.lr * v.h / base.h;
  validate(v);
  return v;
}

}  // namespace hjq
