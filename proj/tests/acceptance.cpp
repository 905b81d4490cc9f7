// Acceptance suite: one PASS/FAIL line per criterion. Tolerances and budgets are
// pinned below. Usage: acceptance [criterion numbers...] (default: all).
#include "hjq/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

using namespace hjq;
namespace fs = std::filesystem;

namespace {

// Floating-point slack on inequalities that hold exactly in real arithmetic.
constexpr double kRoundoff = 1e-12;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

GridQ random_grid(const GridQ& layout, Rng& rng, double scale) {
  GridQ q = layout;
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = rng.uniform(-scale, scale);
  return q;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------

Outcome contraction() {
  const auto sys = clipped_lq_1d();  // boxes [-1,1]^2, gamma = 1
  const double h = 0.1, L = 1.0;
  const GridQ layout(sys.state_box, sys.action_box, {51, 51});
  const BellmanOperator op(sys, layout, h, L);
  Rng rng(2024);
  int contraction_violations = 0, monotone_violations = 0;
  double worst_ratio = 0.0;
  const int pairs = 100;
  for (int i = 0; i < pairs; ++i) {
    const GridQ q = random_grid(layout, rng, 5.0);
    const GridQ p = random_grid(layout, rng, 5.0);
    const double lhs = sup_distance(op.apply(q), op.apply(p));
    const double rhs = sup_distance(q, p);
    worst_ratio = std::max(worst_ratio, lhs / rhs);
    contraction_violations += lhs > (1.0 - sys.gamma * h) * rhs + kRoundoff;

    GridQ above = q;
    for (std::size_t j = 0; j < above.size(); ++j) above[j] += rng.uniform01();
    const GridQ tq = op.apply(q), ta = op.apply(above);
    for (std::size_t j = 0; j < tq.size(); ++j)
      if (tq[j] > ta[j] + kRoundoff) {
        ++monotone_violations;
        break;
      }
  }
  return {contraction_violations == 0 && monotone_violations == 0,
          fmt("%d pairs, contraction violations %d (worst ratio %.4f vs %.2f), monotonicity "
              "violations %d",
              pairs, contraction_violations, worst_ratio, 1.0 - sys.gamma * h,
              monotone_violations)};
}

Outcome geometric_decay() {
  const auto sys = clipped_lq_1d();
  const double h = 0.1, L = 1.0;

  // alpha_k = 1 on a 51 x 51 grid.
  const GridQ q0(sys.state_box, sys.action_box, {51, 51});
  const BellmanOperator op(sys, q0, h, L);
  const GridQ fixed = value_iterate(q0, op, sys.gamma, 1e-10, 100000).q;
  const auto rows = track_q_sync(q0, fixed, op, sys.gamma, QSyncSchedule::constant(1.0), 200);
  int violations = 0;
  for (const auto& r : rows) violations += r.sup_error_to_fixed_point > r.bound + 1e-14;

  // alpha_k = 1/(k+1): the error of every constant mode shrinks exactly by
  // prod (1 - gamma h / (k+1)) ~ k^{-gamma h}, so this is slow for gamma h = 0.1.
  const GridQ c0(sys.state_box, sys.action_box, {21, 21});
  const BellmanOperator cop(sys, c0, h, L);
  const GridQ cfixed = value_iterate(c0, cop, sys.gamma, 1e-10, 100000).q;
  const QSyncSchedule harmonic = QSyncSchedule::harmonic();
  GridQ q = c0;
  const long budget = 100000;
  long reached = -1;
  double err = sup_distance(q, cfixed);
  for (long k = 0; k < budget; ++k) {
    q = cop.blend(q, harmonic(k));
    err = sup_distance(q, cfixed);
    if (err <= 1e-3) {
      reached = k + 1;
      break;
    }
  }
  const bool pass = violations == 0 && reached > 0;
  return {pass, fmt("alpha=1: %d bound violations over k<=200; alpha=1/(k+1): error %.3e after %ld "
                    "iterations (%s 1e-3)",
                    violations, err, reached > 0 ? reached : budget,
                    reached > 0 ? "reached" : "did not reach")};
}

Outcome consistency() {
  const auto sys = clipped_lq_1d();
  std::vector<std::pair<Vector, Vector>> probes;
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 9; ++j)
      probes.push_back({Vector::Constant(1, -0.8 + 0.2 * i), Vector::Constant(1, -0.8 + 0.2 * j)});
  const auto rows = consistency_sweep(sys, 1.0, {0.2, 0.1, 0.05, 0.025}, probes, {101, 101});
  const double d02 = rows[0].sup_difference, d01 = rows[1].sup_difference,
               d005 = rows[2].sup_difference;
  const bool monotone = d01 <= 1.1 * d02 && d005 <= 1.1 * d01;
  const double shrink = d02 / d01;
  return {monotone && shrink >= 1.5,
          fmt("sup diff vs h=0.025: h=0.2 %.4e, h=0.1 %.4e, h=0.05 %.4e; shrink 0.2->0.1 %.2f "
              "(>= 1.5)",
              d02, d01, d005, shrink)};
}

Outcome target_gap_order() {
  QuadraticCritic q;
  q.H = (Matrix(2, 2) << 2.0, 0.5, 0.5, 1.0).finished();
  q.K = (Matrix(2, 2) << 0.7, -0.3, 0.2, 0.9).finished();
  q.c = (Vector(2) << 0.1, -0.2).finished();
  const Vector x = (Vector(2) << 0.4, -0.3).finished();
  const Vector a = (Vector(2) << 1.2, 0.8).finished();
  const Vector drift = (Vector(2) << 0.5, -1.0).finished();
  const auto res = target_gap_slope(q, x, a, 10.0, [&](double h) { return Vector(x + h * drift); },
                                    {0.1, 0.05, 0.025, 0.0125}, 10000);
  std::string gaps;
  for (double g : res.gap) gaps += fmt(" %.3e", g);
  return {res.slope >= 1.8, fmt("log-log slope %.3f (>= 1.8); gaps%s", res.slope, gaps.c_str())};
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

Outcome gradient_fidelity() {
  Rng rng(55);
  const double eps = 1e-6, tol = 1e-4, kink = 1e-3;
  int action_critics = 0, param_critics = 0;
  double worst_action = 0.0, worst_param = 0.0;
  while (action_critics < 25) {
    MlpCritic c(2, 2, {32, 32});
    c.init_uniform(rng);
    const Vector x = rng.normal_vector(2), a = rng.normal_vector(2);
    if (c.min_abs_preactivation(x, a) < kink) continue;
    const Vector g = c.grad_action(x, a);
    for (int i = 0; i < 2; ++i) {
      Vector ap = a, am = a;
      ap[i] += eps;
      am[i] -= eps;
      worst_action =
          std::max(worst_action, rel_err(g[i], (c.forward(x, ap) - c.forward(x, am)) / (2 * eps)));
    }
    ++action_critics;
  }
  while (param_critics < 25) {
    MlpCritic c(2, 2, {12, 12});
    c.init_uniform(rng);
    std::vector<Sample> batch;
    bool near_kink = false;
    for (int j = 0; j < 4; ++j) {
      Sample s{rng.normal_vector(2), rng.normal_vector(2), rng.normal()};
      near_kink = near_kink || c.min_abs_preactivation(s.x, s.a) < kink;
      batch.push_back(s);
    }
    if (near_kink) continue;
    const Vector g = grad_params(c, batch).grad;
    for (Eigen::Index i = 0; i < c.param_count(); ++i) {
      const double keep = c.params()[i];
      c.params()[i] = keep + eps;
      const double up = grad_params(c, batch).loss;
      c.params()[i] = keep - eps;
      const double down = grad_params(c, batch).loss;
      c.params()[i] = keep;
      worst_param = std::max(worst_param, rel_err(g[i], (up - down) / (2 * eps)));
    }
    ++param_critics;
  }
  return {worst_action <= tol && worst_param <= tol,
          fmt("grad_action worst rel err %.2e over %d critics, grad_params worst %.2e over %d "
              "critics (<= 1e-4)",
              worst_action, action_critics, worst_param, param_critics)};
}

Outcome riccati_oracle() {
  LinearQuadraticSystem s;
  s.A = Matrix::Zero(1, 1);
  s.B = Matrix::Ones(1, 1);
  s.Qc = Matrix::Identity(1, 1);
  s.Rc = Matrix::Identity(1, 1);
  s.gamma = 0.1;
  const double p_err = std::abs(solve_care(s).P(0, 0) - (-0.1 + std::sqrt(4.01)) / 2.0);

  double worst_residual = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    const auto lq = make_random_lq(4, rng, 0.1);
    worst_residual = std::max(worst_residual, care_residual(lq, solve_care(lq).P));
  }

  double worst_ratio = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(200 + seed);
    const auto lq = make_random_lq(2, rng, 0.1);
    const auto sol = solve_care(lq);
    const Vector x0 = Vector::Ones(2);
    const double cost = evaluate_policy_cost(lq, riccati_feedback(sol), x0, Vector::Zero(2), 0.001,
                                             default_horizon(lq.gamma));
    worst_ratio = std::max(worst_ratio, cost / optimal_cost(sol, x0));
  }
  return {p_err <= 1e-8 && worst_residual <= 1e-8 && worst_ratio <= 1.05,
          fmt("scalar |p - p*| %.2e (<= 1e-8); worst CARE residual %.2e over 20 systems "
              "(<= 1e-8); worst feedback cost ratio %.4f at h=0.001 (<= 1.05)",
              p_err, worst_residual, worst_ratio)};
}

// ---------------------------------------------------------------------------
// End-to-end learning. Criteria 7-9 share runs.

ExperimentConfig lq_acceptance_config(const fs::path& out) {
  ExperimentConfig c;  // d = 2, h = 0.05, L = 10, factor 0.99999, buffer 2e4, batch 512
  c.hidden = {128, 128};
  c.smoothing = "tanh";
  c.polyak = 0.002;
  c.action_box = 2.0;
  c.episode_length = 100;
  c.total_steps = 50000;
  c.eval_interval = 5000;
  c.seeds = {0, 1, 2, 3, 4};
  c.out = out.string();
  return c;
}

struct LearningRuns {
  fs::path root;
  std::optional<Summary> base;
  double base_seconds = 0.0;
};

Summary run_and_summarize(const ExperimentConfig& c, double* seconds = nullptr) {
  const auto t0 = Clock::now();
  const auto curves = run_experiment(c, true);
  if (seconds) *seconds = seconds_since(t0);
  return summarize(curves);
}

// (failed seeds, aborted episodes) recorded in summary.json.
std::pair<int, int> failures_in(const fs::path& out) {
  const auto j = nlohmann::json::parse(slurp(out / "summary.json"));
  int failed = 0, aborted = 0;
  for (const auto& s : j["seeds"]) {
    failed += s.contains("error");
    if (s.contains("aborted_episodes")) aborted += s["aborted_episodes"].get<int>();
  }
  return {failed, aborted};
}

const Summary& base_runs(LearningRuns& runs) {
  if (!runs.base) runs.base = run_and_summarize(lq_acceptance_config(runs.root / "c7"), &runs.base_seconds);
  return *runs.base;
}

Outcome lq_learning(LearningRuns& runs) {
  const Summary& s = base_runs(runs);
  const auto [failed, aborted] = failures_in(runs.root / "c7");
  const double drop = s.median_initial - s.median_final;
  const bool pass = !s.any_failed && failed == 0 && s.median_final <= 0.3 && drop >= 0.7 &&
                    runs.base_seconds < 30 * 60;
  std::string finals;
  for (double f : s.final) finals += fmt(" %.3f", f);
  return {pass, fmt("median final log10 cost ratio %.3f (<= 0.3), initial %.3f, drop %.3f (>= 0.7), "
                    "failed seeds %d, aborted episodes %d; finals%s; %.0f s (< 1800 s)",
                    s.median_final, s.median_initial, drop, failed, aborted, finals.c_str(),
                    runs.base_seconds)};
}

Outcome ablation_directions(LearningRuns& runs) {
  const ExperimentConfig base = lq_acceptance_config(runs.root / "c7");
  const Summary& dq = base_runs(runs);
  const auto t0 = Clock::now();
  ExperimentConfig single = ablation_variant(base, "double_q", "false");
  single.out = (runs.root / "c8_single_q").string();
  const Summary sq = run_and_summarize(single);
  ExperimentConfig small_l = ablation_variant(base, "L", "1");
  small_l.out = (runs.root / "c8_L1").string();
  const Summary l1 = run_and_summarize(small_l);
  const double secs = seconds_since(t0) + runs.base_seconds;
  const bool dq_ok = dq.median_final <= sq.median_final + 0.1;
  const bool l_ok = l1.median_final > dq.median_final;
  return {dq_ok && l_ok && secs < 3600,
          fmt("double-Q median %.3f vs single-Q %.3f + 0.1 (%s); L=1 median %.3f vs L=10 %.3f "
              "(%s); %.0f s (< 3600 s)",
              dq.median_final, sq.median_final, dq_ok ? "ok" : "violated", l1.median_final,
              dq.median_final, l_ok ? "worse, ok" : "not worse", secs)};
}

Outcome determinism(LearningRuns& runs) {
  base_runs(runs);
  const ExperimentConfig again = lq_acceptance_config(runs.root / "c9_repeat");
  run_experiment(again, true);
  int identical = 0, total = 0;
  for (long seed : again.seeds) {
    const std::string name = "curve_seed" + std::to_string(seed) + ".csv";
    const std::string a = slurp(runs.root / "c7" / name);
    const std::string b = slurp(fs::path(again.out) / name);
    identical += !a.empty() && a == b;
    ++total;
  }
  return {identical == total, fmt("%d of %d per-seed CSVs bit-identical", identical, total)};
}

}  // namespace

int main(int argc, char** argv) {
  keep_large_allocations_on_heap();
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  if (wanted.empty()) wanted = {1, 2, 3, 4, 5, 6, 7, 8, 9};

  LearningRuns runs;
  runs.root = fs::temp_directory_path() / "hjq_acceptance";
  fs::remove_all(runs.root);

  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "contraction and monotonicity", 10, contraction},
      {2, "geometric decay of synchronous updates", 120, geometric_decay},
      {3, "consistency in h", 300, consistency},
      {4, "target gap order", 30, target_gap_order},
      {5, "gradient fidelity", 30, gradient_fidelity},
      {6, "Riccati oracle", 120, riccati_oracle},
      // Learning budgets are checked inside (runs are shared across criteria).
      {7, "end-to-end LQ learning", 0, [&] { return lq_learning(runs); }},
      {8, "ablation directions", 0, [&] { return ablation_directions(runs); }},
      {9, "determinism", 0, [&] { return determinism(runs); }},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (!wanted.count(c.id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    if (c.budget_s > 0 && secs >= c.budget_s) {
      o.pass = false;
      o.detail += fmt("; runtime %.1f s exceeds %.0f s", secs, c.budget_s);
    }
    failures += !o.pass;
    std::cout << "CRITERION " << c.id << " " << (o.pass ? "PASS" : "FAIL") << " [" << c.name
              << "] " << o.detail << fmt(" (%.1f s)", secs) << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
