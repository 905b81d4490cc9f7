#pragma once

// Hamilton-Jacobi DQN: replay buffer, targets built from the greedy action
// increment h L grad_a Q / |grad_a Q|, exploration, the training loop and
// noise-free greedy rollouts.

#include "hjq/critic.hpp"
#include "hjq/dynamics.hpp"
#include "hjq/lq_oracle.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hjq {

enum class Smoothing { none, tanh, rational };

inline std::string to_string(Smoothing s) {
  switch (s) {
    case Smoothing::none: return "none";
    case Smoothing::tanh: return "tanh";
    case Smoothing::rational: return "rational";
  }
  return "none";
}

inline Smoothing parse_smoothing(const std::string& s) {
  if (s == "none") return Smoothing::none;
  if (s == "tanh") return Smoothing::tanh;
  if (s == "rational") return Smoothing::rational;
  throw std::invalid_argument("unknown smoothing '" + s + "' (expected none, tanh or rational)");
}

/// Continuous discount rate whose per-step factor e^{-gamma h} equals `factor`.
inline double gamma_from_factor(double factor, double h) { return -std::log(factor) / h; }

struct TrainConfig {
  double h = 0.05;                               ///< sampling interval (s)
  double L = 10.0;                               ///< bound on |da/dt|
  double gamma = gamma_from_factor(0.99999, 0.05);  ///< discount rate (1/s)
  double lr = 1e-3;
  double polyak = 1e-3;
  double sigma = 0.1;  ///< exploration noise std
  std::size_t buffer_capacity = 20000;
  std::size_t batch_size = 512;
  int episode_length = 200;
  Smoothing smoothing = Smoothing::none;
  bool double_q = true;
  std::uint64_t seed = 0;
  std::vector<int> hidden = {256, 256};

  /// Per-step factor 1 - gamma h used in targets and returns.
  double discount() const { return 1.0 - gamma * h; }

  void validate() const {
    if (!(h > 0.0)) throw std::invalid_argument("h must be positive");
    if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
    if (!(gamma * h < 1.0))
      throw std::invalid_argument("h must satisfy h < 1/gamma so that the per-step factor 1 - gamma h is positive");
    if (!(L > 0.0)) throw std::invalid_argument("L must be positive");
    if (!(polyak > 0.0 && polyak < 1.0)) throw std::invalid_argument("polyak must lie in (0, 1)");
    if (!(sigma >= 0.0)) throw std::invalid_argument("sigma must be non-negative");
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
    if (buffer_capacity < 1) throw std::invalid_argument("buffer_capacity must be >= 1");
    if (batch_size < 1 || batch_size > buffer_capacity)
      throw std::invalid_argument("batch_size must lie in [1, buffer_capacity]");
    if (episode_length < 0) throw std::invalid_argument("episode_length must be >= 0");
    for (int w : hidden)
      if (w < 1) throw std::invalid_argument("hidden layer widths must be positive");
  }
};

// ---------------------------------------------------------------------------
// Replay buffer
// ---------------------------------------------------------------------------

struct Transition {
  Vector x;
  Vector a;
  double r = 0.0;  ///< reward rate r(x, a)
  Vector x_next;
};

/// Fixed-capacity ring; the oldest entry is overwritten first.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity, double h = 0.0) : capacity_(capacity), h_(h) {
    if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
    ring_.reserve(std::min<std::size_t>(capacity, 1 << 16));
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return ring_.size(); }
  double sampling_interval() const { return h_; }

  void push(Transition t) {
    if (!t.x.allFinite() || !t.a.allFinite() || !t.x_next.allFinite() || !std::isfinite(t.r))
      throw std::invalid_argument("ReplayBuffer: non-finite transition");
    if (ring_.size() < capacity_) {
      ring_.push_back(std::move(t));
    } else {
      ring_[cursor_] = std::move(t);
    }
    cursor_ = (cursor_ + 1) % capacity_;
  }

  const Transition& operator[](std::size_t i) const { return ring_[i]; }

  std::vector<std::size_t> sample_indices(std::size_t count, Rng& rng) const {
    if (ring_.empty()) throw std::invalid_argument("ReplayBuffer: empty");
    std::vector<std::size_t> idx(count);
    for (auto& i : idx) i = static_cast<std::size_t>(rng.uniform_index(ring_.size()));
    return idx;
  }

 private:
  std::size_t capacity_;
  double h_;
  std::vector<Transition> ring_;
  std::size_t cursor_ = 0;
};

// ---------------------------------------------------------------------------
// Greedy increment
// ---------------------------------------------------------------------------

/// phi(|g|) in [0, 1]; identically 1 without smoothing.
inline double smoothing_factor(double rho, const TrainConfig& cfg) {
  switch (cfg.smoothing) {
    case Smoothing::none: return 1.0;
    case Smoothing::tanh: return std::tanh(rho / cfg.L);
    case Smoothing::rational: return rho / (cfg.L + rho);
  }
  return 1.0;
}

/// h L phi(|g|) g / |g|; below |g| = 1e-12 the direction is e_1.
inline Vector increment_from_gradient(const Vector& g, const TrainConfig& cfg) {
  const double rho = g.norm();
  Vector dir = Vector::Zero(g.size());
  if (rho < 1e-12 || !std::isfinite(rho)) {
    dir[0] = 1.0;
  } else {
    dir = g / rho;
  }
  return cfg.h * cfg.L * smoothing_factor(rho, cfg) * dir;
}

/// Greedy increment from any critic exposing grad_action(x, a).
template <class Critic>
Vector greedy_increment(const Critic& critic, const Vector& x, const Vector& a,
                        const TrainConfig& cfg) {
  return increment_from_gradient(critic.grad_action(x, a), cfg);
}

/// Critic whose gradient picks the increment direction inside targets.
inline const MlpCritic& direction_critic(const PolyakPair& pair, const TrainConfig& cfg) {
  return cfg.double_q ? pair.online : pair.target;
}

/// y = h r + (1 - gamma h) Q_target(x_next, clip(a + increment)).
inline double target_value(const PolyakPair& pair, const Transition& t, const TrainConfig& cfg,
                           const Box& action_box) {
  const Vector inc = greedy_increment(direction_critic(pair, cfg), t.x, t.a, cfg);
  const Vector a_next = action_box.clip(t.a + inc);
  return cfg.h * t.r + cfg.discount() * pair.target.forward(t.x_next, a_next);
}

// ---------------------------------------------------------------------------
// Acting and training
// ---------------------------------------------------------------------------

/// a_prev + greedy increment of the online critic + N(0, sigma^2 I), clipped.
template <class Critic>
Vector act(const Critic& critic, const Vector& x, const Vector& a_prev, const TrainConfig& cfg,
           Rng& rng, const Box& action_box) {
  Vector a = a_prev + greedy_increment(critic, x, a_prev, cfg);
  if (cfg.sigma > 0.0)
    for (Eigen::Index i = 0; i < a.size(); ++i) a[i] += cfg.sigma * rng.normal();
  return action_box.clip(a);
}

/// Everything a single training run owns.
struct Learner {
  TrainConfig cfg;
  PolyakPair pair;
  ReplayBuffer buffer;
  AdamState adam;
  Rng rng;
  Box action_box;

  Learner(const TrainConfig& config, int state_dim, int action_dim, Box abox)
      : cfg(config),
        buffer(config.buffer_capacity, config.h),
        rng(config.seed),
        action_box(std::move(abox)) {
    cfg.validate();
    MlpCritic critic(state_dim, action_dim, cfg.hidden);
    Rng init_rng = rng.split(1);
    critic.init_uniform(init_rng);
    pair = PolyakPair(std::move(critic));
    adam = AdamState(pair.online.param_count());
  }
};

/**
 * One update: uniform minibatch, targets from the frozen target critic, one
 * Adam step on the online critic, one Polyak step. Returns the batch mean
 * squared error before the update.
 */
inline double train_step(PolyakPair& pair, const ReplayBuffer& buffer, AdamState& adam,
                         const TrainConfig& cfg, Rng& rng, const Box& action_box) {
  if (buffer.size() < cfg.batch_size)
    throw std::invalid_argument("train_step: buffer holds fewer transitions than one batch");
  const auto idx = buffer.sample_indices(cfg.batch_size, rng);
  const auto batch = static_cast<Eigen::Index>(idx.size());
  const int n = pair.online.state_dim();
  const int m = pair.online.action_dim();

  Matrix inputs(n + m, batch);
  Matrix next_inputs(n + m, batch);
  Eigen::RowVectorXd rewards(batch);
  for (Eigen::Index j = 0; j < batch; ++j) {
    const Transition& t = buffer[idx[static_cast<std::size_t>(j)]];
    inputs.col(j).head(n) = t.x;
    inputs.col(j).tail(m) = t.a;
    next_inputs.col(j).head(n) = t.x_next;
    rewards[j] = t.r;
  }

  MlpCritic::Tape tape;
  const Eigen::RowVectorXd q = pair.online.forward_batch(inputs, &tape);
  Matrix grads;
  if (cfg.double_q) {
    grads = pair.online.input_gradient(tape);
  } else {
    MlpCritic::Tape target_tape;
    pair.target.forward_batch(inputs, &target_tape);
    grads = pair.target.input_gradient(target_tape);
  }
  for (Eigen::Index j = 0; j < batch; ++j) {
    const Vector g = grads.col(j).tail(m);
    next_inputs.col(j).tail(m) =
        action_box.clip(inputs.col(j).tail(m) + increment_from_gradient(g, cfg));
  }
  const Eigen::RowVectorXd q_next = pair.target.forward_batch(next_inputs);
  const Eigen::RowVectorXd y = cfg.h * rewards + cfg.discount() * q_next;

  const Eigen::RowVectorXd resid = q - y;
  const double inv_b = 1.0 / static_cast<double>(batch);
  const double loss = resid.squaredNorm() * inv_b;
  if (!std::isfinite(loss)) throw DivergenceError("train_step: non-finite loss");
  const Vector grad = pair.online.param_gradient(tape, 2.0 * inv_b * resid);
  adam_update(pair.online.params(), grad, adam, AdamParams{cfg.lr});
  polyak_update(pair, cfg.polyak);
  return loss;
}

inline double train_step(Learner& l) {
  return train_step(l.pair, l.buffer, l.adam, l.cfg, l.rng, l.action_box);
}

struct EpisodeResult {
  double discounted_return = 0.0;  ///< sum_k (1 - gamma h)^k h r_k
  int steps = 0;
  bool aborted = false;
  double last_loss = std::numeric_limits<double>::quiet_NaN();
};

/**
 * Runs up to `max_steps` (default: the configured episode length) environment
 * steps from a uniformly drawn (x0, a0). Each step stores one transition,
 * trains once when the buffer holds a full batch and then picks the next
 * action. Systems with diffusion are sampled with Euler-Maruyama; the update
 * rule is unchanged. `on_step` runs after every environment step.
 */
inline EpisodeResult run_episode(const ControlSystem& sys, Learner& l,
                                 const std::function<void()>& on_step = {},
                                 std::optional<int> max_steps = std::nullopt) {
  EpisodeResult res;
  const int steps = max_steps ? *max_steps : l.cfg.episode_length;
  if (steps <= 0) return res;
  const ZeroOrderHold flow(sys, l.cfg.h);
  Vector x = sys.state_box.sample(l.rng);
  Vector a = sys.action_box.sample(l.rng);
  double weight = 1.0;
  for (int k = 0; k < steps; ++k) {
    const double r = sys.reward(x, a);
    Vector x_next;
    try {
      x_next = sys.diffusion ? step_sde(sys, x, a, l.cfg.h, l.rng) : flow(x, a);
    } catch (const DivergenceError&) {
      res.aborted = true;
      return res;
    }
    if (x_next.norm() > 1e6) {
      res.aborted = true;
      return res;
    }
    l.buffer.push({x, a, r, x_next});
    if (l.buffer.size() >= l.cfg.batch_size) res.last_loss = train_step(l);
    a = act(l.pair.online, x, a, l.cfg, l.rng, l.action_box);
    res.discounted_return += weight * l.cfg.h * r;
    weight *= l.cfg.discount();
    x = std::move(x_next);
    ++res.steps;
    if (on_step) on_step();
  }
  return res;
}

// ---------------------------------------------------------------------------
// Greedy rollout
// ---------------------------------------------------------------------------

struct RolloutPoint {
  double t = 0.0;
  Vector x;
  Vector a;
  double r = 0.0;
};

struct Rollout {
  std::vector<RolloutPoint> trajectory;
  double discounted_cost = 0.0;    ///< sum_k e^{-gamma k h} h (-r_k)
  double semi_discrete_cost = 0.0; ///< sum_k (1 - gamma h)^k h (-r_k)
  bool diverged = false;
};

/**
 * Noise-free rollout over [0, T): the action starts at a0 and moves by the
 * greedy increment each step (clipped to the action box). A trajectory that
 * leaves the 1e6 ball reports infinite cost.
 */
template <class Critic>
Rollout rollout_greedy(const ControlSystem& sys, const Critic& critic, const Vector& x0,
                       const Vector& a0, const TrainConfig& cfg, double horizon,
                       bool record = true) {
  Rollout out;
  const ZeroOrderHold flow(sys, cfg.h);
  const long steps = std::lround(horizon / cfg.h);
  const double exp_decay = std::exp(-sys.gamma * cfg.h);
  const double semi_decay = 1.0 - sys.gamma * cfg.h;
  double w_exp = 1.0, w_semi = 1.0;
  Vector x = x0;
  Vector a = sys.action_box.clip(a0);
  for (long k = 0; k < steps; ++k) {
    const double r = sys.reward(x, a);
    if (record) out.trajectory.push_back({static_cast<double>(k) * cfg.h, x, a, r});
    out.discounted_cost += w_exp * cfg.h * (-r);
    out.semi_discrete_cost += w_semi * cfg.h * (-r);
    w_exp *= exp_decay;
    w_semi *= semi_decay;
    Vector a_next = sys.action_box.clip(a + greedy_increment(critic, x, a, cfg));
    try {
      x = flow(x, a);
    } catch (const DivergenceError&) {
      x = Vector::Constant(x.size(), std::numeric_limits<double>::infinity());
    }
    if (!x.allFinite() || x.norm() > 1e6) {
      out.diverged = true;
      out.discounted_cost = kDivergedCost;
      out.semi_discrete_cost = kDivergedCost;
      return out;
    }
    a = std::move(a_next);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Target gap diagnostics
// ---------------------------------------------------------------------------

/// Q(x, a) = -(a - K x - c)' H (a - K x - c) with H symmetric positive definite.
struct QuadraticCritic {
  Matrix H;
  Matrix K;
  Vector c;

  double value(const Vector& x, const Vector& a) const {
    const Vector e = a - K * x - c;
    return -e.dot(H * e);
  }
  double forward(const Vector& x, const Vector& a) const { return value(x, a); }
  Vector grad_action(const Vector& x, const Vector& a) const {
    return -2.0 * H * (a - K * x - c);
  }
};

struct TargetGapResult {
  std::vector<double> h;
  std::vector<double> gap;
  double slope = std::numeric_limits<double>::quiet_NaN();  ///< NaN when all gaps vanish
};

/// max over the closed ball |d| <= radius of f(center + d), by brute force on `samples` points.
template <class F>
double brute_force_ball_max(F&& f, const Vector& center, double radius, int samples = 10000) {
  const Eigen::Index m = center.size();
  double best = -std::numeric_limits<double>::infinity();
  if (m == 1) {
    for (int i = 0; i < samples; ++i) {
      const double s = -radius + 2.0 * radius * i / (samples - 1);
      best = std::max(best, f(Vector(center + Vector::Constant(1, s))));
    }
  } else if (m == 2) {
    const int radii = 10;
    const int angles = samples / radii;
    for (int i = 1; i <= radii; ++i) {
      const double r = radius * i / radii;
      for (int j = 0; j < angles; ++j) {
        const double th = 2.0 * std::numbers::pi * j / angles;
        Vector p = center;
        p[0] += r * std::cos(th);
        p[1] += r * std::sin(th);
        best = std::max(best, f(p));
      }
    }
  } else {
    Rng rng(0x6A9ULL);
    for (int i = 0; i < samples; ++i) {
      Vector u = rng.normal_vector(m);
      const double r = radius * ((i % 10) + 1) / 10.0;
      best = std::max(best, f(Vector(center + r * u / u.norm())));
    }
  }
  return best;
}

/**
 * For each h: |max_{|a' - a| <= hL} Q(x_next, a') - Q(x_next, a + hL g/|g|)| where
 * g = grad_a Q(x, a) and x_next = next_state(h); then the least-squares slope
 * of log(gap) against log(h) over the gaps above 1e-12.
 */
template <class Critic, class NextState>
TargetGapResult target_gap_slope(const Critic& critic, const Vector& x, const Vector& a, double L,
                                 NextState&& next_state, const std::vector<double>& h_list,
                                 int samples = 10000) {
  const Vector g = critic.grad_action(x, a);
  if (g.norm() < 1e-12)
    throw std::invalid_argument("target_gap_slope: action gradient vanishes at the probe point");
  const Vector dir = g / g.norm();
  TargetGapResult res;
  std::vector<double> lx, ly;
  for (double h : h_list) {
    const Vector xn = next_state(h);
    const double greedy = critic.value(xn, Vector(a + h * L * dir));
    const double best = brute_force_ball_max(
        [&](const Vector& ap) { return critic.value(xn, ap); }, a, h * L, samples);
    const double gap = std::max(0.0, best - greedy);
    res.h.push_back(h);
    res.gap.push_back(gap);
    if (gap > 1e-12) {
      lx.push_back(std::log(h));
      ly.push_back(std::log(gap));
    }
  }
  if (lx.size() >= 2) {
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) mx += lx[i], my += ly[i];
    mx /= static_cast<double>(lx.size());
    my /= static_cast<double>(ly.size());
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      sxy += (lx[i] - mx) * (ly[i] - my);
      sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    res.slope = sxy / sxx;
  }
  return res;
}

}  // namespace hjq
