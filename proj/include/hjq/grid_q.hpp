#pragma once

// Tabular semi-discrete HJB machinery on a rectangular state-action grid:
// multilinear read-out, the Bellman operator T^h, value iteration and
// synchronous Hamilton-Jacobi Q-learning.

#include "hjq/dynamics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hjq {

/**
 * Q on the tensor grid state_box x action_box. Coordinates are ordered
 * (x_1..x_n, a_1..a_m) and the flat index is row-major over that order (the
 * last action coordinate varies fastest).
 */
class GridQ {
 public:
  GridQ(Box state_box, Box action_box, std::vector<int> resolution, double fill = 0.0)
      : state_box_(std::move(state_box)),
        action_box_(std::move(action_box)),
        resolution_(std::move(resolution)) {
    const auto dims = static_cast<std::size_t>(state_box_.dim() + action_box_.dim());
    if (resolution_.size() != dims)
      throw std::invalid_argument("GridQ: one resolution per state/action dimension");
    if (dims > kMaxDims) throw std::invalid_argument("GridQ: too many dimensions");
    lo_.resize(dims);
    spacing_.resize(dims);
    strides_.assign(dims, 1);
    for (std::size_t d = 0; d < dims; ++d) {
      if (resolution_[d] < 2) throw std::invalid_argument("GridQ: resolution must be >= 2");
      const double lo = coord_lo(d);
      const double hi = coord_hi(d);
      if (!(hi > lo)) throw std::invalid_argument("GridQ: empty box interval");
      lo_[d] = lo;
      spacing_[d] = (hi - lo) / (resolution_[d] - 1);
    }
    for (std::size_t d = dims; d-- > 1;)
      strides_[d - 1] = strides_[d] * static_cast<std::size_t>(resolution_[d]);
    values_.assign(strides_[0] * static_cast<std::size_t>(resolution_[0]), fill);
  }

  const Box& state_box() const { return state_box_; }
  const Box& action_box() const { return action_box_; }
  const std::vector<int>& resolution() const { return resolution_; }
  Eigen::Index state_dim() const { return state_box_.dim(); }
  Eigen::Index action_dim() const { return action_box_.dim(); }
  std::size_t dims() const { return resolution_.size(); }
  std::size_t size() const { return values_.size(); }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  bool same_layout(const GridQ& other) const {
    return resolution_ == other.resolution_ && lo_ == other.lo_ &&
           spacing_ == other.spacing_;
  }

  /// Coordinate of grid index i along dimension d.
  double coordinate(std::size_t d, int i) const { return lo_[d] + i * spacing_[d]; }
  double spacing(std::size_t d) const { return spacing_[d]; }

  void node(std::size_t flat, Vector& x, Vector& a) const {
    x.resize(state_dim());
    a.resize(action_dim());
    for (std::size_t d = 0; d < dims(); ++d) {
      const int i = static_cast<int>((flat / strides_[d]) % resolution_[d]);
      const double c = coordinate(d, i);
      if (d < static_cast<std::size_t>(state_dim()))
        x[static_cast<Eigen::Index>(d)] = c;
      else
        a[static_cast<Eigen::Index>(d) - state_dim()] = c;
    }
  }

  /// Multilinear interpolation over the 2^(n+m) corners of the enclosing cell.
  double interp(const Vector& x, const Vector& a) const {
    Cell cell = locate(x, a);
    double acc = 0.0;
    const std::size_t corners = std::size_t{1} << dims();
    for (std::size_t mask = 0; mask < corners; ++mask) {
      double w = 1.0;
      std::size_t idx = cell.base;
      for (std::size_t d = 0; d < dims(); ++d) {
        if (mask & (std::size_t{1} << d)) {
          w *= cell.frac[d];
          idx += strides_[d];
        } else {
          w *= 1.0 - cell.frac[d];
        }
      }
      if (w != 0.0) acc += w * values_[idx];
    }
    return acc;
  }

  /// Gradient of the interpolant in the action coordinates, taken inside the
  /// cell that `interp` uses for this point.
  Vector grad_action(const Vector& x, const Vector& a) const {
    Cell cell = locate(x, a);
    const auto n = static_cast<std::size_t>(state_dim());
    Vector g = Vector::Zero(action_dim());
    const std::size_t corners = std::size_t{1} << dims();
    for (std::size_t k = n; k < dims(); ++k) {
      double acc = 0.0;
      for (std::size_t mask = 0; mask < corners; ++mask) {
        double w = 1.0;
        std::size_t idx = cell.base;
        for (std::size_t d = 0; d < dims(); ++d) {
          const bool upper = mask & (std::size_t{1} << d);
          if (upper) idx += strides_[d];
          if (d == k)
            w *= (upper ? 1.0 : -1.0) / spacing_[d];
          else
            w *= upper ? cell.frac[d] : 1.0 - cell.frac[d];
        }
        if (w != 0.0) acc += w * values_[idx];
      }
      g[static_cast<Eigen::Index>(k - n)] = acc;
    }
    return g;
  }

  double sup_norm() const {
    double s = 0.0;
    for (double v : values_) s = std::max(s, std::abs(v));
    return s;
  }

 private:
  static constexpr std::size_t kMaxDims = 6;

  struct Cell {
    std::size_t base = 0;
    std::array<double, kMaxDims> frac{};
  };

  double coord_lo(std::size_t d) const {
    const auto n = static_cast<std::size_t>(state_box_.dim());
    return d < n ? state_box_.lo[static_cast<Eigen::Index>(d)]
                 : action_box_.lo[static_cast<Eigen::Index>(d - n)];
  }
  double coord_hi(std::size_t d) const {
    const auto n = static_cast<std::size_t>(state_box_.dim());
    return d < n ? state_box_.hi[static_cast<Eigen::Index>(d)]
                 : action_box_.hi[static_cast<Eigen::Index>(d - n)];
  }

  Cell locate(const Vector& x, const Vector& a) const {
    if (x.size() != state_dim() || a.size() != action_dim())
      throw std::invalid_argument("GridQ::interp: dimension mismatch");
    Cell cell;
    const auto n = static_cast<std::size_t>(state_dim());
    for (std::size_t d = 0; d < dims(); ++d) {
      const double v = d < n ? x[static_cast<Eigen::Index>(d)]
                             : a[static_cast<Eigen::Index>(d - n)];
      double s = (v - lo_[d]) / spacing_[d];
      const double top = resolution_[d] - 1;
      if (!(s >= -1e-9 && s <= top + 1e-9))
        throw std::out_of_range("GridQ::interp: point outside the grid boxes");
      s = std::clamp(s, 0.0, top);
      int i = std::min(static_cast<int>(s), resolution_[d] - 2);
      cell.frac[d] = s - i;
      cell.base += static_cast<std::size_t>(i) * strides_[d];
    }
    return cell;
  }

  Box state_box_;
  Box action_box_;
  std::vector<int> resolution_;
  std::vector<double> lo_;
  std::vector<double> spacing_;
  std::vector<std::size_t> strides_;
  std::vector<double> values_;
};

/// Grid with values f(x, a) at every node.
template <class F>
GridQ tabulate(const Box& state_box, const Box& action_box,
               const std::vector<int>& resolution, F&& f) {
  GridQ q(state_box, action_box, resolution);
  Vector x, a;
  for (std::size_t i = 0; i < q.size(); ++i) {
    q.node(i, x, a);
    q[i] = f(x, a);
  }
  return q;
}

inline double sup_distance(const GridQ& p, const GridQ& q) {
  if (!p.same_layout(q)) throw std::invalid_argument("sup_distance: grid layouts differ");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s = std::max(s, std::abs(p[i] - q[i]));
  return s;
}

// ---------------------------------------------------------------------------
// Sup over the ball |b| <= L
// ---------------------------------------------------------------------------

/**
 * Candidate increments b with |b| <= L in a fixed enumeration order: b = 0,
 * then for every unit direction the radii {0.25, 0.5, 0.75, 1} L. For m = 1
 * the directions are {-1, +1}; for m >= 2 they are n_dirs points drawn on the
 * sphere from a fixed sub-seed.
 */
inline std::vector<Vector> ball_stencil(Eigen::Index action_dim, double L, int n_dirs = 16) {
  std::vector<Vector> dirs;
  if (action_dim == 1) {
    dirs.push_back(Vector::Constant(1, -1.0));
    dirs.push_back(Vector::Constant(1, 1.0));
  } else {
    Rng rng(0xBA11D1E5ULL);
    for (int i = 0; i < n_dirs; ++i) {
      Vector v = rng.normal_vector(action_dim);
      dirs.push_back(v / v.norm());
    }
  }
  std::vector<Vector> stencil;
  stencil.push_back(Vector::Zero(action_dim));
  for (const Vector& u : dirs)
    for (double r : {0.25, 0.5, 0.75, 1.0}) stencil.push_back(r * L * u);
  return stencil;
}

struct BallMax {
  double value = 0.0;
  Vector b;
};

/**
 * max over the candidate set of q(x_next, clip(a + h b)). Candidate actions
 * are clipped to the action box. For a scalar action the interior action
 * nodes of [a - hL, a + hL] are appended, which makes the maximum exact for
 * the piecewise-linear interpolant. Ties go to the first candidate.
 */
inline BallMax sup_over_ball(const GridQ& q, const Vector& x_next, const Vector& a,
                             double h, double L, const std::vector<Vector>& stencil) {
  const Box& abox = q.action_box();
  BallMax best;
  bool first = true;
  auto consider = [&](const Vector& b) {
    const Vector cand = abox.clip(a + h * b);
    const double v = q.interp(x_next, cand);
    if (first || v > best.value) {
      best.value = v;
      best.b = b;
      first = false;
    }
  };
  for (const Vector& b : stencil) consider(b);
  if (q.action_dim() == 1) {
    const std::size_t d = q.dims() - 1;
    const double lo = a[0] - h * L;
    const double hi = a[0] + h * L;
    const int res = q.resolution()[d];
    const double step = q.spacing(d);
    const double origin = q.coordinate(d, 0);
    const int i0 = std::max(0, static_cast<int>(std::ceil((lo - origin) / step)));
    const int i1 = std::min(res - 1, static_cast<int>(std::floor((hi - origin) / step)));
    Vector b(1);
    for (int i = i0; i <= i1; ++i) {
      const double node = q.coordinate(d, i);
      if (node <= lo || node >= hi) continue;
      b[0] = (node - a[0]) / h;
      consider(b);
    }
  }
  return best;
}

inline BallMax sup_over_ball(const GridQ& q, const Vector& x_next, const Vector& a,
                             double h, double L, int n_dirs = 16) {
  return sup_over_ball(q, x_next, a, h, L, ball_stencil(q.action_dim(), L, n_dirs));
}

// ---------------------------------------------------------------------------
// Bellman operator
// ---------------------------------------------------------------------------

/**
 * (T^h Q)(x, a) = h r(x, a) + (1 - gamma h) sup_{|b|<=L} Q(xi(x, a; h), a + h b)
 * on every node, with xi clipped into the state box. Rewards and next
 * states depend only on the layout, so they are tabulated once and every
 * application is a Jacobi sweep over the previous grid.
 */
class BellmanOperator {
 public:
  BellmanOperator(const ControlSystem& sys, const GridQ& layout, double h, double L,
                  int n_dirs = 16)
      : h_(h), L_(L), discount_(1.0 - sys.gamma * h),
        stencil_(ball_stencil(layout.action_dim(), L, n_dirs)) {
    if (!(h > 0.0) || !(sys.gamma * h < 1.0))
      throw std::invalid_argument("Bellman operator requires 0 < h < 1/gamma so that 1 - gamma h > 0");
    if (!(L > 0.0)) throw std::invalid_argument("Bellman operator requires L > 0");
    if (layout.state_dim() != sys.state_dim || layout.action_dim() != sys.action_dim)
      throw std::invalid_argument("Bellman operator: grid and system dimensions differ");
    const ZeroOrderHold flow(sys, h);
    const std::size_t count = layout.size();
    reward_.resize(count);
    next_.resize(count);
    action_.resize(count);
    Vector x, a;
    for (std::size_t i = 0; i < count; ++i) {
      layout.node(i, x, a);
      reward_[i] = sys.reward(x, a);
      next_[i] = layout.state_box().clip(flow.flow(x, a));
      action_[i] = a;
    }
  }

  double h() const { return h_; }
  double L() const { return L_; }
  double discount() const { return discount_; }

  GridQ apply(const GridQ& q) const {
    check(q);
    GridQ out = q;
    for (std::size_t i = 0; i < q.size(); ++i) out[i] = node_value(q, i);
    return out;
  }

  /// (1 - alpha) q + alpha T^h q, nodewise.
  GridQ blend(const GridQ& q, double alpha) const {
    if (!(alpha >= 0.0 && alpha <= 1.0))
      throw std::invalid_argument("q_sync_update: learning rate must lie in [0, 1]");
    check(q);
    GridQ out = q;
    if (alpha == 0.0) return out;
    for (std::size_t i = 0; i < q.size(); ++i)
      out[i] = (1.0 - alpha) * q[i] + alpha * node_value(q, i);
    return out;
  }

 private:
  void check(const GridQ& q) const {
    if (q.size() != reward_.size())
      throw std::invalid_argument("Bellman operator: grid layout differs from the tabulated one");
  }

  double node_value(const GridQ& q, std::size_t i) const {
    const BallMax m = sup_over_ball(q, next_[i], action_[i], h_, L_, stencil_);
    return h_ * reward_[i] + discount_ * m.value;
  }

  double h_;
  double L_;
  double discount_;
  std::vector<Vector> stencil_;
  std::vector<double> reward_;
  std::vector<Vector> next_;
  std::vector<Vector> action_;
};

inline GridQ bellman_apply(const GridQ& q, const ControlSystem& sys, double h, double L,
                           int n_dirs = 16) {
  return BellmanOperator(sys, q, h, L, n_dirs).apply(q);
}

inline GridQ q_sync_update(const GridQ& q, const ControlSystem& sys, double h, double L,
                           double alpha, int n_dirs = 16) {
  return BellmanOperator(sys, q, h, L, n_dirs).blend(q, alpha);
}

// ---------------------------------------------------------------------------
// Value iteration
// ---------------------------------------------------------------------------

class MaxIterationsExceeded : public std::runtime_error {
 public:
  MaxIterationsExceeded(int iterations, double residual)
      : std::runtime_error("value_iterate: " + std::to_string(iterations) +
                           " iterations exceeded, last residual " + std::to_string(residual)),
        residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

struct ValueIterationResult {
  GridQ q;
  int iterations = 0;
  double residual = 0.0;     ///< ||q_{t+1} - q_t||_inf at exit
  double error_bound = 0.0;  ///< residual (1 - gamma h) / (gamma h) >= ||q - Q^{h,*}||_inf
  std::vector<double> residuals;
};

inline ValueIterationResult value_iterate(const GridQ& q0, const BellmanOperator& op,
                                          double gamma, double tol, int max_iter) {
  ValueIterationResult res{q0, 0, 0.0, 0.0, {}};
  for (int it = 0; it < max_iter; ++it) {
    GridQ next = op.apply(res.q);
    const double r = sup_distance(next, res.q);
    res.q = std::move(next);
    res.residuals.push_back(r);
    res.iterations = it + 1;
    res.residual = r;
    if (r < tol) {
      const double gh = gamma * op.h();
      res.error_bound = gh > 0.0 ? r * (1.0 - gh) / gh : r;
      return res;
    }
  }
  throw MaxIterationsExceeded(max_iter, res.residual);
}

inline ValueIterationResult value_iterate(const GridQ& q0, const ControlSystem& sys, double h,
                                          double L, double tol = 1e-10,
                                          int max_iter = 100000, int n_dirs = 16) {
  return value_iterate(q0, BellmanOperator(sys, q0, h, L, n_dirs), sys.gamma, tol, max_iter);
}

// ---------------------------------------------------------------------------
// Learning-rate schedules
// ---------------------------------------------------------------------------

class QSyncSchedule {
 public:
  enum class Kind { constant, harmonic, list };

  static QSyncSchedule constant(double alpha) {
    check(alpha);
    return QSyncSchedule(Kind::constant, alpha, {});
  }
  /// alpha_k = 1 / (k + 1)
  static QSyncSchedule harmonic() { return QSyncSchedule(Kind::harmonic, 1.0, {}); }
  static QSyncSchedule from_list(std::vector<double> alphas) {
    if (alphas.empty()) throw std::invalid_argument("QSyncSchedule: empty list");
    for (double a : alphas) check(a);
    return QSyncSchedule(Kind::list, 0.0, std::move(alphas));
  }

  Kind kind() const { return kind_; }

  double operator()(long k) const {
    switch (kind_) {
      case Kind::constant: return alpha_;
      case Kind::harmonic: return 1.0 / static_cast<double>(k + 1);
      case Kind::list:
        return list_[static_cast<std::size_t>(std::min<long>(k, static_cast<long>(list_.size()) - 1))];
    }
    return 0.0;
  }

  /// Whether sum_k alpha_k diverges. A finite list is extended by its last
  /// entry, so it diverges iff that entry is positive.
  bool diverges() const {
    switch (kind_) {
      case Kind::constant: return alpha_ > 0.0;
      case Kind::harmonic: return true;
      case Kind::list: return list_.back() > 0.0;
    }
    return false;
  }

 private:
  QSyncSchedule(Kind kind, double alpha, std::vector<double> list)
      : kind_(kind), alpha_(alpha), list_(std::move(list)) {}
  static void check(double a) {
    if (!(a >= 0.0 && a <= 1.0))
      throw std::invalid_argument("QSyncSchedule: learning rates must lie in [0, 1]");
  }

  Kind kind_;
  double alpha_;
  std::vector<double> list_;
};

// ---------------------------------------------------------------------------
// Residual tracking (grid-solve / qlearn-tabular output)
// ---------------------------------------------------------------------------

struct TabularRow {
  long iter = 0;
  double sup_residual = 0.0;              ///< ||q_k - q_{k-1}||_inf
  double sup_error_to_fixed_point = 0.0;  ///< ||q_k - Q^{h,*}||_inf
  double bound = 0.0;  ///< prod_{tau<k} (1 - alpha_tau gamma h) ||q_0 - Q^{h,*}||_inf
};

/**
 * Runs `iterations` synchronous updates from q0 under `schedule` and tracks the
 * distance to a previously computed fixed point together with the geometric
 * bound. Row 0 describes q0 itself.
 */
inline std::vector<TabularRow> track_q_sync(const GridQ& q0, const GridQ& fixed_point,
                                            const BellmanOperator& op, double gamma,
                                            const QSyncSchedule& schedule, long iterations) {
  std::vector<TabularRow> rows;
  const double e0 = sup_distance(q0, fixed_point);
  rows.push_back({0, 0.0, e0, e0});
  GridQ q = q0;
  double factor = 1.0;
  for (long k = 0; k < iterations; ++k) {
    const double alpha = schedule(k);
    GridQ next = op.blend(q, alpha);
    factor *= 1.0 - alpha * gamma * op.h();
    rows.push_back({k + 1, sup_distance(next, q), sup_distance(next, fixed_point), factor * e0});
    q = std::move(next);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Consistency in h
// ---------------------------------------------------------------------------

struct ConsistencyRow {
  double h = 0.0;
  double sup_difference = 0.0;  ///< sup over probes of |Q^{h,*} - Q^{h_min,*}|
  int iterations = 0;
};

/**
 * Solves for Q^{h,*} on a common grid for every h in the (decreasing) list and
 * compares each against the smallest h at the probe points.
 */
inline std::vector<ConsistencyRow> consistency_sweep(
    const ControlSystem& sys, double L, const std::vector<double>& h_list,
    const std::vector<std::pair<Vector, Vector>>& probes, const std::vector<int>& resolution,
    double tol = 1e-9, int n_dirs = 16) {
  if (h_list.empty()) throw std::invalid_argument("consistency_sweep: empty h list");
  for (std::size_t i = 1; i < h_list.size(); ++i)
    if (!(h_list[i] < h_list[i - 1]))
      throw std::invalid_argument("consistency_sweep: h list must be decreasing");

  std::vector<GridQ> solutions;
  std::vector<ConsistencyRow> rows;
  for (double h : h_list) {
    GridQ q0(sys.state_box, sys.action_box, resolution);
    ValueIterationResult vi = value_iterate(q0, sys, h, L, tol, 1'000'000, n_dirs);
    rows.push_back({h, 0.0, vi.iterations});
    solutions.push_back(std::move(vi.q));
  }
  const GridQ& finest = solutions.back();
  for (std::size_t i = 0; i < solutions.size(); ++i) {
    double s = 0.0;
    for (const auto& [x, a] : probes)
      s = std::max(s, std::abs(solutions[i].interp(x, a) - finest.interp(x, a)));
    rows[i].sup_difference = s;
  }
  return rows;
}

/// Read-only critic view of a grid, for greedy rollouts driven by a tabular Q.
struct GridCritic {
  const GridQ* q;
  double value(const Vector& x, const Vector& a) const {
    return q->interp(q->state_box().clip(x), q->action_box().clip(a));
  }
  Vector grad_action(const Vector& x, const Vector& a) const {
    return q->grad_action(q->state_box().clip(x), q->action_box().clip(a));
  }
};

}  // namespace hjq
