#pragma once

// Continuous-time control systems and the zero-order-hold sampler that maps
// (x, a, h) to the state reached after holding a for h seconds.

#include "hjq/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>

namespace hjq {

/// Axis-aligned box given by per-coordinate closed intervals [lo_i, hi_i].
struct Box {
  Vector lo;
  Vector hi;

  static Box symmetric(Eigen::Index dim, double half_width) {
    return {Vector::Constant(dim, -half_width), Vector::Constant(dim, half_width)};
  }

  Eigen::Index dim() const { return lo.size(); }

  bool contains(const Vector& x, double slack = 0.0) const {
    return x.size() == lo.size() && (x.array() >= lo.array() - slack).all() &&
           (x.array() <= hi.array() + slack).all();
  }

  Vector clip(const Vector& x) const { return x.cwiseMax(lo).cwiseMin(hi); }

  Vector sample(Rng& rng) const {
    Vector x(lo.size());
    for (Eigen::Index i = 0; i < lo.size(); ++i) x[i] = rng.uniform(lo[i], hi[i]);
    return x;
  }
};

/// xdot = A x + B a, reward -(x'Qc x + a'Rc a), discount rate gamma (1/s).
struct LinearQuadraticSystem {
  Matrix A;
  Matrix B;
  Matrix Qc;
  Matrix Rc;
  double gamma = 0.0;

  Eigen::Index state_dim() const { return A.rows(); }
  Eigen::Index action_dim() const { return B.cols(); }

  double reward(const Vector& x, const Vector& a) const {
    return -(x.dot(Qc * x) + a.dot(Rc * a));
  }

  void validate() const {
    const auto n = A.rows();
    if (A.cols() != n || B.rows() != n || Qc.rows() != n || Qc.cols() != n ||
        Rc.rows() != B.cols() || Rc.cols() != B.cols())
      throw std::invalid_argument("LinearQuadraticSystem: inconsistent shapes");
    if (!A.allFinite() || !B.allFinite() || !Qc.allFinite() || !Rc.allFinite())
      throw std::invalid_argument("LinearQuadraticSystem: non-finite entries");
    if ((Qc - Qc.transpose()).cwiseAbs().maxCoeff() > 1e-12 ||
        (Rc - Rc.transpose()).cwiseAbs().maxCoeff() > 1e-12)
      throw std::invalid_argument("LinearQuadraticSystem: Qc and Rc must be symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> qeig(Qc, Eigen::EigenvaluesOnly);
    if (qeig.eigenvalues().minCoeff() < -1e-12)
      throw std::invalid_argument("LinearQuadraticSystem: Qc must be PSD");
    if (Rc.llt().info() != Eigen::Success)
      throw std::invalid_argument("LinearQuadraticSystem: Rc must be positive definite");
    if (!(gamma >= 0.0)) throw std::invalid_argument("LinearQuadraticSystem: gamma < 0");
  }
};

/**
 * A control system xdot = f(x, a) with reward rate r(x, a) and optional
 * diffusion sigma(x, a) (n x k). When `linear` is set the drift is exactly
 * A x + B a and the sampler uses the closed-form flow. `saturate_state`
 * turns the system into its clipped variant: every sampled next state is
 * projected into state_box.
 */
struct ControlSystem {
  Eigen::Index state_dim = 0;
  Eigen::Index action_dim = 0;
  double gamma = 0.0;
  std::function<Vector(const Vector&, const Vector&)> drift;
  std::function<double(const Vector&, const Vector&)> reward;
  std::function<Matrix(const Vector&, const Vector&)> diffusion;
  Box state_box;
  Box action_box;
  std::optional<LinearQuadraticSystem> linear;
  bool saturate_state = false;
};

inline ControlSystem make_control_system(const LinearQuadraticSystem& lq,
                                         Box state_box, Box action_box) {
  lq.validate();
  ControlSystem sys;
  sys.state_dim = lq.state_dim();
  sys.action_dim = lq.action_dim();
  sys.gamma = lq.gamma;
  sys.drift = [A = lq.A, B = lq.B](const Vector& x, const Vector& a) -> Vector {
    return A * x + B * a;
  };
  sys.reward = [lq](const Vector& x, const Vector& a) { return lq.reward(x, a); };
  sys.state_box = std::move(state_box);
  sys.action_box = std::move(action_box);
  sys.linear = lq;
  return sys;
}

/// Adds constant additive diffusion sigma * I_n.
inline ControlSystem with_additive_noise(ControlSystem sys, double sigma) {
  const auto n = sys.state_dim;
  sys.diffusion = [n, sigma](const Vector&, const Vector&) -> Matrix {
    return sigma * Matrix::Identity(n, n);
  };
  return sys;
}

inline Vector clip_to_box(const ControlSystem& sys, const Vector& x) {
  return sys.state_box.clip(x);
}

/// Number of integrator substeps so that each substep is at most 0.01 s.
inline int substeps_for(double h) {
  return std::max(1, static_cast<int>(std::ceil(h / 0.01 - 1e-12)));
}

/**
 * Zero-order-hold flow map for a fixed h. For linear systems it stores
 * Phi = e^{Ah} and Gamma(h) B with Gamma(h) = int_0^h e^{As} ds, read off
 * the augmented exponential exp([[A, I], [0, 0]] h).
 */
class ZeroOrderHold {
 public:
  ZeroOrderHold(const ControlSystem& sys, double h) : sys_(&sys), h_(h) {
    if (!(h > 0.0)) throw std::invalid_argument("step_exact: h must be positive");
    if (sys.linear) {
      const auto n = sys.linear->A.rows();
      Matrix aug = Matrix::Zero(2 * n, 2 * n);
      aug.topLeftCorner(n, n) = sys.linear->A;
      aug.topRightCorner(n, n) = Matrix::Identity(n, n);
      const Matrix e = expm(aug, h);
      phi_ = e.topLeftCorner(n, n);
      gamma_b_ = e.topRightCorner(n, n) * sys.linear->B;
    }
  }

  double h() const { return h_; }

  /// Unclipped flow.
  Vector flow(const Vector& x, const Vector& a) const {
    Vector next;
    if (sys_->linear) {
      next = phi_ * x + gamma_b_ * a;
    } else {
      next = rk4_step([&](const Vector& s) { return sys_->drift(s, a); }, x, h_,
                      substeps_for(h_));
    }
    if (!next.allFinite()) throw DivergenceError("step_exact: non-finite state");
    return next;
  }

  /// Flow followed by the saturation of clipped systems.
  Vector operator()(const Vector& x, const Vector& a) const {
    Vector next = flow(x, a);
    return sys_->saturate_state ? sys_->state_box.clip(next) : next;
  }

 private:
  const ControlSystem* sys_;
  double h_;
  Matrix phi_;
  Matrix gamma_b_;
};

/// State after holding action a for h seconds, starting from x.
inline Vector step_exact(const ControlSystem& sys, const Vector& x, const Vector& a,
                         double h) {
  if (!x.allFinite() || !a.allFinite())
    throw std::invalid_argument("step_exact: non-finite input");
  return ZeroOrderHold(sys, h)(x, a);
}

/// Euler-Maruyama over [0, h] with substeps of at most 0.01 s.
inline Vector step_sde(const ControlSystem& sys, Vector x, const Vector& a, double h,
                       Rng& rng) {
  if (!sys.diffusion) throw std::invalid_argument("step_sde: system has no diffusion");
  if (!(h > 0.0)) throw std::invalid_argument("step_sde: h must be positive");
  const int n_sub = substeps_for(h);
  const double dt = h / n_sub;
  const double sqrt_dt = std::sqrt(dt);
  for (int s = 0; s < n_sub; ++s) {
    const Matrix sigma = sys.diffusion(x, a);
    const Vector zeta = rng.normal_vector(sigma.cols());
    x += sys.drift(x, a) * dt + sigma * zeta * sqrt_dt;
    if (!x.allFinite()) throw DivergenceError("step_sde: non-finite state");
  }
  return sys.saturate_state ? sys.state_box.clip(x) : x;
}

/// True when some of `probes` unit vectors grows by more than `factor` under e^{A horizon}.
inline bool shows_growth(const Matrix& A, Rng& rng, double horizon = 50.0,
                         double factor = 10.0, int probes = 20) {
  const Matrix flow = expm(A, horizon);
  double best = 0.0;
  for (int i = 0; i < probes; ++i) {
    Vector v = rng.normal_vector(A.rows());
    v.normalize();
    best = std::max(best, (flow * v).norm());
  }
  return best > factor;
}

/**
 * Random unstable LQ instance: A ~ U[-0.1, 0.1], B ~ U[-0.5, 0.5], Qc = Rc = I,
 * resampled until the trajectory-growth test detects instability.
 */
inline LinearQuadraticSystem make_random_lq(Eigen::Index d, Rng& rng, double gamma = 0.0) {
  if (d < 1) throw std::invalid_argument("make_random_lq: dimension must be >= 1");
  for (int attempt = 0; attempt < 1000; ++attempt) {
    LinearQuadraticSystem lq;
    lq.A = Matrix(d, d);
    lq.B = Matrix(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) lq.A(i, j) = rng.uniform(-0.1, 0.1);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) lq.B(i, j) = rng.uniform(-0.5, 0.5);
    lq.Qc = Matrix::Identity(d, d);
    lq.Rc = Matrix::Identity(d, d);
    lq.gamma = gamma;
    if (shows_growth(lq.A, rng)) return lq;
  }
  throw std::runtime_error("make_random_lq: no unstable A in 1000 resamples");
}

/**
 * The scalar clipped LQ benchmark used by the tabular solver:
 * xdot = a_coef x + b_coef a, r = -(x^2 + a^2), state and action in [-1, 1],
 * next states saturated into the state box.
 */
inline ControlSystem clipped_lq_1d(double a_coef = 0.5, double b_coef = 1.0,
                                   double gamma = 1.0) {
  LinearQuadraticSystem lq;
  lq.A = Matrix::Constant(1, 1, a_coef);
  lq.B = Matrix::Constant(1, 1, b_coef);
  lq.Qc = Matrix::Identity(1, 1);
  lq.Rc = Matrix::Identity(1, 1);
  lq.gamma = gamma;
  ControlSystem sys = make_control_system(lq, Box::symmetric(1, 1.0), Box::symmetric(1, 1.0));
  sys.saturate_state = true;
  return sys;
}

}  // namespace hjq
