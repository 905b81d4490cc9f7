#pragma once

// Ground truth for discounted LQ problems: the stabilizing Riccati solution of
// the gamma/2-shifted system, and discounted-cost evaluation of policies.

#include "hjq/dynamics.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

namespace hjq {

struct RiccatiSolution {
  Matrix P;
  double residual = 0.0;
  long steps = 0;
  Matrix gain;  ///< K = Rc^{-1} B' P, optimal feedback a = -K x
};

/// A_g' P + P A_g + Qc - P B Rc^{-1} B' P with A_g = A - (gamma/2) I.
inline Matrix care_rhs(const LinearQuadraticSystem& lq, const Matrix& P) {
  const auto n = lq.A.rows();
  const Matrix ag = lq.A - 0.5 * lq.gamma * Matrix::Identity(n, n);
  const Matrix rinv_bt = lq.Rc.llt().solve(lq.B.transpose());
  return ag.transpose() * P + P * ag + lq.Qc - P * lq.B * rinv_bt * P;
}

inline double care_residual(const LinearQuadraticSystem& lq, const Matrix& P) {
  return care_rhs(lq, P).cwiseAbs().maxCoeff();
}

/**
 * Integrates the Riccati differential equation from P = 0 with RK4 (step
 * 0.01, symmetrized every step) until ||Pdot||_inf < 1e-10. A non-stabilizable
 * instance shows up as a blow-up or as running out of steps.
 */
inline RiccatiSolution solve_care(const LinearQuadraticSystem& lq, double dt = 0.01,
                                  long max_steps = 1'000'000, double tol = 1e-10) {
  lq.validate();
  const auto n = lq.A.rows();
  const Matrix ag = lq.A - 0.5 * lq.gamma * Matrix::Identity(n, n);
  const Matrix s = lq.B * lq.Rc.llt().solve(lq.B.transpose());
  auto rhs = [&](const Matrix& P) -> Matrix {
    return ag.transpose() * P + P * ag + lq.Qc - P * s * P;
  };

  Matrix P = Matrix::Zero(n, n);
  for (long step = 0; step < max_steps; ++step) {
    const Matrix k1 = rhs(P);
    if (k1.cwiseAbs().maxCoeff() < tol) {
      RiccatiSolution sol;
      sol.P = P;
      sol.residual = care_residual(lq, P);
      sol.steps = step;
      sol.gain = lq.Rc.llt().solve(lq.B.transpose() * P);
      return sol;
    }
    const Matrix k2 = rhs(P + 0.5 * dt * k1);
    const Matrix k3 = rhs(P + 0.5 * dt * k2);
    const Matrix k4 = rhs(P + dt * k3);
    P += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    P = 0.5 * (P + P.transpose()).eval();
    if (!P.allFinite()) throw DivergenceError("solve_care: Riccati flow diverged");
  }
  throw std::runtime_error("solve_care: no convergence (non-stabilizable system?)");
}

/// Minimal discounted cost x0' P x0.
inline double optimal_cost(const RiccatiSolution& sol, const Vector& x0) {
  return x0.dot(sol.P * x0);
}

/// a = -K x, ignoring the previous action.
inline std::function<Vector(const Vector&, const Vector&)> riccati_feedback(
    const RiccatiSolution& sol) {
  return [K = sol.gain](const Vector& x, const Vector&) -> Vector { return -K * x; };
}

inline double default_horizon(double gamma) { return 10.0 / gamma; }

/// Sentinel cost of a policy whose trajectory left the 1e6 ball.
inline constexpr double kDivergedCost = std::numeric_limits<double>::infinity();

/**
 * Discounted cost sum_k e^{-gamma k h} h (x_k'Qc x_k + a_k'Rc a_k) of the
 * zero-order-hold rollout where a_k = policy(x_k, a_{k-1}) and a_{-1} = a0.
 */
template <class Policy>
double evaluate_policy_cost(const LinearQuadraticSystem& lq, Policy&& policy,
                            const Vector& x0, const Vector& a0, double h, double horizon) {
  const ControlSystem sys = make_control_system(
      lq, Box::symmetric(lq.state_dim(), std::numeric_limits<double>::infinity()),
      Box::symmetric(lq.action_dim(), std::numeric_limits<double>::infinity()));
  const ZeroOrderHold flow(sys, h);
  const long steps = std::lround(horizon / h);
  const double decay = std::exp(-lq.gamma * h);
  double weight = 1.0;
  double cost = 0.0;
  Vector x = x0;
  Vector a = a0;
  for (long k = 0; k < steps; ++k) {
    a = policy(x, a);
    cost += weight * h * (-lq.reward(x, a));
    x = flow(x, a);
    if (!x.allFinite() || x.norm() > 1e6) return kDivergedCost;
    weight *= decay;
  }
  return cost;
}

}  // namespace hjq
