#pragma once

// Low-level numerical kernels: seeded counter-based randomness, dense
// matrix helpers, the matrix exponential, fixed-step RK4 and the Adam rule.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace hjq {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Raised when a trajectory or iterate leaves the finite range.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/**
 * Training allocates batch-sized Eigen temporaries (hundreds of KB) every
 * step. glibc serves blocks that large with mmap/munmap by default, which
 * roughly doubles the step time on page faults; keep them on the heap instead.
 * Call once at program start. No-op on other C libraries.
 */
inline void keep_large_allocations_on_heap() {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }
inline bool all_finite(const Vector& v) { return v.allFinite(); }

// ---------------------------------------------------------------------------
// Rng
// ---------------------------------------------------------------------------

/**
 * Counter-based generator: draw i is a pure function of (seed, i), mixed
 * through the SplitMix64 finalizer. The full state is the seed plus the draw
 * counter, so two generators with the same seed emit the same stream on every
 * platform.
 */
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() {
    return mix(seed_ * 0x9E3779B97F4A7C15ULL + mix(counter_++));
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    const double u = lo + (hi - lo) * uniform01();
    return u < hi ? u : lo;  // guards rounding up to hi
  }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: empty range");
    // Lemire-style rejection keeps the draw unbiased.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return r % n;
  }

  /// Box-Muller normal; each call consumes exactly two draws.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform01();
    const double u2 = uniform01();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double z = std::sqrt(-2.0 * std::log(u1)) *
                     std::cos(2.0 * std::numbers::pi * u2);
    return mean + stddev * z;
  }

  Vector normal_vector(Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  /// Independent child stream; does not advance this generator.
  Rng split(std::uint64_t stream) const {
    return Rng(mix(seed_ ^ mix(stream + 0xD1B54A32D192ED03ULL)));
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

// ---------------------------------------------------------------------------
// Matrix exponential
// ---------------------------------------------------------------------------

/**
 * e^{M t} by scaling and squaring around a [6/6] Pade core. The scaling
 * brings ||M t||_1 below 1/2, where the Pade truncation error is below
 * double precision.
 */
inline Matrix expm(const Matrix& m, double t = 1.0) {
  if (m.rows() != m.cols())
    throw std::invalid_argument("expm: matrix must be square");
  if (!m.allFinite() || !std::isfinite(t))
    throw std::invalid_argument("expm: non-finite input");

  const Eigen::Index n = m.rows();
  Matrix a = m * t;
  const double norm = a.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > 0.5) {
    squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
    a /= std::ldexp(1.0, squarings);
  }

  // Pade [6/6] coefficients c_k = (12-k)! 6! / (12! k! (6-k)!)
  constexpr double c[7] = {1.0,
                           1.0 / 2.0,
                           5.0 / 44.0,
                           1.0 / 66.0,
                           1.0 / 792.0,
                           1.0 / 15840.0,
                           1.0 / 665280.0};
  const Matrix id = Matrix::Identity(n, n);
  const Matrix a2 = a * a;
  const Matrix a4 = a2 * a2;
  const Matrix a6 = a4 * a2;
  const Matrix even = c[0] * id + c[2] * a2 + c[4] * a4 + c[6] * a6;
  const Matrix odd = a * (c[1] * id + c[3] * a2 + c[5] * a4);
  Matrix result = (even - odd).partialPivLu().solve(even + odd);
  for (int i = 0; i < squarings; ++i) result = result * result;
  return result;
}

// ---------------------------------------------------------------------------
// RK4
// ---------------------------------------------------------------------------

/// Classical RK4 over [0, h] with `substeps` equal steps; f maps Vector -> Vector.
template <class VectorField>
Vector rk4_step(VectorField&& f, Vector x, double h, int substeps = 1) {
  if (!(h > 0.0)) throw std::invalid_argument("rk4_step: h must be positive");
  if (substeps < 1) throw std::invalid_argument("rk4_step: substeps must be >= 1");
  const double dt = h / substeps;
  for (int s = 0; s < substeps; ++s) {
    const Vector k1 = f(x);
    const Vector k2 = f(Vector(x + 0.5 * dt * k1));
    const Vector k3 = f(Vector(x + 0.5 * dt * k2));
    const Vector k4 = f(Vector(x + dt * k3));
    x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!x.allFinite()) throw DivergenceError("rk4_step: non-finite state");
  }
  return x;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamParams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Vector m;
  Vector v;
  long step = 0;

  AdamState() = default;
  explicit AdamState(Eigen::Index size)
      : m(Vector::Zero(size)), v(Vector::Zero(size)) {}
};

/// One bias-corrected Adam step; increments state.step before use.
inline void adam_update(std::span<double> params, std::span<const double> grads,
                        AdamState& state, const AdamParams& opt = {}) {
  if (params.size() != grads.size() ||
      static_cast<Eigen::Index>(params.size()) != state.m.size() ||
      state.m.size() != state.v.size())
    throw std::invalid_argument("adam_update: shape mismatch");

  ++state.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  Eigen::Map<Vector> p(params.data(), static_cast<Eigen::Index>(params.size()));
  Eigen::Map<const Vector> g(grads.data(), static_cast<Eigen::Index>(grads.size()));

  state.m = opt.beta1 * state.m + (1.0 - opt.beta1) * g;
  state.v = opt.beta2 * state.v + (1.0 - opt.beta2) * g.cwiseProduct(g);
  p.array() -= opt.lr * (state.m.array() / bc1) /
               ((state.v.array() / bc2).sqrt() + opt.eps);
}

inline void adam_update(Vector& params, const Vector& grads, AdamState& state,
                        const AdamParams& opt = {}) {
  adam_update(std::span<double>(params.data(), static_cast<std::size_t>(params.size())),
              std::span<const double>(grads.data(), static_cast<std::size_t>(grads.size())),
              state, opt);
}

}  // namespace hjq
