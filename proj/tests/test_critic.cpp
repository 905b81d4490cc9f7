#include "hjq/critic.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace hjq;

namespace {

// Straightforward scalar-loop evaluation reading the documented parameter layout.
double naive_forward(const MlpCritic& c, const Vector& x, const Vector& a) {
  std::vector<double> h(x.data(), x.data() + x.size());
  h.insert(h.end(), a.data(), a.data() + a.size());
  const auto& sizes = c.sizes();
  const double* p = c.params().data();
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int in = sizes[l], out = sizes[l + 1];
    const double* w = p;
    const double* b = p + in * out;
    std::vector<double> next(static_cast<std::size_t>(out));
    for (int i = 0; i < out; ++i) {
      double s = b[i];
      for (int j = 0; j < in; ++j) s += w[i * in + j] * h[static_cast<std::size_t>(j)];
      next[static_cast<std::size_t>(i)] = (l + 2 < sizes.size()) ? std::max(0.0, s) : s;
    }
    h = std::move(next);
    p += in * out + out;
  }
  return h[0];
}

MlpCritic random_critic(Rng& rng, int n, int m, std::vector<int> hidden) {
  MlpCritic c(n, m, hidden);
  c.init_uniform(rng);
  return c;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

}  // namespace

TEST(MlpCritic, ZeroNetworkOutputsZero) {
  const MlpCritic c(2, 2, {8, 8});
  EXPECT_EQ(c.forward(Vector::Ones(2), Vector::Ones(2)), 0.0);
}

TEST(MlpCritic, LinearNetworkIsAnAffineMap) {
  MlpCritic c = MlpCritic::from_sizes(2, 1, {3, 1});
  c.params() << 0.5, -1.0, 2.0, 0.25;  // w = (0.5, -1, 2), b = 0.25
  Vector x(2);
  x << 1.0, 3.0;
  EXPECT_DOUBLE_EQ(c.forward(x, Vector::Constant(1, -0.5)), 0.5 - 3.0 - 1.0 + 0.25);
  EXPECT_DOUBLE_EQ(c.grad_action(x, Vector::Zero(1))[0], 2.0);
}

TEST(MlpCritic, MatchesNaiveImplementation) {
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const MlpCritic c = random_critic(rng, 3, 2, {7, 5});
    const Vector x = rng.normal_vector(3), a = rng.normal_vector(2);
    EXPECT_NEAR(c.forward(x, a), naive_forward(c, x, a), 1e-12);
  }
}

TEST(MlpCritic, BatchAgreesWithPointwise) {
  Rng rng(2);
  const MlpCritic c = random_critic(rng, 2, 2, {16, 16});
  Matrix in(4, 6);
  for (int j = 0; j < 6; ++j) in.col(j) = rng.normal_vector(4);
  const Eigen::RowVectorXd q = c.forward_batch(in);
  for (int j = 0; j < 6; ++j)
    EXPECT_NEAR(q[j], c.forward(in.col(j).head(2), in.col(j).tail(2)), 1e-12);
}

TEST(MlpCritic, BiasShiftOnOutputShiftsEverything) {
  Rng rng(3);
  MlpCritic c = random_critic(rng, 2, 1, {8});
  const Vector x = rng.normal_vector(2), a = rng.normal_vector(1);
  const double before = c.forward(x, a);
  c.bias(c.layers() - 1)[0] += 1.75;
  EXPECT_NEAR(c.forward(x, a), before + 1.75, 1e-12);
}

TEST(GradAction, ZeroNetworkHasZeroGradient) {
  const MlpCritic c(2, 3, {4});
  EXPECT_EQ(c.grad_action(Vector::Ones(2), Vector::Ones(3)), Vector::Zero(3));
}

TEST(GradAction, MatchesCentralDifferences) {
  Rng rng(4);
  int checked = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const MlpCritic c = random_critic(rng, 2, 2, {32, 32});
    const Vector x = rng.normal_vector(2), a = rng.normal_vector(2);
    const double eps = 1e-6;
    if (c.min_abs_preactivation(x, a) < 1e-3) continue;  // too close to a ReLU kink
    const Vector g = c.grad_action(x, a);
    for (int i = 0; i < 2; ++i) {
      Vector ap = a, am = a;
      ap[i] += eps;
      am[i] -= eps;
      const double fd = (c.forward(x, ap) - c.forward(x, am)) / (2 * eps);
      EXPECT_LT(rel_err(g[i], fd), 1e-4);
    }
    ++checked;
  }
  EXPECT_GE(checked, 20);
}

TEST(GradParams, ZeroWhenTargetsEqualPredictions) {
  Rng rng(5);
  const MlpCritic c = random_critic(rng, 2, 1, {8});
  std::vector<Sample> batch;
  for (int i = 0; i < 5; ++i) {
    Sample s{rng.normal_vector(2), rng.normal_vector(1), 0.0};
    s.y = c.forward(s.x, s.a);
    batch.push_back(s);
  }
  const auto lg = grad_params(c, batch);
  EXPECT_EQ(lg.loss, 0.0);
  EXPECT_EQ(lg.grad.cwiseAbs().maxCoeff(), 0.0);
}

TEST(GradParams, LinearSingleSampleClosedForm) {
  MlpCritic c = MlpCritic::from_sizes(1, 1, {2, 1});
  c.params() << 1.0, 2.0, 0.5;
  const Sample s{Vector::Constant(1, 3.0), Vector::Constant(1, -1.0), 1.0};
  // Q = 3 - 2 + 0.5 = 1.5, residual 0.5, dL/dw = 2 * 0.5 * input, dL/db = 2 * 0.5.
  const auto lg = grad_params(c, {s});
  EXPECT_DOUBLE_EQ(lg.loss, 0.25);
  EXPECT_DOUBLE_EQ(lg.grad[0], 3.0);
  EXPECT_DOUBLE_EQ(lg.grad[1], -1.0);
  EXPECT_DOUBLE_EQ(lg.grad[2], 1.0);
}

TEST(GradParams, MatchesCentralDifferences) {
  Rng rng(6);
  int checked = 0;
  for (int trial = 0; trial < 30; ++trial) {
    MlpCritic c = random_critic(rng, 2, 2, {12, 12});
    std::vector<Sample> batch;
    bool near_kink = false;
    for (int j = 0; j < 4; ++j) {
      Sample s{rng.normal_vector(2), rng.normal_vector(2), rng.normal()};
      near_kink = near_kink || c.min_abs_preactivation(s.x, s.a) < 1e-3;
      batch.push_back(s);
    }
    if (near_kink) continue;
    const Vector g = grad_params(c, batch).grad;
    const double eps = 1e-6;
    for (int probe = 0; probe < 10; ++probe) {
      const auto i = static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(c.param_count())));
      const double keep = c.params()[i];
      c.params()[i] = keep + eps;
      const double up = grad_params(c, batch).loss;
      c.params()[i] = keep - eps;
      const double down = grad_params(c, batch).loss;
      c.params()[i] = keep;
      EXPECT_LT(rel_err(g[i], (up - down) / (2 * eps)), 1e-4);
    }
    ++checked;
  }
  EXPECT_GE(checked, 20);
}

TEST(GradParams, EmptyBatchAndShapeErrors) {
  const MlpCritic c(2, 1, {4});
  EXPECT_THROW(grad_params(c, {}), std::invalid_argument);
  EXPECT_THROW(c.forward_batch(Matrix::Zero(2, 1)), std::invalid_argument);
}

TEST(Polyak, EndpointsAndRepeatedAveraging) {
  Rng rng(7);
  PolyakPair pair(random_critic(rng, 1, 1, {4}));
  pair.online.init_uniform(rng);
  const Vector target0 = pair.target.params();
  polyak_update(pair, 0.0);
  EXPECT_EQ(pair.target.params(), target0);

  const Vector gap0 = pair.online.params() - pair.target.params();
  for (int i = 0; i < 1000; ++i) polyak_update(pair, 0.001);
  const Vector gap = pair.online.params() - pair.target.params();
  EXPECT_NEAR(gap.norm() / gap0.norm(), std::pow(0.999, 1000), 1e-9);

  polyak_update(pair, 1.0);
  EXPECT_EQ(pair.target.params(), pair.online.params());
  EXPECT_THROW(polyak_update(pair, 1.5), std::invalid_argument);
  pair.target = MlpCritic(1, 1, {5});
  EXPECT_THROW(polyak_update(pair, 0.5), std::invalid_argument);
}

TEST(Init, OutputsAreModestOnTheUnitBox) {
  int good_seeds = 0;
  const int seeds = 100;
  for (int seed = 0; seed < seeds; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed));
    const MlpCritic c = random_critic(rng, 2, 2, {256, 256});
    Rng probe(1000 + seed);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      Vector x(2), a(2);
      x << probe.uniform(-1, 1), probe.uniform(-1, 1);
      a << probe.uniform(-1, 1), probe.uniform(-1, 1);
      worst = std::max(worst, std::abs(c.forward(x, a)));
    }
    good_seeds += worst <= 10.0;
  }
  EXPECT_GE(good_seeds, 99);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(8);
  const MlpCritic c = random_critic(rng, 3, 2, {6, 4});
  std::stringstream buf;
  c.save(buf);
  const std::string bytes = buf.str();
  ASSERT_GE(bytes.size(), 16u);
  EXPECT_EQ(bytes.substr(0, 10), std::string("HJQCRITIC\0", 10));
  EXPECT_EQ(static_cast<unsigned char>(bytes[10]), 1u);
  EXPECT_EQ(bytes.size(), 16u + 4u * (1 + 4) + 8u * static_cast<std::size_t>(c.param_count()));
  const MlpCritic back = MlpCritic::load(buf, 3, 2);
  EXPECT_TRUE(back.same_architecture(c));
  EXPECT_EQ(std::memcmp(back.params().data(), c.params().data(),
                        sizeof(double) * static_cast<std::size_t>(c.param_count())),
            0);
}

TEST(Checkpoint, RejectsBadFiles) {
  std::stringstream junk("NOTACRITIC......");
  EXPECT_THROW(MlpCritic::load(junk, 1, 1), std::runtime_error);
  Rng rng(9);
  std::stringstream buf;
  random_critic(rng, 1, 1, {3}).save(buf);
  std::string truncated = buf.str().substr(0, buf.str().size() - 5);
  std::stringstream t(truncated);
  EXPECT_THROW(MlpCritic::load(t, 1, 1), std::runtime_error);
  std::stringstream again(buf.str());
  EXPECT_THROW(MlpCritic::load(again, 2, 1), std::invalid_argument);  // wrong input split
}
