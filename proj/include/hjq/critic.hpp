#pragma once

// Fully-connected critic Q_theta(x, a) with hand-written reverse mode for the
// action gradient and the parameter gradient of the regression loss.

#include "hjq/numerics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <vector>

namespace hjq {

/**
 * Layer sizes [n + m, hidden..., 1], ReLU on hidden layers and identity on the
 * output. All parameters live in one flat vector: for each layer the weight
 * matrix (out x in, row-major) followed by its bias.
 */
class MlpCritic {
 public:
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  /// Activations and pre-activations of one batched forward pass.
  struct Tape {
    std::vector<Matrix> input;  ///< input[l] is the input of layer l (in_l x B)
    std::vector<Matrix> pre;    ///< pre[l] = W_l input[l] + b_l
  };

  MlpCritic() = default;

  MlpCritic(int state_dim, int action_dim, const std::vector<int>& hidden = {256, 256})
      : state_dim_(state_dim), action_dim_(action_dim) {
    sizes_.push_back(state_dim + action_dim);
    sizes_.insert(sizes_.end(), hidden.begin(), hidden.end());
    sizes_.push_back(1);
    layout();
  }

  /// Architecture from explicit sizes; the first entry must equal state_dim + action_dim.
  static MlpCritic from_sizes(int state_dim, int action_dim, std::vector<int> sizes) {
    if (sizes.size() < 2 || sizes.front() != state_dim + action_dim || sizes.back() != 1)
      throw std::invalid_argument("MlpCritic: sizes must run from n + m to 1");
    MlpCritic c;
    c.state_dim_ = state_dim;
    c.action_dim_ = action_dim;
    c.sizes_ = std::move(sizes);
    c.layout();
    return c;
  }

  /// Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  void init_uniform(Rng& rng) {
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
      const Eigen::Index count = sizes_[l] * sizes_[l + 1] + sizes_[l + 1];
      for (Eigen::Index i = 0; i < count; ++i)
        params_[offsets_[l] + i] = rng.uniform(-bound, bound);
    }
  }

  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  int input_dim() const { return state_dim_ + action_dim_; }
  const std::vector<int>& sizes() const { return sizes_; }
  std::size_t layers() const { return sizes_.size() - 1; }
  Eigen::Index param_count() const { return params_.size(); }

  Vector& params() { return params_; }
  const Vector& params() const { return params_; }

  Eigen::Map<const RowMajor> weight(std::size_t l) const {
    return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
  }
  Eigen::Map<RowMajor> weight(std::size_t l) {
    return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
  }
  Eigen::Map<const Vector> bias(std::size_t l) const {
    return {params_.data() + offsets_[l] + sizes_[l] * sizes_[l + 1], sizes_[l + 1]};
  }
  Eigen::Map<Vector> bias(std::size_t l) {
    return {params_.data() + offsets_[l] + sizes_[l] * sizes_[l + 1], sizes_[l + 1]};
  }

  Vector join(const Vector& x, const Vector& a) const {
    if (x.size() != state_dim_ || a.size() != action_dim_)
      throw std::invalid_argument("MlpCritic: input dimension mismatch");
    Vector in(input_dim());
    in << x, a;
    return in;
  }

  // -- batched passes -------------------------------------------------------

  /// Q for every column of `inputs` (input_dim x B).
  Eigen::RowVectorXd forward_batch(const Matrix& inputs, Tape* tape = nullptr) const {
    if (inputs.rows() != input_dim())
      throw std::invalid_argument("MlpCritic: input dimension mismatch");
    Matrix h = inputs;
    if (tape) {
      tape->input.resize(layers());
      tape->pre.resize(layers());
    }
    for (std::size_t l = 0; l < layers(); ++l) {
      Matrix z = weight(l) * h;
      z.colwise() += bias(l);
      if (tape) {
        tape->input[l] = std::move(h);
        tape->pre[l] = z;
      }
      h = (l + 1 < layers()) ? Matrix(z.cwiseMax(0.0)) : std::move(z);
    }
    return h.row(0);
  }

  /// dQ/d(input) for every column (input_dim x B); ReLU'(0) = 0.
  Matrix input_gradient(const Tape& tape) const {
    const Eigen::Index batch = tape.pre.back().cols();
    Matrix delta = Matrix::Ones(1, batch);
    for (std::size_t l = layers(); l-- > 0;) {
      if (l + 1 < layers()) delta.array() *= (tape.pre[l].array() > 0.0).cast<double>();
      delta = weight(l).transpose() * delta;
    }
    return delta;
  }

  /// Parameter gradient of sum_j upstream_j * Q(input_j).
  Vector param_gradient(const Tape& tape, const Eigen::RowVectorXd& upstream) const {
    Vector grad(param_count());
    Matrix delta = upstream;
    for (std::size_t l = layers(); l-- > 0;) {
      if (l + 1 < layers()) delta.array() *= (tape.pre[l].array() > 0.0).cast<double>();
      Eigen::Map<RowMajor> gw(grad.data() + offsets_[l], sizes_[l + 1], sizes_[l]);
      gw.noalias() = delta * tape.input[l].transpose();
      Eigen::Map<Vector>(grad.data() + offsets_[l] + sizes_[l] * sizes_[l + 1], sizes_[l + 1]) =
          delta.rowwise().sum();
      if (l > 0) delta = weight(l).transpose() * delta;
    }
    return grad;
  }

  // -- single-point API -----------------------------------------------------

  double forward(const Vector& x, const Vector& a) const {
    return forward_batch(join(x, a))(0);
  }
  double value(const Vector& x, const Vector& a) const { return forward(x, a); }

  Vector grad_action(const Vector& x, const Vector& a) const {
    Tape tape;
    forward_batch(join(x, a), &tape);
    return input_gradient(tape).col(0).tail(action_dim_);
  }

  /// Smallest |pre-activation| over hidden units; kinks of the ReLU sit at 0.
  double min_abs_preactivation(const Vector& x, const Vector& a) const {
    Tape tape;
    forward_batch(join(x, a), &tape);
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l + 1 < layers(); ++l) m = std::min(m, tape.pre[l].cwiseAbs().minCoeff());
    return m;
  }

  bool same_architecture(const MlpCritic& other) const {
    return sizes_ == other.sizes_ && state_dim_ == other.state_dim_ &&
           action_dim_ == other.action_dim_;
  }

  // -- checkpoint -----------------------------------------------------------

  static constexpr std::uint8_t kCheckpointVersion = 1;

  /**
   * 16-byte header ("HJQCRITIC\0", version byte, five zero bytes), then the
   * layer-size count and sizes as little-endian uint32, then the parameters
   * as little-endian IEEE-754 doubles in the flat order described above.
   */
  void save(std::ostream& out) const {
    char header[16] = {'H', 'J', 'Q', 'C', 'R', 'I', 'T', 'I', 'C', '\0'};
    header[10] = static_cast<char>(kCheckpointVersion);
    out.write(header, sizeof header);
    write_u32(out, static_cast<std::uint32_t>(sizes_.size()));
    for (int s : sizes_) write_u32(out, static_cast<std::uint32_t>(s));
    for (Eigen::Index i = 0; i < params_.size(); ++i) {
      std::uint64_t bits = std::bit_cast<std::uint64_t>(params_[i]);
      write_le(out, bits, 8);
    }
    if (!out) throw std::runtime_error("MlpCritic::save: write failed");
  }

  /// state/action split is supplied by the caller; the file stores only sizes.
  static MlpCritic load(std::istream& in, int state_dim, int action_dim) {
    char header[16];
    in.read(header, sizeof header);
    if (!in || std::memcmp(header, "HJQCRITIC\0", 10) != 0)
      throw std::runtime_error("MlpCritic::load: bad magic");
    if (static_cast<std::uint8_t>(header[10]) != kCheckpointVersion)
      throw std::runtime_error("MlpCritic::load: unsupported version");
    const std::uint32_t count = read_u32(in);
    if (count < 2 || count > 64) throw std::runtime_error("MlpCritic::load: bad layer count");
    std::vector<int> sizes(count);
    for (auto& s : sizes) s = static_cast<int>(read_u32(in));
    MlpCritic c = from_sizes(state_dim, action_dim, sizes);
    for (Eigen::Index i = 0; i < c.params_.size(); ++i)
      c.params_[i] = std::bit_cast<double>(read_le(in, 8));
    if (!in) throw std::runtime_error("MlpCritic::load: truncated file");
    return c;
  }

 private:
  void layout() {
    offsets_.clear();
    Eigen::Index total = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      if (sizes_[l] < 1 || sizes_[l + 1] < 1)
        throw std::invalid_argument("MlpCritic: layer sizes must be positive");
      offsets_.push_back(total);
      total += sizes_[l] * sizes_[l + 1] + sizes_[l + 1];
    }
    params_ = Vector::Zero(total);
  }

  static void write_le(std::ostream& out, std::uint64_t v, int bytes) {
    char buf[8];
    for (int i = 0; i < bytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(buf, bytes);
  }
  static std::uint64_t read_le(std::istream& in, int bytes) {
    unsigned char buf[8] = {};
    in.read(reinterpret_cast<char*>(buf), bytes);
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
  }
  static void write_u32(std::ostream& out, std::uint32_t v) { write_le(out, v, 4); }
  static std::uint32_t read_u32(std::istream& in) {
    return static_cast<std::uint32_t>(read_le(in, 4));
  }

  int state_dim_ = 0;
  int action_dim_ = 0;
  std::vector<int> sizes_;
  std::vector<Eigen::Index> offsets_;
  Vector params_;
};

// ---------------------------------------------------------------------------

struct Sample {
  Vector x;
  Vector a;
  double y = 0.0;
};

/// Inputs stacked as columns (x_j; a_j).
inline Matrix stack_inputs(const MlpCritic& c, const std::vector<Sample>& batch) {
  Matrix in(c.input_dim(), static_cast<Eigen::Index>(batch.size()));
  for (std::size_t j = 0; j < batch.size(); ++j)
    in.col(static_cast<Eigen::Index>(j)) = c.join(batch[j].x, batch[j].a);
  return in;
}

struct LossGradient {
  double loss = 0.0;  ///< (1/B) sum (y - Q)^2
  Vector grad;
};

/// Gradient of the batch mean squared error with respect to all parameters.
inline LossGradient grad_params(const MlpCritic& c, const std::vector<Sample>& batch) {
  if (batch.empty()) throw std::invalid_argument("grad_params: empty batch");
  MlpCritic::Tape tape;
  const Eigen::RowVectorXd q = c.forward_batch(stack_inputs(c, batch), &tape);
  Eigen::RowVectorXd resid(q.size());
  for (Eigen::Index j = 0; j < q.size(); ++j) resid[j] = q[j] - batch[static_cast<std::size_t>(j)].y;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  return {resid.squaredNorm() * inv_b, c.param_gradient(tape, 2.0 * inv_b * resid)};
}

/// Online critic theta and the slowly tracking target theta^-.
struct PolyakPair {
  MlpCritic online;
  MlpCritic target;

  PolyakPair() = default;
  explicit PolyakPair(MlpCritic c) : online(c), target(std::move(c)) {}
};

/// theta^- <- (1 - alpha) theta^- + alpha theta.
inline void polyak_update(PolyakPair& pair, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("polyak_update: alpha must lie in [0, 1]");
  if (!pair.online.same_architecture(pair.target))
    throw std::invalid_argument("polyak_update: architectures differ");
  if (alpha == 0.0) return;
  if (alpha == 1.0) {
    pair.target.params() = pair.online.params();
    return;
  }
  pair.target.params() = (1.0 - alpha) * pair.target.params() + alpha * pair.online.params();
}

}  // namespace hjq
