// Three-layer MLP classifier (D -> 256 -> 128 -> 2, leaky ReLU, softmax)
// with hand-written forward, backward and Hessian-vector passes.
//
// Parameters are values: every update returns a new ModelParams, so the
// meta-learner can keep pre- and post-adaptation weights side by side.
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "xlabuse/common.hpp"

namespace xlabuse {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

struct Architecture {
  std::size_t input = 0;
  std::size_t hidden1 = 256;
  std::size_t hidden2 = 128;
  std::size_t output = 2;
  double negative_slope = 0.01;

  bool operator==(const Architecture&) const = default;
};

struct ModelParams {
  Architecture arch;
  Matrix w1, w2, w3;
  RowVector b1, b2, b3;

  static ModelParams zeros(const Architecture& a) {
    const auto d = static_cast<Eigen::Index>(a.input), h1 = static_cast<Eigen::Index>(a.hidden1),
               h2 = static_cast<Eigen::Index>(a.hidden2), o = static_cast<Eigen::Index>(a.output);
    return {a,
            Matrix::Zero(d, h1),     Matrix::Zero(h1, h2),     Matrix::Zero(h2, o),
            RowVector::Zero(h1),     RowVector::Zero(h2),      RowVector::Zero(o)};
  }

  std::size_t size() const {
    return static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + b2.size() + w3.size() + b3.size());
  }

  /// Visits the tensors in declaration order: W1, b1, W2, b2, W3, b3.
  template <typename F>
  void for_each(F&& f) {
    f(w1.data(), w1.size()); f(b1.data(), b1.size());
    f(w2.data(), w2.size()); f(b2.data(), b2.size());
    f(w3.data(), w3.size()); f(b3.data(), b3.size());
  }
  template <typename F>
  void for_each(F&& f) const {
    f(w1.data(), w1.size()); f(b1.data(), b1.size());
    f(w2.data(), w2.size()); f(b2.data(), b2.size());
    f(w3.data(), w3.size()); f(b3.data(), b3.size());
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(size());
    for_each([&](const double* p, Eigen::Index n) { out.insert(out.end(), p, p + n); });
    return out;
  }

  static ModelParams unflatten(const Architecture& a, std::span<const double> flat) {
    ModelParams p = zeros(a);
    if (flat.size() != p.size()) throw ValidationError("flat parameter vector has wrong length");
    std::size_t off = 0;
    p.for_each([&](double* dst, Eigen::Index n) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), n, dst);
      off += static_cast<std::size_t>(n);
    });
    return p;
  }

  bool all_finite() const {
    return w1.allFinite() && w2.allFinite() && w3.allFinite() && b1.allFinite() && b2.allFinite() &&
           b3.allFinite();
  }

  bool operator==(const ModelParams& o) const {
    return arch == o.arch && w1 == o.w1 && w2 == o.w2 && w3 == o.w3 && b1 == o.b1 && b2 == o.b2 && b3 == o.b3;
  }
};

/// Gradients share the parameter layout.
using Gradients = ModelParams;

/// Elementwise a + scale * b.
inline ModelParams axpy(const ModelParams& a, double scale, const ModelParams& b) {
  ModelParams out = a;
  out.w1 += scale * b.w1; out.b1 += scale * b.b1;
  out.w2 += scale * b.w2; out.b2 += scale * b.b2;
  out.w3 += scale * b.w3; out.b3 += scale * b.b3;
  return out;
}

inline double dot(const ModelParams& a, const ModelParams& b) {
  return (a.w1.array() * b.w1.array()).sum() + (a.b1.array() * b.b1.array()).sum() +
         (a.w2.array() * b.w2.array()).sum() + (a.b2.array() * b.b2.array()).sum() +
         (a.w3.array() * b.w3.array()).sum() + (a.b3.array() * b.b3.array()).sum();
}

struct Batch {
  Matrix inputs;             // N x D
  std::vector<int> targets;  // 0 = non_abusive, 1 = abusive

  std::size_t size() const { return targets.size(); }
};

/// Uniform fan-in initialisation with leaky-ReLU gain, zero biases:
/// bound = sqrt(6 / ((1 + slope^2) * fan_in)).
inline ModelParams init_params(const Architecture& arch, std::uint64_t seed) {
  if (arch.input == 0) throw ValidationError("input dimension must be >= 1");
  ModelParams p = ModelParams::zeros(arch);
  std::mt19937_64 rng(seed);
  auto fill = [&](Matrix& w) {
    const double bound = std::sqrt(6.0 / ((1.0 + arch.negative_slope * arch.negative_slope) *
                                          static_cast<double>(w.rows())));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = u(rng);
  };
  fill(p.w1);
  fill(p.w2);
  fill(p.w3);
  return p;
}

inline ModelParams apply_step(const ModelParams& params, const Gradients& grads, double lr) {
  return axpy(params, -lr, grads);
}

struct ForwardCache {
  Matrix x, z1, h1, z2, h2, logits, probs;
};

namespace detail {

inline Matrix leaky(const Matrix& z, double slope) {
  return z.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
}
inline Matrix leaky_grad(const Matrix& z, double slope) {
  return z.unaryExpr([slope](double v) { return v > 0.0 ? 1.0 : slope; });
}

inline void check_batch(const ModelParams& params, const Batch& batch) {
  if (batch.size() == 0) throw ValidationError("empty batch");
  if (static_cast<std::size_t>(batch.inputs.rows()) != batch.size()) {
    throw ValidationError("batch has " + std::to_string(batch.inputs.rows()) + " rows but " +
                          std::to_string(batch.size()) + " targets");
  }
  if (static_cast<std::size_t>(batch.inputs.cols()) != params.arch.input) {
    throw ValidationError("batch input dim " + std::to_string(batch.inputs.cols()) + " != model dim " +
                          std::to_string(params.arch.input));
  }
  for (int t : batch.targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= params.arch.output) throw ValidationError("target out of range");
  }
}

}  // namespace detail

inline ForwardCache forward(const ModelParams& params, const Batch& batch) {
  detail::check_batch(params, batch);
  if (!batch.inputs.allFinite()) throw ValidationError("non-finite value in batch inputs");
  const double a = params.arch.negative_slope;
  ForwardCache c;
  c.x = batch.inputs;
  c.z1 = (c.x * params.w1).rowwise() + params.b1;
  c.h1 = detail::leaky(c.z1, a);
  c.z2 = (c.h1 * params.w2).rowwise() + params.b2;
  c.h2 = detail::leaky(c.z2, a);
  c.logits = (c.h2 * params.w3).rowwise() + params.b3;
  c.probs.resize(c.logits.rows(), c.logits.cols());
  for (Eigen::Index n = 0; n < c.logits.rows(); ++n) {
    const double m = c.logits.row(n).maxCoeff();
    const RowVector e = (c.logits.row(n).array() - m).exp().matrix();
    c.probs.row(n) = e / e.sum();
  }
  return c;
}

/// Row-wise argmax of the class probabilities.
inline std::vector<int> predict(const ModelParams& params, const Batch& batch) {
  const auto c = forward(params, batch);
  std::vector<int> out(static_cast<std::size_t>(c.probs.rows()));
  for (Eigen::Index n = 0; n < c.probs.rows(); ++n) {
    Eigen::Index arg;
    c.probs.row(n).maxCoeff(&arg);
    out[static_cast<std::size_t>(n)] = static_cast<int>(arg);
  }
  return out;
}

/// Mean softmax cross-entropy, via log-sum-exp for stability.
inline double loss_from_cache(const ForwardCache& c, const Batch& batch) {
  double total = 0.0;
  for (Eigen::Index n = 0; n < c.logits.rows(); ++n) {
    const double m = c.logits.row(n).maxCoeff();
    const double lse = m + std::log((c.logits.row(n).array() - m).exp().sum());
    total += lse - c.logits(n, batch.targets[static_cast<std::size_t>(n)]);
  }
  return total / static_cast<double>(c.logits.rows());
}

inline double loss(const ModelParams& params, const Batch& batch) {
  return loss_from_cache(forward(params, batch), batch);
}

struct LossAndGrad {
  double loss = 0.0;
  Gradients grads;
};

namespace detail {

struct BackwardSignals {
  Matrix dz3, dz2, dz1;
};

inline Matrix one_hot(const Batch& batch, Eigen::Index classes) {
  Matrix y = Matrix::Zero(static_cast<Eigen::Index>(batch.size()), classes);
  for (std::size_t n = 0; n < batch.size(); ++n) y(static_cast<Eigen::Index>(n), batch.targets[n]) = 1.0;
  return y;
}

}  // namespace detail

inline LossAndGrad loss_and_grad(const ModelParams& params, const Batch& batch) {
  const ForwardCache c = forward(params, batch);
  const double a = params.arch.negative_slope;
  const double n = static_cast<double>(batch.size());

  LossAndGrad out{loss_from_cache(c, batch), Gradients{}};
  Gradients& g = out.grads;
  g.arch = params.arch;

  const Matrix dz3 = (c.probs - detail::one_hot(batch, c.probs.cols())) / n;
  g.w3 = c.h2.transpose() * dz3;
  g.b3 = dz3.colwise().sum();
  const Matrix dz2 = ((dz3 * params.w3.transpose()).array() * detail::leaky_grad(c.z2, a).array()).matrix();
  g.w2 = c.h1.transpose() * dz2;
  g.b2 = dz2.colwise().sum();
  const Matrix dz1 = ((dz2 * params.w2.transpose()).array() * detail::leaky_grad(c.z1, a).array()).matrix();
  g.w1 = c.x.transpose() * dz1;
  g.b1 = dz1.colwise().sum();
  return out;
}

/// Exact Hessian-vector product H(params) * direction of the mean
/// cross-entropy, by forward-mode differentiation of the backward pass
/// (R-operator). Leaky ReLU is piecewise linear so its second derivative
/// contributes nothing away from the kink.
inline Gradients hessian_vector_product(const ModelParams& params, const Batch& batch,
                                        const ModelParams& direction) {
  const ForwardCache c = forward(params, batch);
  const double a = params.arch.negative_slope;
  const double n = static_cast<double>(batch.size());
  const ModelParams& v = direction;

  const Matrix d1 = detail::leaky_grad(c.z1, a);
  const Matrix d2 = detail::leaky_grad(c.z2, a);

  // R-pass through the forward computation.
  const Matrix r_z1 = (c.x * v.w1).rowwise() + v.b1;
  const Matrix r_h1 = (d1.array() * r_z1.array()).matrix();
  const Matrix r_z2 = ((r_h1 * params.w2 + c.h1 * v.w2).rowwise() + v.b2);
  const Matrix r_h2 = (d2.array() * r_z2.array()).matrix();
  const Matrix r_z3 = ((r_h2 * params.w3 + c.h2 * v.w3).rowwise() + v.b3);
  const Eigen::VectorXd p_dot_rz3 = (c.probs.array() * r_z3.array()).rowwise().sum();
  const Matrix r_p = (c.probs.array() * (r_z3.colwise() - p_dot_rz3).array()).matrix();

  // Plain backward signals.
  const Matrix dz3 = (c.probs - detail::one_hot(batch, c.probs.cols())) / n;
  const Matrix dz2 = ((dz3 * params.w3.transpose()).array() * d2.array()).matrix();

  // R-pass through the backward computation.
  Gradients h;
  h.arch = params.arch;
  const Matrix r_dz3 = r_p / n;
  h.w3 = r_h2.transpose() * dz3 + c.h2.transpose() * r_dz3;
  h.b3 = r_dz3.colwise().sum();
  const Matrix r_dh2 = r_dz3 * params.w3.transpose() + dz3 * v.w3.transpose();
  const Matrix r_dz2 = (r_dh2.array() * d2.array()).matrix();
  h.w2 = r_h1.transpose() * dz2 + c.h1.transpose() * r_dz2;
  h.b2 = r_dz2.colwise().sum();
  const Matrix r_dh1 = r_dz2 * params.w2.transpose() + dz2 * v.w2.transpose();
  const Matrix r_dz1 = (r_dh1.array() * d1.array()).matrix();
  h.w1 = c.x.transpose() * r_dz1;
  h.b1 = r_dz1.colwise().sum();
  return h;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "XLMLPCK1", then u64 input, hidden1, hidden2, output,
// seed, f64 negative_slope, then W1 b1 W2 b2 W3 b3 as little-endian float64.
// Matrices are stored row-major.

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}
inline std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw ValidationError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}
inline void put_f64(std::ostream& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }
inline double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

}  // namespace detail

inline constexpr char kCheckpointMagic[8] = {'X', 'L', 'M', 'L', 'P', 'C', 'K', '1'};

inline void write_checkpoint(const ModelParams& p, std::uint64_t seed, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kCheckpointMagic, 8);
  detail::put_u64(out, p.arch.input);
  detail::put_u64(out, p.arch.hidden1);
  detail::put_u64(out, p.arch.hidden2);
  detail::put_u64(out, p.arch.output);
  detail::put_u64(out, seed);
  detail::put_f64(out, p.arch.negative_slope);
  auto put_matrix = [&](const Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) detail::put_f64(out, m(r, c));
  };
  auto put_row = [&](const RowVector& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) detail::put_f64(out, v(i));
  };
  put_matrix(p.w1); put_row(p.b1);
  put_matrix(p.w2); put_row(p.b2);
  put_matrix(p.w3); put_row(p.b3);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

struct Checkpoint {
  ModelParams params;
  std::uint64_t seed = 0;
};

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kCheckpointMagic)) {
    throw ValidationError("not a checkpoint file: " + path.string());
  }
  Architecture arch;
  arch.input = detail::get_u64(in);
  arch.hidden1 = detail::get_u64(in);
  arch.hidden2 = detail::get_u64(in);
  arch.output = detail::get_u64(in);
  Checkpoint ck;
  ck.seed = detail::get_u64(in);
  arch.negative_slope = detail::get_f64(in);
  constexpr std::uint64_t kMaxWidth = 1u << 20;
  if (arch.input == 0 || arch.input > kMaxWidth || arch.hidden1 == 0 || arch.hidden1 > kMaxWidth ||
      arch.hidden2 == 0 || arch.hidden2 > kMaxWidth || arch.output == 0 || arch.output > kMaxWidth) {
    throw ValidationError("implausible layer sizes in checkpoint " + path.string());
  }
  ck.params = ModelParams::zeros(arch);
  auto get_matrix = [&](Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = detail::get_f64(in);
  };
  auto get_row = [&](RowVector& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = detail::get_f64(in);
  };
  get_matrix(ck.params.w1); get_row(ck.params.b1);
  get_matrix(ck.params.w2); get_row(ck.params.b2);
  get_matrix(ck.params.w3); get_row(ck.params.b3);
  if (in.peek() != std::char_traits<char>::eof()) throw ValidationError("trailing bytes in checkpoint");
  if (!ck.params.all_finite()) throw ValidationError("non-finite weights in checkpoint");
  return ck;
}

}  // namespace xlabuse
