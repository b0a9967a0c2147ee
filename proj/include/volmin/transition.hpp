#pragma once

// Trainable transition matrix. Off-diagonal weights pass through a sigmoid,
// the diagonal is pinned at one, and each column is normalized to sum to
// one, so every finite weight grid realizes a column-stochastic matrix whose
// diagonal strictly dominates its column.

#include <cmath>
#include <cstddef>

#include "volmin/linalg.hpp"
#include "volmin/noise.hpp"

namespace volmin {

// Largest off-diagonal activation. sigmoid(w) rounds to exactly 1 for
// w > ~37, which would tie with the pinned diagonal.
inline constexpr double kMaxOffDiagonal = 1.0 - 1e-12;

inline double sigmoid(double w) {
  if (w >= 0) return 1.0 / (1.0 + std::exp(-w));
  const double e = std::exp(w);
  return e / (1.0 + e);
}

// ln(1/(C-2)) for C >= 3, which puts the realized diagonal at exactly 0.5.
// C = 2 has no such value; -2 is used instead.
inline double default_transition_init(std::size_t classes) {
  if (classes < 2) throw ValueError("transition needs at least 2 classes");
  if (classes == 2) return -2.0;
  return std::log(1.0 / static_cast<double>(classes - 2));
}

class TrainableTransition {
 public:
  TrainableTransition() = default;

  // Every off-diagonal weight set to `init`.
  TrainableTransition(std::size_t classes, double init) : weights_(classes, classes, init) {
    if (classes < 2) throw ValueError("transition needs at least 2 classes");
    for (std::size_t i = 0; i < classes; ++i) weights_(i, i) = 0.0;
  }

  explicit TrainableTransition(std::size_t classes)
      : TrainableTransition(classes, default_transition_init(classes)) {}

  explicit TrainableTransition(Matrix weights) : weights_(std::move(weights)) {
    if (!weights_.square() || weights_.rows() < 2)
      throw ShapeError("transition weights must be square with at least 2 classes");
    for (std::size_t i = 0; i < weights_.rows(); ++i) weights_(i, i) = 0.0;
  }

  std::size_t classes() const noexcept { return weights_.rows(); }
  const Matrix& weights() const noexcept { return weights_; }
  Matrix& weights() noexcept { return weights_; }

  // A: unit diagonal, sigmoid(w) elsewhere.
  Matrix activations() const {
    const std::size_t c = classes();
    Matrix a(c, c);
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < c; ++j)
        a(i, j) = i == j ? 1.0 : std::min(sigmoid(weights_(i, j)), kMaxOffDiagonal);
    return a;
  }

  // Column-normalized activations, without re-validating.
  Matrix realize_matrix() const {
    Matrix t = activations();
    const std::size_t c = classes();
    for (std::size_t j = 0; j < c; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < c; ++k) s += t(k, j);
      for (std::size_t k = 0; k < c; ++k) t(k, j) /= s;
    }
    return t;
  }

  TransitionMatrix realize() const { return TransitionMatrix(realize_matrix(), 1e-12); }

 private:
  Matrix weights_;
};

inline TransitionMatrix realize(const TrainableTransition& tt) { return tt.realize(); }

// log|det T| with its sign. Nothing in the parameterization keeps det > 0
// once C > 2, so the sign is reported rather than assumed.
inline SignedLogDet volume(const Matrix& t) { return signed_logdet(t); }
inline SignedLogDet volume(const TransitionMatrix& t) { return signed_logdet(t.matrix()); }

// Pulls dL/dT back to dL/dW through the normalization and the sigmoid.
// The diagonal of the result is zero; those weights are not parameters.
inline Matrix backward(const TrainableTransition& tt, const Matrix& grad_t) {
  const std::size_t c = tt.classes();
  if (grad_t.rows() != c || grad_t.cols() != c)
    throw ShapeError("transition backward: gradient must be " + std::to_string(c) + "x" +
                     std::to_string(c));
  const Matrix a = tt.activations();
  Matrix grad_w(c, c);
  for (std::size_t j = 0; j < c; ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += a(k, j);
    // sum_k g_kj T_kj, shared by every row of column j
    double gt = 0.0;
    for (std::size_t k = 0; k < c; ++k) gt += grad_t(k, j) * a(k, j) / s;
    for (std::size_t i = 0; i < c; ++i) {
      if (i == j) continue;
      const double aij = a(i, j);
      const double dsig = aij >= kMaxOffDiagonal ? 0.0 : aij * (1.0 - aij);
      grad_w(i, j) = (grad_t(i, j) - gt) / s * dsig;
    }
  }
  return grad_w;
}

}  // namespace volmin
