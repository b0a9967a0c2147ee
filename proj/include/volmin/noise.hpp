#pragma once

// Ground-truth transition matrices for class-conditional label noise,
// label corruption through them, and the estimation-error score.
//
// Entry (i, j) of a transition matrix is P(noisy = i | clean = j).

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "volmin/error.hpp"
#include "volmin/linalg.hpp"
#include "volmin/rng.hpp"

namespace volmin {

using Labels = std::vector<std::size_t>;

inline constexpr double kStochasticTol = 1e-9;

// Column-stochastic, diagonally dominant in the column sense:
// T(i,i) > T(j,i) for every j != i.
class TransitionMatrix {
 public:
  explicit TransitionMatrix(Matrix t, double tol = kStochasticTol) : t_(std::move(t)) {
    validate(t_, tol);
  }

  static void validate(const Matrix& t, double tol = kStochasticTol) {
    if (!t.square() || t.rows() < 2)
      throw ValueError("transition matrix must be square with at least 2 classes, got " +
                       std::to_string(t.rows()) + "x" + std::to_string(t.cols()));
    const std::size_t c = t.rows();
    for (std::size_t j = 0; j < c; ++j) {
      double sum = 0.0;
      for (std::size_t i = 0; i < c; ++i) {
        const double v = t(i, j);
        if (v < -tol || v > 1.0 + tol)
          throw ValueError("transition entry (" + std::to_string(i) + "," + std::to_string(j) +
                           ") outside [0,1]");
        sum += v;
      }
      if (std::abs(sum - 1.0) > tol)
        throw ValueError("transition column " + std::to_string(j) + " sums to " +
                         std::to_string(sum));
      for (std::size_t i = 0; i < c; ++i)
        if (i != j && !(t(j, j) > t(i, j)))
          throw ValueError("transition column " + std::to_string(j) +
                           " is not diagonally dominant");
    }
  }

  std::size_t classes() const noexcept { return t_.rows(); }
  const Matrix& matrix() const noexcept { return t_; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return t_(i, j); }

 private:
  Matrix t_;
};

enum class NoiseKind { symmetric, pair, custom };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::symmetric;
  double rate = 0.0;
  std::size_t classes = 2;
  std::optional<Matrix> custom;  // required when kind == custom
};

inline std::string to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::symmetric: return "symmetric";
    case NoiseKind::pair: return "pair";
    case NoiseKind::custom: return "custom";
  }
  return "?";
}

inline NoiseKind parse_noise_kind(const std::string& s) {
  if (s == "symmetric" || s == "sym") return NoiseKind::symmetric;
  if (s == "pair") return NoiseKind::pair;
  if (s == "custom") return NoiseKind::custom;
  throw ValueError("unknown noise kind '" + s + "'");
}

inline TransitionMatrix build_transition(const NoiseSpec& spec) {
  if (spec.kind == NoiseKind::custom) {
    if (!spec.custom) throw ValueError("custom noise requires a matrix");
    return TransitionMatrix(*spec.custom, kStochasticTol);
  }
  const std::size_t c = spec.classes;
  const double rho = spec.rate;
  if (c < 2) throw ValueError("noise needs at least 2 classes");
  if (!(rho >= 0.0 && rho < 1.0)) throw ValueError("noise rate must lie in [0,1)");
  Matrix t(c, c);
  if (spec.kind == NoiseKind::symmetric) {
    const double bound = static_cast<double>(c - 1) / static_cast<double>(c);
    if (!(rho < bound))
      throw ValueError("symmetric rate " + std::to_string(rho) + " breaks diagonal dominance for " +
                       std::to_string(c) + " classes (needs < (C-1)/C)");
    const double off = rho / static_cast<double>(c - 1);
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < c; ++j) t(i, j) = i == j ? 1.0 - rho : off;
  } else {
    if (!(rho < 0.5))
      throw ValueError("pair rate " + std::to_string(rho) + " breaks diagonal dominance (needs < 0.5)");
    for (std::size_t j = 0; j < c; ++j) {
      t(j, j) = 1.0 - rho;
      t((j + 1) % c, j) += rho;
    }
  }
  return TransitionMatrix(std::move(t));
}

// Each noisy label is an independent inverse-CDF draw from column t[:, y].
// Any column-stochastic matrix is accepted here, dominant or not.
inline Labels corrupt_labels(const Labels& labels, const Matrix& t, std::uint64_t seed) {
  if (!t.square()) throw ShapeError("corrupt_labels: transition must be square");
  const std::size_t c = t.rows();
  std::vector<Vector> cols(c);
  for (std::size_t j = 0; j < c; ++j) {
    cols[j] = t.column(j);
    double sum = 0.0;
    for (double v : cols[j]) {
      if (v < -kStochasticTol) throw ValueError("corrupt_labels: negative transition entry");
      sum += v;
    }
    if (std::abs(sum - 1.0) > kStochasticTol)
      throw ValueError("corrupt_labels: column " + std::to_string(j) + " sums to " + std::to_string(sum));
  }
  Engine eng = make_engine(seed, 0x6e6f697365ULL);
  Labels out(labels.size());
  for (std::size_t k = 0; k < labels.size(); ++k) {
    if (labels[k] >= c)
      throw ValueError("label " + std::to_string(labels[k]) + " at index " + std::to_string(k) +
                       " is not below " + std::to_string(c));
    out[k] = sample_categorical(eng, cols[labels[k]]);
  }
  return out;
}

inline Labels corrupt_labels(const Labels& labels, const TransitionMatrix& t, std::uint64_t seed) {
  return corrupt_labels(labels, t.matrix(), seed);
}

// sum |T - T_est| / sum |T|, entrywise over the flattened matrices.
inline double estimation_error(const Matrix& t_true, const Matrix& t_est) {
  if (t_true.rows() != t_est.rows() || t_true.cols() != t_est.cols())
    throw ShapeError("estimation_error: shape mismatch");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t k = 0; k < t_true.size(); ++k) {
    num += std::abs(t_true.data()[k] - t_est.data()[k]);
    den += std::abs(t_true.data()[k]);
  }
  if (den == 0.0) throw ValueError("estimation_error: reference matrix is zero");
  return num / den;
}

inline double estimation_error(const TransitionMatrix& t_true, const Matrix& t_est) {
  return estimation_error(t_true.matrix(), t_est);
}

}  // namespace volmin
