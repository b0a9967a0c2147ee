#pragma once

// Anchor-point baselines. Given noisy-posterior estimates g(x) on a pool of
// instances, column j of the estimate is g at the instance that maximizes
// g_j (or sits at a chosen percentile of g_j). Estimates are returned as
// plain matrices: nothing forces them to be diagonally dominant.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "volmin/data.hpp"
#include "volmin/linalg.hpp"
#include "volmin/model.hpp"
#include "volmin/trainer.hpp"

namespace volmin {

// A classifier trained by plain cross-entropy on noisy labels, so its
// outputs model P(noisy label | x).
struct NoisyPosteriorModel {
  Classifier classifier;
  TrainHistory history;
};

using PosteriorFn = std::function<Vector(std::span<const double>)>;

// Training with T frozen at the identity: no correction, no volume term.
inline NoisyPosteriorModel fit_noisy_posterior(const Dataset& train_set, const Dataset& val_set,
                                               TrainConfig config) {
  config.lambda = 0.0;
  TransitionSetup setup;
  setup.frozen = Matrix::identity(train_set.classes);
  auto r = train(train_set, val_set, config, setup);
  return {std::move(r.classifier), std::move(r.history)};
}

// Rows of the result are g(x_i).
inline Matrix evaluate_posterior(const PosteriorFn& g, const Matrix& xs) {
  if (xs.rows() == 0) throw ValueError("posterior evaluation needs at least one instance");
  Vector first = g(xs.row(0));
  Matrix out(xs.rows(), first.size());
  std::copy(first.begin(), first.end(), out.row(0).begin());
  for (std::size_t i = 1; i < xs.rows(); ++i) {
    const Vector v = g(xs.row(i));
    if (v.size() != out.cols()) throw ShapeError("posterior function changed output length");
    std::copy(v.begin(), v.end(), out.row(i).begin());
  }
  return out;
}

inline Matrix evaluate_posterior(const NoisyPosteriorModel& m, const Matrix& xs) {
  if (xs.rows() == 0) throw ValueError("posterior evaluation needs at least one instance");
  return predict(m.classifier, xs);
}

// Column j = g(x^j) with x^j = argmax_i g_j(x_i); ties go to the lowest index.
inline Matrix anchor_estimate_max(const Matrix& g) {
  if (g.rows() == 0) throw ValueError("anchor_estimate_max: no instances");
  const std::size_t c = g.cols();
  Matrix t(c, c);
  for (std::size_t j = 0; j < c; ++j) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < g.rows(); ++i)
      if (g(i, j) > g(best, j)) best = i;
    t.set_column(j, g.row(best));
  }
  return t;
}

// Column j = g at rank floor(alpha/100 * n) of the instances sorted by g_j
// descending (ties keep index order).
inline Matrix anchor_estimate_percentile(const Matrix& g, double alpha) {
  if (!(alpha > 0.0 && alpha < 100.0))
    throw ValueError("anchor_estimate_percentile: alpha must lie in (0, 100)");
  const std::size_t n = g.rows();
  if (n == 0) throw ValueError("anchor_estimate_percentile: no instances");
  const std::size_t c = g.cols();
  const auto rank = std::min(n - 1, static_cast<std::size_t>(std::floor(alpha / 100.0 * static_cast<double>(n))));
  Matrix t(c, c);
  std::vector<std::size_t> order(n);
  for (std::size_t j = 0; j < c; ++j) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return g(a, j) > g(b, j); });
    t.set_column(j, g.row(order[rank]));
  }
  return t;
}

inline Matrix anchor_estimate_max(const NoisyPosteriorModel& m, const Matrix& xs) {
  return anchor_estimate_max(evaluate_posterior(m, xs));
}
inline Matrix anchor_estimate_max(const PosteriorFn& g, const Matrix& xs) {
  return anchor_estimate_max(evaluate_posterior(g, xs));
}
inline Matrix anchor_estimate_percentile(const NoisyPosteriorModel& m, const Matrix& xs, double alpha) {
  return anchor_estimate_percentile(evaluate_posterior(m, xs), alpha);
}
inline Matrix anchor_estimate_percentile(const PosteriorFn& g, const Matrix& xs, double alpha) {
  return anchor_estimate_percentile(evaluate_posterior(g, xs), alpha);
}

}  // namespace volmin
