#pragma once

// Slow, independent reference computations shared by the test suites.

#include <cmath>
#include <functional>
#include <vector>

#include "volmin/linalg.hpp"
#include "volmin/rng.hpp"

namespace oracle {

using volmin::Matrix;

inline Matrix random_matrix(volmin::Engine& eng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (auto& x : m.data()) x = volmin::uniform(eng, lo, hi);
  return m;
}

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

// Laplace expansion along the first row.
inline double cofactor_det(const Matrix& a) {
  const std::size_t n = a.rows();
  if (n == 1) return a(0, 0);
  double det = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    Matrix minor(n - 1, n - 1);
    for (std::size_t r = 1; r < n; ++r)
      for (std::size_t c = 0, cc = 0; c < n; ++c)
        if (c != j) minor(r - 1, cc++) = a(r, c);
    det += (j % 2 == 0 ? 1.0 : -1.0) * a(0, j) * cofactor_det(minor);
  }
  return det;
}

inline double rel_err(double analytic, double numeric, double floor = 1e-8) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Central difference of f with respect to x[k].
inline double central_diff(std::vector<double>& x, std::size_t k, double h, const std::function<double()>& f) {
  const double keep = x[k];
  x[k] = keep + h;
  const double up = f();
  x[k] = keep - h;
  const double down = f();
  x[k] = keep;
  return (up - down) / (2.0 * h);
}

}  // namespace oracle
