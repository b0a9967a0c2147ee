#pragma once

// Dense small-matrix kernels: a row-major Matrix, products, LU with signed
// log-determinant, inverse-transpose, and nonnegative least squares.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "volmin/error.hpp"

namespace volmin {

using Vector = std::vector<double>;

namespace detail {

inline bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

inline std::string shape_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace detail

inline void require_finite(std::span<const double> xs, const char* what) {
  if (!detail::all_finite(xs)) throw ValueError(std::string(what) + ": non-finite entry");
}

class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    if (!std::isfinite(fill)) throw ValueError("Matrix: non-finite fill value");
  }

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw ShapeError("Matrix: " + std::to_string(data_.size()) + " values for shape " +
                       detail::shape_str(rows_, cols_));
    require_finite(data_, "Matrix");
  }

  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
    require_finite(data_, "Matrix");
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix diagonal(std::span<const double> d) {
    Matrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    require_finite(d, "Matrix::diagonal");
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool square() const noexcept { return rows_ == cols_; }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  Vector column(std::size_t c) const {
    Vector v(rows_);
    for (std::size_t r = 0; r < rows_; ++r) v[r] = (*this)(r, c);
    return v;
  }

  void set_column(std::size_t c, std::span<const double> v) {
    if (v.size() != rows_) throw ShapeError("Matrix::set_column: length mismatch");
    for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = v[r];
  }

  Matrix transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  bool finite() const { return detail::all_finite(data_); }

  Matrix& operator+=(const Matrix& o) {
    check_same_shape(o, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    check_same_shape(o, "operator-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Matrix& operator*=(double s) {
    for (double& x : data_) x *= s;
    return *this;
  }

  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend Matrix operator*(Matrix a, double s) { return a *= s; }
  friend Matrix operator*(double s, Matrix a) { return a *= s; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  void check_same_shape(const Matrix& o, const char* op) const {
    if (o.rows_ != rows_ || o.cols_ != cols_)
      throw ShapeError(std::string("Matrix::") + op + ": " + detail::shape_str(rows_, cols_) +
                       " vs " + detail::shape_str(o.rows_, o.cols_));
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("max_abs_diff: " + detail::shape_str(a.rows(), a.cols()) + " vs " +
                     detail::shape_str(b.rows(), b.cols()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: cannot multiply " + detail::shape_str(a.rows(), a.cols()) + " by " +
                     detail::shape_str(b.rows(), b.cols()));
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  if (!out.finite()) throw NumericalError("matmul: product overflowed");
  return out;
}

inline Vector matvec(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size())
    throw ShapeError("matvec: " + detail::shape_str(a.rows(), a.cols()) + " times length " +
                     std::to_string(x.size()));
  Vector y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) s += r[j] * x[j];
    y[i] = s;
  }
  return y;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// ---------------------------------------------------------------------------
// LU with partial pivoting

inline constexpr double kPivotFloor = 1e-300;

struct LuDecomposition {
  Matrix lu;                      // unit-lower L below the diagonal, U on and above
  std::vector<std::size_t> perm;  // row i of PA is row perm[i] of A
  int parity = 1;                 // sign of the permutation
  bool singular = false;          // some pivot magnitude fell below kPivotFloor
};

inline LuDecomposition lu_decompose(const Matrix& a) {
  if (!a.square())
    throw ShapeError("lu_decompose: matrix is " + detail::shape_str(a.rows(), a.cols()) +
                     ", not square");
  const std::size_t n = a.rows();
  LuDecomposition d{a, std::vector<std::size_t>(n), 1, false};
  for (std::size_t i = 0; i < n; ++i) d.perm[i] = i;
  Matrix& m = d.lu;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    double best = std::abs(m(k, k));
    for (std::size_t i = k + 1; i < n; ++i) {
      if (std::abs(m(i, k)) > best) {
        best = std::abs(m(i, k));
        p = i;
      }
    }
    if (best < kPivotFloor) {
      d.singular = true;
      continue;
    }
    if (p != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(m(k, j), m(p, j));
      std::swap(d.perm[k], d.perm[p]);
      d.parity = -d.parity;
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = m(i, k) / m(k, k);
      m(i, k) = f;
      if (f == 0.0) continue;
      for (std::size_t j = k + 1; j < n; ++j) m(i, j) -= f * m(k, j);
    }
  }
  return d;
}

struct SignedLogDet {
  int sign = 0;  // -1, 0 or +1
  double log_abs = -std::numeric_limits<double>::infinity();
};

inline SignedLogDet signed_logdet(const LuDecomposition& d) {
  if (d.singular) return {};
  SignedLogDet r{d.parity, 0.0};
  for (std::size_t i = 0; i < d.lu.rows(); ++i) {
    const double u = d.lu(i, i);
    if (u < 0) r.sign = -r.sign;
    r.log_abs += std::log(std::abs(u));
  }
  return r;
}

inline SignedLogDet signed_logdet(const Matrix& a) { return signed_logdet(lu_decompose(a)); }

// Solves A x = b given the factorization of A.
inline Vector lu_solve(const LuDecomposition& d, std::span<const double> b) {
  const std::size_t n = d.lu.rows();
  if (b.size() != n) throw ShapeError("lu_solve: rhs length mismatch");
  if (d.singular) throw NumericalError("lu_solve: matrix is singular");
  Vector x(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[d.perm[i]];
    for (std::size_t j = 0; j < i; ++j) s -= d.lu(i, j) * x[j];
    x[i] = s;
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = x[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= d.lu(i, j) * x[j];
    x[i] = s / d.lu(i, i);
  }
  return x;
}

inline Matrix inverse(const Matrix& a) {
  const auto d = lu_decompose(a);
  if (d.singular) throw NumericalError("inverse: matrix is singular (pivot below 1e-300)");
  const std::size_t n = a.rows();
  Matrix inv(n, n);
  Vector e(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    e[j] = 1.0;
    inv.set_column(j, lu_solve(d, e));
    e[j] = 0.0;
  }
  if (!inv.finite()) throw NumericalError("inverse: result overflowed");
  return inv;
}

// a^{-T}, the gradient of log|det(a)| with respect to a.
inline Matrix inverse_transpose(const Matrix& a) {
  const auto d = lu_decompose(a);
  if (d.singular)
    throw NumericalError("inverse_transpose: matrix is singular (pivot below 1e-300)");
  return inverse(a).transpose();
}

// Lower-triangular L with L L^T = a. Throws unless a is symmetric positive definite.
inline Matrix cholesky(const Matrix& a) {
  if (!a.square()) throw ShapeError("cholesky: matrix is not square");
  const std::size_t n = a.rows();
  Matrix l(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      if (std::abs(a(i, j) - a(j, i)) > 1e-12 * std::max(1.0, std::abs(a(i, j))))
        throw ValueError("cholesky: matrix is not symmetric");
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      if (i == j) {
        if (!(s > 0.0)) throw ValueError("cholesky: matrix is not positive definite");
        l(i, i) = std::sqrt(s);
      } else {
        l(i, j) = s / l(j, j);
      }
    }
  }
  return l;
}

// ---------------------------------------------------------------------------
// Nonnegative least squares (Lawson-Hanson active set)

struct NnlsResult {
  Vector alpha;
  double residual = 0.0;  // ||a alpha - b||_2
  bool converged = false;
  std::size_t iterations = 0;
};

namespace detail {

// Least squares on the columns of `a` listed in `cols`, via Householder QR.
// Returns false if the selected columns are numerically rank deficient.
inline bool subset_least_squares(const Matrix& a, const std::vector<std::size_t>& cols,
                                 std::span<const double> b, Vector& z) {
  const std::size_t m = a.rows();
  const std::size_t k = cols.size();
  if (k > m) return false;
  Matrix r(m, k);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < m; ++i) r(i, j) = a(i, cols[j]);
  Vector qtb(b.begin(), b.end());
  double scale = 0.0;
  for (double x : r.data()) scale = std::max(scale, std::abs(x));
  for (std::size_t j = 0; j < k; ++j) {
    double norm = 0.0;
    for (std::size_t i = j; i < m; ++i) norm += r(i, j) * r(i, j);
    norm = std::sqrt(norm);
    if (norm <= 1e-13 * std::max(scale, 1e-300)) return false;
    const double alpha = r(j, j) > 0 ? -norm : norm;
    Vector v(m - j);
    for (std::size_t i = j; i < m; ++i) v[i - j] = r(i, j);
    v[0] -= alpha;
    const double vv = dot(v, v);
    if (vv > 0) {
      for (std::size_t c = j; c < k; ++c) {
        double s = 0.0;
        for (std::size_t i = j; i < m; ++i) s += v[i - j] * r(i, c);
        s = 2.0 * s / vv;
        for (std::size_t i = j; i < m; ++i) r(i, c) -= s * v[i - j];
      }
      double s = 0.0;
      for (std::size_t i = j; i < m; ++i) s += v[i - j] * qtb[i];
      s = 2.0 * s / vv;
      for (std::size_t i = j; i < m; ++i) qtb[i] -= s * v[i - j];
    }
  }
  for (std::size_t j = 0; j < k; ++j)
    if (std::abs(r(j, j)) <= 1e-13 * std::max(scale, 1e-300)) return false;
  z.assign(k, 0.0);
  for (std::size_t j = k; j-- > 0;) {
    double s = qtb[j];
    for (std::size_t c = j + 1; c < k; ++c) s -= r(j, c) * z[c];
    z[j] = s / r(j, j);
  }
  return true;
}

}  // namespace detail

// Minimizes ||a alpha - b||_2 over alpha >= 0. `tol` bounds the largest
// positive entry of the column-normalized dual a_j^T (b - a alpha) / ||a_j||
// at termination. The outer loop is capped at 10 * a.cols() iterations;
// hitting the cap returns the best iterate with converged = false.
inline NnlsResult nnls(const Matrix& a, std::span<const double> b, double tol = 1e-10) {
  if (a.rows() != b.size())
    throw ShapeError("nnls: matrix has " + std::to_string(a.rows()) + " rows but rhs has length " +
                     std::to_string(b.size()));
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  Vector col_norm(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) col_norm[j] += a(i, j) * a(i, j);
  for (double& c : col_norm) c = std::sqrt(c);

  NnlsResult res;
  res.alpha.assign(n, 0.0);
  Vector& x = res.alpha;
  std::vector<char> passive(n, 0);
  std::vector<char> blocked(n, 0);  // columns whose addition failed; retried after progress
  Vector resid(b.begin(), b.end());
  Vector w(n);

  auto update_residual = [&] {
    for (std::size_t i = 0; i < m; ++i) {
      double s = b[i];
      for (std::size_t j = 0; j < n; ++j)
        if (x[j] != 0.0) s -= a(i, j) * x[j];
      resid[i] = s;
    }
  };
  auto dual = [&] {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < m; ++i) s += a(i, j) * resid[i];
      w[j] = col_norm[j] > 0 ? s / col_norm[j] : 0.0;
    }
  };

  const std::size_t cap = 10 * std::max<std::size_t>(n, 1);
  std::vector<std::size_t> pset;
  Vector z;
  for (res.iterations = 0; res.iterations < cap; ++res.iterations) {
    dual();
    std::size_t t = n;
    double best = tol;
    for (std::size_t j = 0; j < n; ++j) {
      if (!passive[j] && !blocked[j] && w[j] > best) {
        best = w[j];
        t = j;
      }
    }
    if (t == n) {
      res.converged = true;
      break;
    }
    passive[t] = 1;
    bool progressed = false;
    for (std::size_t inner = 0; inner <= n; ++inner) {
      pset.clear();
      for (std::size_t j = 0; j < n; ++j)
        if (passive[j]) pset.push_back(j);
      if (!detail::subset_least_squares(a, pset, b, z)) {
        passive[t] = 0;
        blocked[t] = 1;
        break;
      }
      bool feasible = true;
      for (double v : z) feasible = feasible && v > 0.0;
      if (feasible) {
        for (std::size_t k = 0; k < pset.size(); ++k) x[pset[k]] = z[k];
        progressed = true;
        break;
      }
      double step = 1.0;
      for (std::size_t k = 0; k < pset.size(); ++k) {
        const std::size_t j = pset[k];
        if (z[k] <= 0.0) {
          const double denom = x[j] - z[k];
          if (denom > 0) step = std::min(step, x[j] / denom);
        }
      }
      for (std::size_t k = 0; k < pset.size(); ++k) {
        const std::size_t j = pset[k];
        x[j] += step * (z[k] - x[j]);
        if (x[j] <= 1e-15 * std::max(1.0, std::abs(z[k]))) {
          x[j] = 0.0;
          passive[j] = 0;
        }
      }
      if (!passive[t]) {
        // the entering column was immediately dropped; do not pick it again
        blocked[t] = 1;
        break;
      }
    }
    update_residual();
    if (progressed) std::fill(blocked.begin(), blocked.end(), 0);
  }
  update_residual();
  res.residual = norm2(resid);
  return res;
}

// ---------------------------------------------------------------------------
// Text format: one row per line, comma-separated decimals, '#' comments.

inline void write_matrix_text(std::ostream& os, const Matrix& m) {
  std::ostringstream line;
  line << std::setprecision(17);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    line.str("");
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c) line << ',';
      line << m(r, c);
    }
    os << line.str() << '\n';
  }
}

inline std::string matrix_to_text(const Matrix& m) {
  std::ostringstream os;
  write_matrix_text(os, m);
  return os.str();
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(const std::string& tok, std::size_t line_no) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != tok.size() || tok.empty())
    throw ValueError("line " + std::to_string(line_no) + ": cannot parse number '" + tok + "'");
  if (!std::isfinite(v))
    throw ValueError("line " + std::to_string(line_no) + ": non-finite value '" + tok + "'");
  return v;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(trim(cur));
  return out;
}

}  // namespace detail

// Reads one matrix. Blank lines and lines starting with '#' are skipped.
inline Matrix read_matrix_text(std::istream& is) {
  std::vector<double> values;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    const std::string line = detail::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto toks = detail::split(line, ',');
    if (rows == 0) {
      cols = toks.size();
    } else if (toks.size() != cols) {
      throw ValueError("line " + std::to_string(line_no) + ": expected " + std::to_string(cols) +
                       " entries, found " + std::to_string(toks.size()));
    }
    for (const auto& t : toks) values.push_back(detail::parse_double(t, line_no));
    ++rows;
  }
  return Matrix(rows, cols, std::move(values));
}

inline Matrix matrix_from_text(const std::string& text) {
  std::istringstream is(text);
  return read_matrix_text(is);
}

}  // namespace volmin
