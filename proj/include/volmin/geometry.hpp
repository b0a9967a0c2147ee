#pragma once

// Numerical checks on a set of clean posteriors H (columns on the simplex):
//
//  * condition 1: the second-order cone R = {v : 1^T v >= sqrt(C-1) ||v||}
//    lies inside cone{H}. Tested on sampled extreme rays of R with NNLS.
//  * condition 2: no orthogonal non-permutation Q has cone{H} inside
//    cone{Q}, i.e. Q^T H >= 0. Only falsifiable; the search reports a
//    witness or "none found in N trials".
//  * anchor presence, simplex volume, and the closed-form C = 2
//    minimum-volume interval.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "volmin/error.hpp"
#include "volmin/linalg.hpp"
#include "volmin/noise.hpp"
#include "volmin/rng.hpp"

namespace volmin {

// C x m; each column a posterior vector.
class PosteriorMatrix {
 public:
  explicit PosteriorMatrix(Matrix h, double tol = 1e-9) : h_(std::move(h)) {
    if (h_.rows() < 2) throw ValueError("posterior matrix needs at least 2 classes");
    for (std::size_t j = 0; j < h_.cols(); ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < h_.rows(); ++i) {
        if (h_(i, j) < -tol) throw ValueError("posterior column " + std::to_string(j) + " has a negative entry");
        s += h_(i, j);
      }
      if (std::abs(s - 1.0) > tol)
        throw ValueError("posterior column " + std::to_string(j) + " sums to " + std::to_string(s));
    }
  }

  // From an n x C matrix of posterior rows.
  static PosteriorMatrix from_rows(const Matrix& rows) { return PosteriorMatrix(rows.transpose()); }

  std::size_t classes() const noexcept { return h_.rows(); }
  std::size_t size() const noexcept { return h_.cols(); }
  const Matrix& matrix() const noexcept { return h_; }

 private:
  Matrix h_;
};

// Unit vectors on the boundary 1^T v = sqrt(C-1) ||v||: the barycenter
// direction tilted by a random unit tangent u (u orthogonal to 1),
//   v = sqrt(C-1)/C * 1 + u / sqrt(C).
inline std::vector<Vector> sample_R_rays(std::size_t classes, std::size_t n, std::uint64_t seed) {
  if (classes < 2) throw ValueError("sample_R_rays: need at least 2 classes");
  if (n < 1) throw ValueError("sample_R_rays: need at least one ray");
  const double c = static_cast<double>(classes);
  const double axial = std::sqrt(c - 1.0) / c;
  const double radial = 1.0 / std::sqrt(c);
  Engine eng = make_engine(seed, 0x726179ULL);
  std::vector<Vector> rays;
  rays.reserve(n);
  Vector u(classes);
  while (rays.size() < n) {
    double mean = 0.0;
    for (double& x : u) {
      x = standard_normal(eng);
      mean += x;
    }
    mean /= c;
    for (double& x : u) x -= mean;
    const double nu = norm2(u);
    if (nu < 1e-12) continue;
    Vector v(classes);
    for (std::size_t k = 0; k < classes; ++k) v[k] = axial + radial * u[k] / nu;
    const double nv = norm2(v);
    for (double& x : v) x /= nv;
    rays.push_back(std::move(v));
  }
  return rays;
}

inline constexpr std::size_t kDefaultRays = 512;

struct Condition1Result {
  double pass_fraction = 0.0;
  bool verdict = false;
  double worst_residual = 0.0;  // largest relative NNLS residual seen
};

// A ray passes when its relative NNLS residual against cone{H} is below tol.
inline Condition1Result check_condition1(const PosteriorMatrix& h, const std::vector<Vector>& rays, double tol) {
  if (rays.empty()) throw ValueError("check_condition1: no rays");
  std::size_t pass = 0;
  Condition1Result r;
  for (const auto& v : rays) {
    if (v.size() != h.classes()) throw ShapeError("check_condition1: ray length differs from class count");
    const auto sol = nnls(h.matrix(), v, 1e-12);
    const double rel = sol.residual / std::max(norm2(v), 1e-300);
    r.worst_residual = std::max(r.worst_residual, rel);
    if (rel < tol) ++pass;
  }
  r.pass_fraction = static_cast<double>(pass) / static_cast<double>(rays.size());
  r.verdict = pass == rays.size();
  return r;
}

// Orthogonal Q from the QR factorization of a Gaussian matrix, with the
// signs fixed so that diag(R) > 0 (Haar distributed).
inline Matrix random_orthogonal(std::size_t n, Engine& eng) {
  Matrix a(n, n);
  for (double& x : a.data()) x = standard_normal(eng);
  // modified Gram-Schmidt on the columns; R's diagonal is the column norm
  Matrix q(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    Vector v = a.column(j);
    for (std::size_t k = 0; k < j; ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += q(i, k) * v[i];
      for (std::size_t i = 0; i < n; ++i) v[i] -= s * q(i, k);
    }
    const double nv = norm2(v);
    for (std::size_t i = 0; i < n; ++i) q(i, j) = v[i] / nv;
  }
  return q;
}

// Re-orthonormalizes (Gram-Schmidt) a perturbed orthogonal matrix.
inline Matrix orthonormalize(const Matrix& a) {
  const std::size_t n = a.rows();
  Matrix q(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    Vector v = a.column(j);
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < j; ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += q(i, k) * v[i];
        for (std::size_t i = 0; i < n; ++i) v[i] -= s * q(i, k);
      }
    }
    const double nv = norm2(v);
    for (std::size_t i = 0; i < n; ++i) q(i, j) = v[i] / nv;
  }
  return q;
}

// Max-abs distance from q to the nearest signed permutation matrix.
inline double distance_to_signed_permutation(const Matrix& q) {
  const std::size_t n = q.rows();
  // Each row of a near-permutation has one dominant entry; match greedily by
  // largest magnitude and require a bijection.
  std::vector<std::size_t> pick(n);
  std::vector<char> used(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j)
      if (std::abs(q(i, j)) > std::abs(q(i, best))) best = j;
    if (used[best]) return 1.0;
    used[best] = 1;
    pick[i] = best;
  }
  double d = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double target = j == pick[i] ? (q(i, j) >= 0 ? 1.0 : -1.0) : 0.0;
      d = std::max(d, std::abs(q(i, j) - target));
    }
  return d;
}

// min entry of Q^T H
inline double cone_margin(const Matrix& q, const Matrix& h) {
  const Matrix qth = matmul(q.transpose(), h);
  return *std::min_element(qth.data().begin(), qth.data().end());
}

struct Condition2Result {
  std::size_t trials = 0;
  bool falsified = false;
  std::optional<Matrix> witness;
  double best_margin = -std::numeric_limits<double>::infinity();  // over non-permutation candidates
};

inline constexpr double kPermutationTol = 1e-6;
inline constexpr std::size_t kRefineSteps = 24;

// Randomized search for an orthogonal non-permutation Q with Q^T H >= -tol.
// Each trial draws a Haar Q and hill-climbs the margin with shrinking random
// rotations. Finding nothing is evidence, not proof.
inline Condition2Result check_condition2(const PosteriorMatrix& h, std::size_t trials, std::uint64_t seed,
                                         double tol) {
  if (trials < 1) throw ValueError("check_condition2: need at least one trial");
  const std::size_t n = h.classes();
  Condition2Result r;
  for (std::size_t t = 0; t < trials; ++t) {
    Engine eng = make_engine(seed, 0x713200ULL + t);
    Matrix q = random_orthogonal(n, eng);
    double margin = cone_margin(q, h.matrix());
    double step = 0.2;
    for (std::size_t k = 0; k < kRefineSteps && margin < -tol; ++k) {
      Matrix cand = q;
      for (double& x : cand.data()) x += step * standard_normal(eng);
      cand = orthonormalize(cand);
      const double m = cone_margin(cand, h.matrix());
      if (m > margin) {
        q = std::move(cand);
        margin = m;
      } else {
        step *= 0.7;
      }
    }
    ++r.trials;
    if (distance_to_signed_permutation(q) <= kPermutationTol) continue;
    r.best_margin = std::max(r.best_margin, margin);
    if (margin >= -tol) {
      r.falsified = true;
      r.witness = q;
      break;
    }
  }
  return r;
}

struct AnchorPresence {
  Vector class_max;  // per class j, max over columns of H(j, :)
  bool verdict = false;
};

inline AnchorPresence anchor_presence(const PosteriorMatrix& h, double delta) {
  AnchorPresence a;
  a.class_max.assign(h.classes(), 0.0);
  for (std::size_t j = 0; j < h.classes(); ++j)
    for (std::size_t k = 0; k < h.size(); ++k) a.class_max[j] = std::max(a.class_max[j], h.matrix()(j, k));
  a.verdict = std::all_of(a.class_max.begin(), a.class_max.end(), [&](double m) { return m >= 1.0 - delta; });
  return a;
}

// Smallest interval enclosing the noisy P(noisy = 0 | x) values, as a 2x2
// transition: column 0 = (max, 1-max), column 1 = (min, 1-min).
inline TransitionMatrix minvol_interval_oracle(std::span<const double> noisy_p1) {
  if (noisy_p1.size() < 2) throw ValueError("minvol_interval_oracle: need at least two values");
  const auto [lo_it, hi_it] = std::minmax_element(noisy_p1.begin(), noisy_p1.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!(lo < hi)) throw ValueError("minvol_interval_oracle: need at least two distinct values");
  if (!(hi > 0.5 && lo < 0.5))
    throw NumericalError("minvol_interval_oracle: no diagonally dominant interval (needs max > 0.5 > min)");
  return TransitionMatrix(Matrix{{hi, lo}, {1.0 - hi, 1.0 - lo}});
}

struct SimplexVolume {
  double det_proxy = 0.0;    // det(T)
  double true_volume = 0.0;  // (C-1)-volume of conv(columns of T)
};

// The true volume is sqrt(det(G^T G)) / (C-1)! with G = [t_2 - t_1, ..., t_C - t_1].
inline SimplexVolume simplex_volume(const Matrix& t) {
  if (!t.square()) throw ShapeError("simplex_volume: matrix must be square");
  const std::size_t c = t.rows();
  SimplexVolume v;
  const auto ld = signed_logdet(t);
  v.det_proxy = ld.sign == 0 ? 0.0 : ld.sign * std::exp(ld.log_abs);
  Matrix g(c, c - 1);
  for (std::size_t k = 1; k < c; ++k)
    for (std::size_t i = 0; i < c; ++i) g(i, k - 1) = t(i, k) - t(i, 0);
  const auto gram = signed_logdet(matmul(g.transpose(), g));
  double fact = 1.0;
  for (std::size_t k = 2; k < c; ++k) fact *= static_cast<double>(k);
  v.true_volume = gram.sign <= 0 ? 0.0 : std::exp(0.5 * gram.log_abs) / fact;
  return v;
}

inline SimplexVolume simplex_volume(const TransitionMatrix& t) { return simplex_volume(t.matrix()); }

// ---------------------------------------------------------------------------

struct ScatterReport {
  std::size_t classes = 0;
  std::size_t columns = 0;
  std::size_t rays = 0;
  double condition1_tol = 0.0;
  double condition1_pass_fraction = 0.0;
  bool condition1_verdict = false;
  double condition1_worst_residual = 0.0;
  std::size_t condition2_trials = 0;
  double condition2_tol = 0.0;
  bool condition2_falsified = false;
  double condition2_best_margin = 0.0;
  std::optional<Matrix> condition2_witness;
  double anchor_delta = 0.0;
  Vector anchor_class_max;
  bool anchor_verdict = false;

  // Flat key=value block.
  std::string to_text() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "classes=" << classes << '\n'
       << "columns=" << columns << '\n'
       << "rays=" << rays << '\n'
       << "condition1_tol=" << condition1_tol << '\n'
       << "condition1_pass_fraction=" << condition1_pass_fraction << '\n'
       << "condition1_verdict=" << (condition1_verdict ? "pass" : "fail") << '\n'
       << "condition1_worst_residual=" << condition1_worst_residual << '\n'
       << "condition2_trials=" << condition2_trials << '\n'
       << "condition2_tol=" << condition2_tol << '\n'
       << "condition2_falsified=" << (condition2_falsified ? "true" : "false") << '\n'
       << "condition2_best_margin=" << condition2_best_margin << '\n'
       << "condition2_note="
       << (condition2_falsified ? "witness found"
                                : "no witness found in " + std::to_string(condition2_trials) + " trials")
       << '\n'
       << "anchor_delta=" << anchor_delta << '\n'
       << "anchor_class_max=";
    for (std::size_t k = 0; k < anchor_class_max.size(); ++k) os << (k ? "," : "") << anchor_class_max[k];
    os << '\n' << "anchor_verdict=" << (anchor_verdict ? "present" : "absent") << '\n';
    return os.str();
  }
};

struct ScatterOptions {
  std::size_t rays = kDefaultRays;
  double condition1_tol = 1e-6;
  std::size_t condition2_trials = 1000;
  double condition2_tol = 1e-9;
  double anchor_delta = 0.05;
  std::uint64_t seed = 0;
};

inline ScatterReport check_scattered(const PosteriorMatrix& h, const ScatterOptions& opt) {
  ScatterReport rep;
  rep.classes = h.classes();
  rep.columns = h.size();
  rep.rays = opt.rays;
  rep.condition1_tol = opt.condition1_tol;
  const auto rays = sample_R_rays(h.classes(), opt.rays, opt.seed);
  const auto c1 = check_condition1(h, rays, opt.condition1_tol);
  rep.condition1_pass_fraction = c1.pass_fraction;
  rep.condition1_verdict = c1.verdict;
  rep.condition1_worst_residual = c1.worst_residual;
  rep.condition2_tol = opt.condition2_tol;
  const auto c2 = check_condition2(h, opt.condition2_trials, opt.seed, opt.condition2_tol);
  rep.condition2_trials = c2.trials;
  rep.condition2_falsified = c2.falsified;
  rep.condition2_best_margin = c2.best_margin;
  rep.condition2_witness = c2.witness;
  rep.anchor_delta = opt.anchor_delta;
  const auto ap = anchor_presence(h, opt.anchor_delta);
  rep.anchor_class_max = ap.class_max;
  rep.anchor_verdict = ap.verdict;
  return rep;
}

}  // namespace volmin
