#pragma once

// Datasets with (when synthetic) their exact clean posteriors: generators,
// anchor removal, class balancing, splitting and CSV IO.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "volmin/error.hpp"
#include "volmin/linalg.hpp"
#include "volmin/noise.hpp"
#include "volmin/rng.hpp"

namespace volmin {

struct Dataset {
  Matrix x;                                 // n x d features
  std::size_t classes = 0;
  Labels y_clean;
  std::optional<Labels> y_noisy;
  std::optional<Matrix> clean_posterior;    // n x C, synthetic data only
  std::string provenance;

  std::size_t size() const noexcept { return x.rows(); }
  std::size_t features() const noexcept { return x.cols(); }

  void validate() const {
    const std::size_t n = size();
    if (classes < 2) throw ValueError("dataset needs at least 2 classes");
    if (y_clean.size() != n) throw ShapeError("dataset: y_clean length differs from row count");
    for (std::size_t y : y_clean)
      if (y >= classes) throw ValueError("dataset: clean label out of range");
    if (y_noisy) {
      if (y_noisy->size() != n) throw ShapeError("dataset: y_noisy length differs from row count");
      for (std::size_t y : *y_noisy)
        if (y >= classes) throw ValueError("dataset: noisy label out of range");
    }
    if (clean_posterior) {
      if (clean_posterior->rows() != n || clean_posterior->cols() != classes)
        throw ShapeError("dataset: posterior must be n x C");
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (double p : clean_posterior->row(i)) {
          if (p < -1e-9) throw ValueError("dataset: negative posterior entry");
          s += p;
        }
        if (std::abs(s - 1.0) > 1e-9)
          throw ValueError("dataset: posterior row " + std::to_string(i) + " does not sum to 1");
      }
    }
  }

  const Labels& noisy_labels() const {
    if (!y_noisy) throw ValueError("dataset has no noisy labels; run corruption first");
    return *y_noisy;
  }

  // Rows in the given order.
  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset out;
    out.classes = classes;
    out.provenance = provenance;
    const std::size_t d = features();
    std::vector<double> xs;
    xs.reserve(idx.size() * d);
    for (std::size_t i : idx) {
      auto r = x.row(i);
      xs.insert(xs.end(), r.begin(), r.end());
    }
    out.x = Matrix(idx.size(), d, std::move(xs));
    for (std::size_t i : idx) out.y_clean.push_back(y_clean[i]);
    if (y_noisy) {
      out.y_noisy.emplace();
      for (std::size_t i : idx) out.y_noisy->push_back((*y_noisy)[i]);
    }
    if (clean_posterior) {
      std::vector<double> ps;
      ps.reserve(idx.size() * classes);
      for (std::size_t i : idx) {
        auto r = clean_posterior->row(i);
        ps.insert(ps.end(), r.begin(), r.end());
      }
      out.clean_posterior = Matrix(idx.size(), classes, std::move(ps));
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Generators

enum class SimplexProfile { corner_rich, edge_scattered, center_heavy };

inline std::string to_string(SimplexProfile p) {
  switch (p) {
    case SimplexProfile::corner_rich: return "corner-rich";
    case SimplexProfile::edge_scattered: return "edge-scattered";
    case SimplexProfile::center_heavy: return "center-heavy";
  }
  return "?";
}

inline SimplexProfile parse_simplex_profile(const std::string& s) {
  if (s == "corner-rich") return SimplexProfile::corner_rich;
  if (s == "edge-scattered") return SimplexProfile::edge_scattered;
  if (s == "center-heavy") return SimplexProfile::center_heavy;
  throw ValueError("unknown simplex profile '" + s + "'");
}

// Largest distance an edge-scattered point is pulled off its edge, as a
// mixing weight toward a uniform-Dirichlet interior point.
inline constexpr double kEdgeJitter = 0.1;

// Pulls p toward the barycenter until its largest entry equals cap.
inline void cap_posterior(std::span<double> p, double cap) {
  const double u = 1.0 / static_cast<double>(p.size());
  const double m = *std::max_element(p.begin(), p.end());
  if (m <= cap) return;
  const double s = (cap - u) / (m - u);
  for (double& v : p) v = u + s * (v - u);
}

// Features are the clean posterior itself (d = C).
inline Dataset gen_simplex_feature(std::size_t classes, std::size_t n, double cap, SimplexProfile profile,
                                   std::uint64_t seed) {
  if (classes < 2) throw ValueError("gen_simplex_feature: need at least 2 classes");
  const double u = 1.0 / static_cast<double>(classes);
  if (!(cap > u && cap <= 1.0))
    throw ValueError("gen_simplex_feature: cap must lie in (1/C, 1], got " + std::to_string(cap));
  Engine eng = make_engine(seed, 0x73696d706cULL);
  Dataset ds;
  ds.classes = classes;
  std::vector<double> post(n * classes);
  for (std::size_t k = 0; k < n; ++k) {
    std::span<double> p(post.data() + k * classes, classes);
    switch (profile) {
      case SimplexProfile::corner_rich:
      case SimplexProfile::center_heavy: {
        const auto d = sample_dirichlet(eng, classes, profile == SimplexProfile::corner_rich ? 0.3 : 5.0);
        std::copy(d.begin(), d.end(), p.begin());
        break;
      }
      case SimplexProfile::edge_scattered: {
        const std::size_t i = uniform_index(eng, classes);
        std::size_t j = uniform_index(eng, classes - 1);
        if (j >= i) ++j;
        const double t = uniform(eng, 1.0 - cap, cap);
        const double eps = uniform(eng, 0.0, kEdgeJitter);
        const auto d = sample_dirichlet(eng, classes, 1.0);
        for (std::size_t c = 0; c < classes; ++c) p[c] = eps * d[c];
        p[i] += (1.0 - eps) * t;
        p[j] += (1.0 - eps) * (1.0 - t);
        break;
      }
    }
    cap_posterior(p, cap);
  }
  ds.x = Matrix(n, classes, post);
  ds.clean_posterior = Matrix(n, classes, std::move(post));
  ds.y_clean.resize(n);
  for (std::size_t k = 0; k < n; ++k) ds.y_clean[k] = sample_categorical(eng, ds.clean_posterior->row(k));
  std::ostringstream prov;
  prov << "simplex-feature C=" << classes << " n=" << n << " cap=" << cap << " profile=" << to_string(profile)
       << " seed=" << seed;
  ds.provenance = prov.str();
  return ds;
}

struct GaussianMixtureSpec {
  Matrix means;       // C x d
  Matrix covariance;  // d x d, shared
  Vector priors;      // length C
};

// Bayes posterior of a shared-covariance Gaussian mixture at x.
inline Vector gaussian_mixture_posterior(const GaussianMixtureSpec& spec, const Matrix& cov_inv,
                                         std::span<const double> x) {
  const std::size_t c = spec.means.rows();
  const std::size_t d = spec.means.cols();
  Vector logits(c);
  Vector diff(d);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t a = 0; a < d; ++a) diff[a] = x[a] - spec.means(k, a);
    const Vector m = matvec(cov_inv, diff);
    logits[k] = std::log(spec.priors[k]) - 0.5 * dot(diff, m);
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double& v : logits) {
    v = std::exp(v - mx);
    s += v;
  }
  for (double& v : logits) v /= s;
  return logits;
}

inline Dataset gen_gaussian_mixture(const GaussianMixtureSpec& spec, std::size_t n, std::uint64_t seed) {
  const std::size_t c = spec.means.rows();
  const std::size_t d = spec.means.cols();
  if (c < 2) throw ValueError("gen_gaussian_mixture: need at least 2 classes");
  if (spec.covariance.rows() != d || spec.covariance.cols() != d)
    throw ShapeError("gen_gaussian_mixture: covariance must be d x d");
  if (spec.priors.size() != c) throw ShapeError("gen_gaussian_mixture: priors must have C entries");
  double ps = 0.0;
  for (double p : spec.priors) {
    if (!(p > 0.0)) throw ValueError("gen_gaussian_mixture: priors must be positive");
    ps += p;
  }
  if (std::abs(ps - 1.0) > 1e-9) throw ValueError("gen_gaussian_mixture: priors must sum to 1");
  const Matrix chol = cholesky(spec.covariance);
  const Matrix cov_inv = inverse(spec.covariance);

  Engine eng = make_engine(seed, 0x676d6dULL);
  Dataset ds;
  ds.classes = c;
  std::vector<double> xs(n * d);
  std::vector<double> post(n * c);
  ds.y_clean.resize(n);
  Vector z(d);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t y = sample_categorical(eng, spec.priors);
    for (double& v : z) v = standard_normal(eng);
    std::span<double> x(xs.data() + k * d, d);
    for (std::size_t a = 0; a < d; ++a) {
      double s = spec.means(y, a);
      for (std::size_t b = 0; b <= a; ++b) s += chol(a, b) * z[b];
      x[a] = s;
    }
    const Vector p = gaussian_mixture_posterior(spec, cov_inv, x);
    std::copy(p.begin(), p.end(), post.begin() + static_cast<std::ptrdiff_t>(k * c));
    ds.y_clean[k] = y;
  }
  ds.x = Matrix(n, d, std::move(xs));
  ds.clean_posterior = Matrix(n, c, std::move(post));
  ds.provenance = "gaussian-mixture C=" + std::to_string(c) + " d=" + std::to_string(d) +
                  " n=" + std::to_string(n) + " seed=" + std::to_string(seed);
  return ds;
}

// ---------------------------------------------------------------------------
// Transforms

// Per clean class j, drops the ceil(q * n_j) instances of class j with the
// largest posterior_j. Uses the exact posterior unless one is supplied.
inline Dataset remove_anchor_candidates(const Dataset& ds, double q,
                                        const std::optional<Matrix>& estimated_posterior = std::nullopt) {
  if (!(q >= 0.0 && q < 1.0)) throw ValueError("remove_anchor_candidates: fraction must lie in [0,1)");
  const Matrix* post = estimated_posterior ? &*estimated_posterior
                                           : (ds.clean_posterior ? &*ds.clean_posterior : nullptr);
  if (!post) throw ValueError("remove_anchor_candidates: no posterior available");
  if (post->rows() != ds.size() || post->cols() != ds.classes)
    throw ShapeError("remove_anchor_candidates: posterior must be n x C");
  std::vector<char> drop(ds.size(), 0);
  for (std::size_t j = 0; j < ds.classes; ++j) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.y_clean[i] == j) members.push_back(i);
    std::stable_sort(members.begin(), members.end(),
                     [&](std::size_t a, std::size_t b) { return (*post)(a, j) > (*post)(b, j); });
    const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(members.size()) - 1e-9));
    for (std::size_t r = 0; r < k && r < members.size(); ++r) drop[members[r]] = 1;
  }
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (!drop[i]) keep.push_back(i);
  Dataset out = ds.subset(keep);
  std::ostringstream prov;
  prov << ds.provenance << " | anchors-removed q=" << q;
  out.provenance = prov.str();
  return out;
}

// Keeps a seeded random subset of every noisy class, sized to the rarest one.
inline Dataset balanced_undersample(const Dataset& ds, std::uint64_t seed) {
  const Labels& y = ds.noisy_labels();
  std::vector<std::vector<std::size_t>> by_class(ds.classes);
  for (std::size_t i = 0; i < y.size(); ++i) by_class[y[i]].push_back(i);
  std::size_t target = ds.size();
  for (const auto& members : by_class) target = std::min(target, members.size());
  Engine eng = make_engine(seed, 0x62616cULL);
  std::vector<std::size_t> keep;
  for (const auto& members : by_class) {
    const auto perm = permutation(eng, members.size());
    for (std::size_t r = 0; r < target; ++r) keep.push_back(members[perm[r]]);
  }
  std::sort(keep.begin(), keep.end());
  Dataset out = ds.subset(keep);
  out.provenance = ds.provenance + " | balanced seed=" + std::to_string(seed);
  return out;
}

inline constexpr double kDefaultValidationFraction = 0.1;

struct Split {
  Dataset train;
  Dataset validation;
};

// Seeded shuffle, then the first n - round(f n) rows train and the rest validate.
inline Split split(const Dataset& ds, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ValueError("split: fraction must lie in [0,1)");
  Engine eng = make_engine(seed, 0x73706c6974ULL);
  const auto perm = permutation(eng, ds.size());
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(ds.size())));
  const std::size_t n_train = ds.size() - n_val;
  Split s{ds.subset({perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train)}),
          ds.subset({perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end()})};
  s.train.provenance = ds.provenance + " | split train seed=" + std::to_string(seed);
  s.validation.provenance = ds.provenance + " | split validation seed=" + std::to_string(seed);
  return s;
}

// ---------------------------------------------------------------------------
// CSV

inline std::filesystem::path posterior_path(const std::filesystem::path& csv) {
  auto p = csv;
  p.replace_extension(".posterior.csv");
  return p;
}

inline std::string dataset_csv(const Dataset& ds) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t a = 0; a < ds.features(); ++a) os << 'x' << a << ',';
  os << "y_clean";
  if (ds.y_noisy) os << ",y_noisy";
  os << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.x.row(i)) os << v << ',';
    os << ds.y_clean[i];
    if (ds.y_noisy) os << ',' << (*ds.y_noisy)[i];
    os << '\n';
  }
  return os.str();
}

inline std::string posterior_csv(const Matrix& post) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t c = 0; c < post.cols(); ++c) os << (c ? "," : "") << 'p' << c;
  os << '\n';
  for (std::size_t i = 0; i < post.rows(); ++i) {
    for (std::size_t c = 0; c < post.cols(); ++c) os << (c ? "," : "") << post(i, c);
    os << '\n';
  }
  return os.str();
}

// Writes via a temporary file and a rename so readers never see partial output.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open " + tmp.string() + " for writing");
    os << content;
    if (!os) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_csv(const Dataset& ds, const std::filesystem::path& path) {
  write_file_atomic(path, dataset_csv(ds));
  if (ds.clean_posterior) write_file_atomic(posterior_path(path), posterior_csv(*ds.clean_posterior));
}

namespace detail {

inline std::size_t parse_label(const std::string& tok, std::size_t line_no) {
  std::size_t used = 0;
  long long v = -1;
  try {
    v = std::stoll(tok, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != tok.size() || tok.empty() || v < 0)
    throw ValueError("line " + std::to_string(line_no) + ": bad label '" + tok + "'");
  return static_cast<std::size_t>(v);
}

}  // namespace detail

// `classes` = 0 infers C from the posterior file or the largest label.
inline Dataset read_csv(const std::filesystem::path& path, std::size_t classes = 0) {
  std::istringstream is(read_file(path));
  std::string line;
  if (!std::getline(is, line)) throw ValueError(path.string() + ": empty file");
  const auto header = detail::split(detail::trim(line), ',');
  std::size_t d = 0;
  while (d < header.size() && header[d] == "x" + std::to_string(d)) ++d;
  if (d == 0 || d >= header.size() || header[d] != "y_clean")
    throw ValueError(path.string() + " line 1: expected header x0,...,x{d-1},y_clean[,y_noisy]");
  const bool has_noisy = header.size() == d + 2 && header[d + 1] == "y_noisy";
  if (header.size() != d + 1 && !has_noisy)
    throw ValueError(path.string() + " line 1: unexpected trailing columns");
  const std::size_t width = has_noisy ? d + 2 : d + 1;

  Dataset ds;
  std::vector<double> xs;
  Labels noisy;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto toks = detail::split(t, ',');
    if (toks.size() != width)
      throw ValueError(path.string() + " line " + std::to_string(line_no) + ": expected " +
                       std::to_string(width) + " fields, found " + std::to_string(toks.size()));
    try {
      for (std::size_t a = 0; a < d; ++a) xs.push_back(detail::parse_double(toks[a], line_no));
      ds.y_clean.push_back(detail::parse_label(toks[d], line_no));
      if (has_noisy) noisy.push_back(detail::parse_label(toks[d + 1], line_no));
    } catch (const ValueError& e) {
      throw ValueError(path.string() + " " + e.what());
    }
  }
  const std::size_t n = ds.y_clean.size();
  ds.x = Matrix(n, d, std::move(xs));
  if (has_noisy) ds.y_noisy = std::move(noisy);

  const auto ppath = posterior_path(path);
  if (std::filesystem::exists(ppath)) {
    std::istringstream ps(read_file(ppath));
    std::getline(ps, line);
    const auto ph = detail::split(detail::trim(line), ',');
    std::vector<double> vals;
    std::size_t pl = 1;
    while (std::getline(ps, line)) {
      ++pl;
      const std::string t = detail::trim(line);
      if (t.empty()) continue;
      const auto toks = detail::split(t, ',');
      if (toks.size() != ph.size())
        throw ValueError(ppath.string() + " line " + std::to_string(pl) + ": wrong field count");
      for (const auto& tok : toks) vals.push_back(detail::parse_double(tok, pl));
    }
    if (vals.size() != n * ph.size()) throw ValueError(ppath.string() + ": row count differs from dataset");
    ds.clean_posterior = Matrix(n, ph.size(), std::move(vals));
  }
  if (classes == 0) {
    if (ds.clean_posterior) {
      classes = ds.clean_posterior->cols();
    } else {
      std::size_t mx = 0;
      for (std::size_t y : ds.y_clean) mx = std::max(mx, y);
      if (ds.y_noisy)
        for (std::size_t y : *ds.y_noisy) mx = std::max(mx, y);
      classes = std::max<std::size_t>(mx + 1, 2);
    }
  }
  ds.classes = classes;
  ds.provenance = "csv " + path.filename().string();
  ds.validate();
  return ds;
}

}  // namespace volmin
