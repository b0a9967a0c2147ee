#pragma once

// Experiment configuration: line-oriented `section.key = value` text.
// Blank lines and lines starting with '#' are ignored. Unknown keys and
// malformed values are rejected before any work starts.

#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "volmin/data.hpp"
#include "volmin/error.hpp"
#include "volmin/geometry.hpp"
#include "volmin/noise.hpp"
#include "volmin/trainer.hpp"

namespace volmin {

// Anchor-removal presets: 40% per class for MNIST/NA, 10% for CIFAR/NA.
inline constexpr double kNaPresetMnist = 0.4;
inline constexpr double kNaPresetCifar = 0.1;
inline constexpr std::size_t kDefaultSweepRepetitions = 5;
inline constexpr double kDefaultPercentileAlpha = 3.0;

enum class DataSource { simplex_feature, gaussian_mixture, csv };
enum class FidelityTargets { labels, oracle };

struct DataConfig {
  DataSource source = DataSource::simplex_feature;
  std::size_t classes = 3;
  std::size_t n = 20000;
  std::size_t test_n = 2000;
  double cap = 0.9;
  SimplexProfile profile = SimplexProfile::edge_scattered;
  std::string path;       // csv source
  std::string test_path;  // csv source, optional
  std::size_t dim = 2;    // gaussian mixture
  std::optional<Matrix> means;
  double variance = 1.0;
  Vector priors;          // empty = uniform
  double na_fraction = 0.0;
  double val_fraction = kDefaultValidationFraction;
  bool balance = false;
};

struct NoiseConfig {
  NoiseKind kind = NoiseKind::symmetric;
  double rate = 0.2;
  std::string matrix_path;  // custom
};

struct EstimatorConfig {
  bool anchor_max = true;
  bool anchor_percentile = true;
  double alpha = kDefaultPercentileAlpha;
  bool forward_correct = true;  // train a forward-corrected classifier with each estimate
};

struct GeometryConfig {
  std::size_t rays = kDefaultRays;
  std::size_t trials = 1000;
  double condition1_tol = 1e-6;
  double condition2_tol = 1e-9;
  double anchor_delta = 0.05;
  std::size_t max_columns = 0;  // 0 = use every instance
};

struct ExperimentConfig {
  DataConfig data;
  NoiseConfig noise;
  TrainConfig train;
  FidelityTargets fidelity = FidelityTargets::labels;
  EstimatorConfig estimators;
  GeometryConfig geometry;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::string output_dir = "out";
};

namespace detail {

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

inline double parse_real(const std::string& v, const std::string& key) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || !std::isfinite(x))
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

inline std::uint64_t parse_count(const std::string& v, const std::string& key) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return x;
}

template <class F>
auto parse_list(const std::string& v, const std::string& key, F&& item) {
  std::vector<decltype(item(std::string{}, key))> out;
  if (trim(v).empty()) return out;
  for (const auto& tok : split(v, ',')) out.push_back(item(tok, key));
  return out;
}

// "a,b;c,d" -> 2x2
inline Matrix parse_inline_matrix(const std::string& v, const std::string& key) {
  std::vector<double> vals;
  std::size_t rows = 0, cols = 0;
  for (const auto& row : split(v, ';')) {
    const auto r = parse_list(row, key, parse_real);
    if (rows == 0) cols = r.size();
    if (r.size() != cols || cols == 0) throw ConfigError(key + ": ragged matrix");
    vals.insert(vals.end(), r.begin(), r.end());
    ++rows;
  }
  return Matrix(rows, cols, std::move(vals));
}

inline OptimizerSpec& optimizer_for(ExperimentConfig& c, const std::string& prefix) {
  return prefix == "classifier" ? c.train.classifier_optimizer : c.train.transition_optimizer;
}

}  // namespace detail

inline std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    const std::string line = detail::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'section.key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.find('.') == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": key '" + key + "' has no section");
    if (kv.count(key)) throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    kv[key] = value;
  }
  return kv;
}

inline ExperimentConfig parse_experiment_config(const std::string& text) {
  using namespace detail;
  ExperimentConfig c;
  const auto kv = parse_key_values(text);
  bool means_given = false;
  for (const auto& [key, v] : kv) {
    try {
      if (key == "data.generator") {
        if (v == "simplex-feature") c.data.source = DataSource::simplex_feature;
        else if (v == "gaussian-mixture") c.data.source = DataSource::gaussian_mixture;
        else if (v == "csv") c.data.source = DataSource::csv;
        else throw ConfigError(key + ": unknown generator '" + v + "'");
      } else if (key == "data.classes") c.data.classes = parse_count(v, key);
      else if (key == "data.n") c.data.n = parse_count(v, key);
      else if (key == "data.test_n") c.data.test_n = parse_count(v, key);
      else if (key == "data.cap") c.data.cap = parse_real(v, key);
      else if (key == "data.profile") c.data.profile = parse_simplex_profile(v);
      else if (key == "data.path") c.data.path = v;
      else if (key == "data.test_path") c.data.test_path = v;
      else if (key == "data.dim") c.data.dim = parse_count(v, key);
      else if (key == "data.means") { c.data.means = parse_inline_matrix(v, key); means_given = true; }
      else if (key == "data.variance") c.data.variance = parse_real(v, key);
      else if (key == "data.priors") c.data.priors = parse_list(v, key, parse_real);
      else if (key == "data.na_fraction") c.data.na_fraction = parse_real(v, key);
      else if (key == "data.na_preset") {
        if (v == "mnist-na") c.data.na_fraction = kNaPresetMnist;
        else if (v == "cifar-na") c.data.na_fraction = kNaPresetCifar;
        else if (v == "none") c.data.na_fraction = 0.0;
        else throw ConfigError(key + ": expected mnist-na, cifar-na or none");
      } else if (key == "data.val_fraction") c.data.val_fraction = parse_real(v, key);
      else if (key == "data.balance") c.data.balance = parse_bool(v, key);
      else if (key == "noise.kind") c.noise.kind = parse_noise_kind(v);
      else if (key == "noise.rate") c.noise.rate = parse_real(v, key);
      else if (key == "noise.matrix") c.noise.matrix_path = v;
      else if (key == "train.lambda") c.train.lambda = parse_real(v, key);
      else if (key == "train.epochs") c.train.epochs = parse_count(v, key);
      else if (key == "train.batch_size") c.train.batch_size = parse_count(v, key);
      else if (key == "train.architecture") c.train.architecture = parse_architecture(v);
      else if (key == "train.hidden") {
        c.train.hidden.clear();
        for (auto h : parse_list(v, key, parse_count)) c.train.hidden.push_back(h);
      } else if (key == "train.selection_metric") c.train.selection_metric = parse_selection_metric(v);
      else if (key == "train.transition_init") c.train.transition_init = parse_real(v, key);
      else if (key == "train.fidelity_targets") {
        if (v == "labels") c.fidelity = FidelityTargets::labels;
        else if (v == "oracle") c.fidelity = FidelityTargets::oracle;
        else throw ConfigError(key + ": expected labels or oracle");
      } else if (key == "train.lr_schedule") {
        c.train.lr_schedule.clear();
        for (const auto& item : split(v, ',')) {
          if (trim(item).empty()) continue;
          const auto parts = split(item, ':');
          if (parts.size() != 2) throw ConfigError(key + ": entries look like epoch:divisor");
          c.train.lr_schedule.push_back({parse_count(parts[0], key), parse_real(parts[1], key)});
        }
      } else if (key.rfind("train.classifier_", 0) == 0 || key.rfind("train.transition_", 0) == 0) {
        const std::string prefix = key.substr(6, key.find('_') - 6);
        const std::string field = key.substr(key.find('_') + 1);
        OptimizerSpec& o = optimizer_for(c, prefix);
        if (field == "optimizer") o.kind = parse_optimizer_kind(v);
        else if (field == "lr") o.lr = parse_real(v, key);
        else if (field == "momentum") o.momentum = parse_real(v, key);
        else if (field == "weight_decay") o.weight_decay = parse_real(v, key);
        else if (field == "beta1") o.beta1 = parse_real(v, key);
        else if (field == "beta2") o.beta2 = parse_real(v, key);
        else if (field == "eps") o.eps = parse_real(v, key);
        else throw ConfigError("unknown key '" + key + "'");
      } else if (key == "estimators.methods") {
        c.estimators.anchor_max = c.estimators.anchor_percentile = false;
        for (const auto& m : split(v, ',')) {
          if (m == "anchor-max") c.estimators.anchor_max = true;
          else if (m == "anchor-percentile") c.estimators.anchor_percentile = true;
          else if (!m.empty() && m != "none") throw ConfigError(key + ": unknown method '" + m + "'");
        }
      } else if (key == "estimators.alpha") c.estimators.alpha = parse_real(v, key);
      else if (key == "estimators.forward_correct") c.estimators.forward_correct = parse_bool(v, key);
      else if (key == "geometry.rays") c.geometry.rays = parse_count(v, key);
      else if (key == "geometry.trials") c.geometry.trials = parse_count(v, key);
      else if (key == "geometry.condition1_tol") c.geometry.condition1_tol = parse_real(v, key);
      else if (key == "geometry.condition2_tol") c.geometry.condition2_tol = parse_real(v, key);
      else if (key == "geometry.anchor_delta") c.geometry.anchor_delta = parse_real(v, key);
      else if (key == "geometry.max_columns") c.geometry.max_columns = parse_count(v, key);
      else if (key == "trials.seeds") c.seeds = parse_list(v, key, parse_count);
      else if (key == "trials.repetitions") {
        c.seeds.clear();
        const auto reps = parse_count(v, key);
        for (std::uint64_t s = 0; s < reps; ++s) c.seeds.push_back(s);
      } else if (key == "output.dir") c.output_dir = v;
      else throw ConfigError("unknown key '" + key + "'");
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(key + ": " + e.what());
    }
  }

  // cross-field checks
  if (c.data.classes < 2) throw ConfigError("data.classes must be >= 2");
  if (c.data.source != DataSource::csv && c.data.n < 2) throw ConfigError("data.n must be >= 2");
  if (c.data.source == DataSource::csv && c.data.path.empty()) throw ConfigError("data.path is required for csv data");
  if (c.data.source == DataSource::simplex_feature &&
      !(c.data.cap > 1.0 / static_cast<double>(c.data.classes) && c.data.cap <= 1.0))
    throw ConfigError("data.cap must lie in (1/C, 1]");
  if (c.data.source == DataSource::gaussian_mixture) {
    if (!means_given) throw ConfigError("data.means is required for gaussian-mixture data");
    if (c.data.means->rows() != c.data.classes) throw ConfigError("data.means must have data.classes rows");
    c.data.dim = c.data.means->cols();
    if (!(c.data.variance > 0.0)) throw ConfigError("data.variance must be positive");
    if (!c.data.priors.empty() && c.data.priors.size() != c.data.classes)
      throw ConfigError("data.priors must have data.classes entries");
  }
  if (!(c.data.na_fraction >= 0.0 && c.data.na_fraction < 1.0)) throw ConfigError("data.na_fraction must lie in [0,1)");
  if (!(c.data.val_fraction >= 0.0 && c.data.val_fraction < 1.0)) throw ConfigError("data.val_fraction must lie in [0,1)");
  if (c.noise.kind == NoiseKind::custom && c.noise.matrix_path.empty())
    throw ConfigError("noise.matrix is required for custom noise");
  if (c.noise.kind != NoiseKind::custom) {
    if (!(c.noise.rate >= 0.0 && c.noise.rate < 1.0)) throw ConfigError("noise.rate must lie in [0,1)");
    if (c.noise.kind == NoiseKind::symmetric &&
        !(c.noise.rate < static_cast<double>(c.data.classes - 1) / static_cast<double>(c.data.classes)))
      throw ConfigError("noise.rate breaks diagonal dominance for symmetric noise");
    if (c.noise.kind == NoiseKind::pair && !(c.noise.rate < 0.5))
      throw ConfigError("noise.rate breaks diagonal dominance for pair noise");
  }
  if (!(c.estimators.alpha > 0.0 && c.estimators.alpha < 100.0)) throw ConfigError("estimators.alpha must lie in (0,100)");
  if (c.geometry.rays < 1 || c.geometry.trials < 1) throw ConfigError("geometry.rays and geometry.trials must be >= 1");
  if (c.seeds.empty()) throw ConfigError("trials.seeds must not be empty");
  if (c.fidelity == FidelityTargets::oracle && c.data.source == DataSource::csv)
    throw ConfigError("oracle fidelity targets need a synthetic generator");
  try {
    c.train.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  return c;
}

}  // namespace volmin
