#pragma once

// End-to-end experiment stages behind the `volmin` command line. Every
// stage reads its inputs from the output directory, writes its artifacts
// atomically, copies the config verbatim, and leaves a manifest. Wall time
// goes to a separate `<command>.timing` file so that every other file is
// byte-identical across re-runs.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "volmin/config.hpp"
#include "volmin/data.hpp"
#include "volmin/estimators.hpp"
#include "volmin/geometry.hpp"
#include "volmin/noise.hpp"
#include "volmin/trainer.hpp"
#include "volmin/transition.hpp"

namespace volmin {

inline constexpr const char* kVersion = "volmin 0.1.0";

namespace fs = std::filesystem;

// An upstream artifact the stage needs is absent.
class MissingInput : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

struct SeedPlan {
  std::uint64_t data, test, noise, split, train;

  static SeedPlan from(std::uint64_t seed) {
    return {mix_seed(seed, 1), mix_seed(seed, 2), mix_seed(seed, 3), mix_seed(seed, 4), seed};
  }
};

// ---------------------------------------------------------------------------
// In-memory stages

struct GeneratedData {
  Dataset train;
  std::optional<Dataset> test;
};

inline GeneratedData generate_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto seeds = SeedPlan::from(seed);
  const DataConfig& d = cfg.data;
  GeneratedData out;
  switch (d.source) {
    case DataSource::simplex_feature:
      out.train = gen_simplex_feature(d.classes, d.n, d.cap, d.profile, seeds.data);
      if (d.test_n > 0) out.test = gen_simplex_feature(d.classes, d.test_n, d.cap, d.profile, seeds.test);
      break;
    case DataSource::gaussian_mixture: {
      GaussianMixtureSpec gm;
      gm.means = *d.means;
      gm.covariance = Matrix::identity(d.dim) * d.variance;
      gm.priors = d.priors.empty() ? Vector(d.classes, 1.0 / static_cast<double>(d.classes)) : d.priors;
      out.train = gen_gaussian_mixture(gm, d.n, seeds.data);
      if (d.test_n > 0) out.test = gen_gaussian_mixture(gm, d.test_n, seeds.test);
      break;
    }
    case DataSource::csv:
      out.train = read_csv(d.path, d.classes);
      if (!d.test_path.empty()) out.test = read_csv(d.test_path, d.classes);
      break;
  }
  if (d.na_fraction > 0.0) out.train = remove_anchor_candidates(out.train, d.na_fraction);
  return out;
}

inline TransitionMatrix true_transition(const ExperimentConfig& cfg) {
  NoiseSpec spec;
  spec.kind = cfg.noise.kind;
  spec.rate = cfg.noise.rate;
  spec.classes = cfg.data.classes;
  if (spec.kind == NoiseKind::custom) spec.custom = matrix_from_text(read_file(cfg.noise.matrix_path));
  auto t = build_transition(spec);
  if (t.classes() != cfg.data.classes) throw ConfigError("noise.matrix size differs from data.classes");
  return t;
}

inline Dataset corrupt(const ExperimentConfig& cfg, Dataset ds, const TransitionMatrix& t, std::uint64_t seed) {
  ds.y_noisy = corrupt_labels(ds.y_clean, t, SeedPlan::from(seed).noise);
  if (cfg.data.balance) ds = balanced_undersample(ds, SeedPlan::from(seed).noise);
  return ds;
}

// T p(x) for every row; the exact noisy posterior.
inline Matrix noisy_posterior_oracle(const Dataset& ds, const Matrix& t) {
  if (!ds.clean_posterior) throw ValueError("noisy posterior oracle needs clean posteriors");
  return matmul(*ds.clean_posterior, t.transpose());
}

struct VolminOutcome {
  TrainResult result;
  double est_error = std::numeric_limits<double>::quiet_NaN();
  double test_accuracy = std::numeric_limits<double>::quiet_NaN();
  double posterior_gap = std::numeric_limits<double>::quiet_NaN();
};

inline TrainConfig seeded(TrainConfig c, std::uint64_t seed) {
  c.seed = seed;
  return c;
}

inline void score_classifier(const Classifier& clf, const std::optional<Dataset>& test, double& acc, double& gap) {
  if (!test || test->size() == 0) return;
  acc = accuracy(clf, test->x, test->y_clean);
  if (test->clean_posterior) gap = mean_posterior_gap(clf, test->x, *test->clean_posterior);
}

inline VolminOutcome run_volmin(const ExperimentConfig& cfg, const Dataset& noisy, const std::optional<Dataset>& test,
                                const std::optional<TransitionMatrix>& t_true, std::uint64_t seed) {
  const auto s = split(noisy, cfg.data.val_fraction, SeedPlan::from(seed).split);
  TransitionSetup setup;
  if (t_true) setup.true_t = t_true->matrix();
  std::optional<Matrix> targets;
  if (cfg.fidelity == FidelityTargets::oracle) {
    if (!t_true) throw ConfigError("oracle fidelity targets need the true transition");
    targets = noisy_posterior_oracle(s.train, t_true->matrix());
  }
  VolminOutcome out;
  out.result = train(s.train, s.validation, seeded(cfg.train, seed), setup, targets ? &*targets : nullptr);
  if (t_true) out.est_error = estimation_error(*t_true, out.result.estimate);
  score_classifier(out.result.classifier, test, out.test_accuracy, out.posterior_gap);
  return out;
}

struct AnchorMethodOutcome {
  std::string method;
  Matrix estimate;
  double est_error = std::numeric_limits<double>::quiet_NaN();
  double test_accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct AnchorOutcome {
  NoisyPosteriorModel model;
  std::vector<AnchorMethodOutcome> methods;
};

// Fits the noisy posterior on the training split, estimates T on the
// training-split features, and optionally trains a forward-corrected
// classifier with each estimate for the accuracy column.
inline AnchorOutcome run_anchor(const ExperimentConfig& cfg, const Dataset& noisy, const std::optional<Dataset>& test,
                                const std::optional<TransitionMatrix>& t_true, std::uint64_t seed) {
  const auto s = split(noisy, cfg.data.val_fraction, SeedPlan::from(seed).split);
  AnchorOutcome out;
  out.model = fit_noisy_posterior(s.train, s.validation, seeded(cfg.train, seed));
  const Matrix g = evaluate_posterior(out.model, s.train.x);
  if (cfg.estimators.anchor_max) out.methods.push_back({"anchor-max", anchor_estimate_max(g)});
  if (cfg.estimators.anchor_percentile)
    out.methods.push_back({"anchor-percentile", anchor_estimate_percentile(g, cfg.estimators.alpha)});
  for (auto& m : out.methods) {
    if (t_true) m.est_error = estimation_error(*t_true, m.estimate);
    if (cfg.estimators.forward_correct && test) {
      TransitionSetup setup;
      setup.frozen = m.estimate;
      auto r = train(s.train, s.validation, seeded(cfg.train, seed), setup);
      double gap = 0.0;
      score_classifier(r.classifier, test, m.test_accuracy, gap);
    } else if (test) {
      double gap = 0.0;
      score_classifier(out.model.classifier, test, m.test_accuracy, gap);
    }
  }
  return out;
}

inline ScatterReport scatter_report(const ExperimentConfig& cfg, const Dataset& ds, std::uint64_t seed) {
  if (!ds.clean_posterior) throw MissingInput("check-scattered needs clean posteriors (a .posterior.csv beside the data)");
  Matrix rows = *ds.clean_posterior;
  if (cfg.geometry.max_columns > 0 && rows.rows() > cfg.geometry.max_columns) {
    Engine eng = make_engine(seed, 0x67656f6dULL);
    auto perm = permutation(eng, rows.rows());
    perm.resize(cfg.geometry.max_columns);
    std::sort(perm.begin(), perm.end());
    Dataset tmp = ds.subset(perm);
    rows = *tmp.clean_posterior;
  }
  ScatterOptions opt;
  opt.rays = cfg.geometry.rays;
  opt.condition1_tol = cfg.geometry.condition1_tol;
  opt.condition2_trials = cfg.geometry.trials;
  opt.condition2_tol = cfg.geometry.condition2_tol;
  opt.anchor_delta = cfg.geometry.anchor_delta;
  opt.seed = seed;
  return check_scattered(PosteriorMatrix::from_rows(rows), opt);
}

// ---------------------------------------------------------------------------
// Directory-backed commands

struct CommandContext {
  std::string command;
  std::string config_text;
  ExperimentConfig config;
  fs::path out;
  std::optional<std::uint64_t> seed_override;

  std::uint64_t seed() const { return seed_override.value_or(config.seeds.front()); }
};

inline std::string format_real(double v) {
  if (std::isnan(v)) return "NA";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

class Manifest {
 public:
  explicit Manifest(const CommandContext& ctx) : ctx_(ctx), start_(std::chrono::steady_clock::now()) {}

  void input(const fs::path& p) { inputs_.push_back(p.generic_string()); }
  void output(const fs::path& p) { outputs_.push_back(p.generic_string()); }

  void finish() {
    std::ostringstream os;
    os << "command=" << ctx_.command << '\n' << "version=" << kVersion << '\n' << "config=config.txt\n";
    os << "seeds=";
    if (ctx_.command == "sweep") {
      for (std::size_t k = 0; k < ctx_.config.seeds.size(); ++k) os << (k ? "," : "") << ctx_.config.seeds[k];
    } else {
      os << ctx_.seed();
    }
    os << '\n';
    for (const auto& i : inputs_) os << "input=" << i << '\n';
    for (const auto& o : outputs_) os << "output=" << o << '\n';
    write_file_atomic(ctx_.out / ("manifest_" + ctx_.command + ".txt"), os.str());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::ostringstream ts;
    ts << "wall_seconds=" << std::fixed << std::setprecision(3) << secs << '\n';
    write_file_atomic(ctx_.out / (ctx_.command + ".timing"), ts.str());
  }

 private:
  const CommandContext& ctx_;
  std::chrono::steady_clock::time_point start_;
  std::vector<std::string> inputs_;
  std::vector<std::string> outputs_;
};

namespace paths {
inline fs::path train_csv(const fs::path& out) { return out / "data" / "train.csv"; }
inline fs::path test_csv(const fs::path& out) { return out / "data" / "test.csv"; }
inline fs::path noisy_csv(const fs::path& out) { return out / "data" / "train_noisy.csv"; }
inline fs::path true_t(const fs::path& out) { return out / "true_T.txt"; }
}  // namespace paths

inline void require_input(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p)) throw MissingInput("missing upstream artifact " + p.generic_string() + " (run `volmin " + producer + "` first)");
}

inline void write_matrix_file(const fs::path& p, const Matrix& m, const std::string& comment = {}) {
  std::ostringstream os;
  if (!comment.empty()) os << "# " << comment << '\n';
  write_matrix_text(os, m);
  write_file_atomic(p, os.str());
}

inline void begin_command(const CommandContext& ctx) {
  fs::create_directories(ctx.out);
  write_file_atomic(ctx.out / "config.txt", ctx.config_text);
}

inline std::optional<Dataset> load_test(const fs::path& out, std::size_t classes) {
  if (!fs::exists(paths::test_csv(out))) return std::nullopt;
  return read_csv(paths::test_csv(out), classes);
}

inline void cmd_generate(const CommandContext& ctx) {
  begin_command(ctx);
  Manifest m(ctx);
  if (ctx.config.data.source == DataSource::csv) m.input(ctx.config.data.path);
  const auto g = generate_data(ctx.config, ctx.seed());
  write_csv(g.train, paths::train_csv(ctx.out));
  m.output("data/train.csv");
  if (g.test) {
    write_csv(*g.test, paths::test_csv(ctx.out));
    m.output("data/test.csv");
  }
  m.finish();
}

inline void cmd_corrupt(const CommandContext& ctx) {
  begin_command(ctx);
  Manifest m(ctx);
  require_input(paths::train_csv(ctx.out), "generate");
  m.input("data/train.csv");
  const Dataset clean = read_csv(paths::train_csv(ctx.out), ctx.config.data.classes);
  const auto t = true_transition(ctx.config);
  const Dataset noisy = corrupt(ctx.config, clean, t, ctx.seed());
  write_csv(noisy, paths::noisy_csv(ctx.out));
  write_matrix_file(paths::true_t(ctx.out), t.matrix(), "true transition, entry (i,j) = P(noisy=i | clean=j)");
  m.output("data/train_noisy.csv");
  m.output("true_T.txt");
  m.finish();
}

inline void cmd_check_scattered(const CommandContext& ctx) {
  begin_command(ctx);
  Manifest m(ctx);
  require_input(paths::train_csv(ctx.out), "generate");
  m.input("data/train.csv");
  const Dataset ds = read_csv(paths::train_csv(ctx.out), ctx.config.data.classes);
  const auto rep = scatter_report(ctx.config, ds, ctx.seed());
  write_file_atomic(ctx.out / "scatter_report.txt", rep.to_text());
  m.output("scatter_report.txt");
  if (rep.condition2_witness) {
    write_matrix_file(ctx.out / "witness_Q.txt", *rep.condition2_witness, "orthogonal Q with Q^T H >= -tol");
    m.output("witness_Q.txt");
  }
  m.finish();
}

inline std::optional<TransitionMatrix> load_true_t(const fs::path& out) {
  if (!fs::exists(paths::true_t(out))) return std::nullopt;
  return TransitionMatrix(matrix_from_text(read_file(paths::true_t(out))));
}

inline void cmd_train_volmin(const CommandContext& ctx) {
  begin_command(ctx);
  Manifest m(ctx);
  require_input(paths::noisy_csv(ctx.out), "corrupt");
  m.input("data/train_noisy.csv");
  const Dataset noisy = read_csv(paths::noisy_csv(ctx.out), ctx.config.data.classes);
  const auto test = load_test(ctx.out, ctx.config.data.classes);
  if (test) m.input("data/test.csv");
  const auto t_true = load_true_t(ctx.out);
  if (t_true) m.input("true_T.txt");
  const auto o = run_volmin(ctx.config, noisy, test, t_true, ctx.seed());
  const fs::path dir = ctx.out / "volmin";
  write_matrix_file(dir / "W.txt", o.result.transition.weights(), "transition weights (checkpoint source of truth)");
  std::ostringstream clf;
  o.result.classifier.write_text(clf);
  write_file_atomic(dir / "classifier.txt", clf.str());
  write_file_atomic(dir / "history.csv", o.result.history.to_csv());
  write_matrix_file(dir / "T_est.txt", o.result.estimate, "estimated transition (selected epoch)");
  std::ostringstream rep;
  rep << "method=volminnet\n"
      << "best_epoch=" << o.result.best_epoch << '\n'
      << "est_error=" << format_real(o.est_error) << '\n'
      << "test_accuracy=" << format_real(o.test_accuracy) << '\n'
      << "posterior_gap=" << format_real(o.posterior_gap) << '\n';
  write_file_atomic(dir / "report.txt", rep.str());
  for (const char* f : {"volmin/W.txt", "volmin/classifier.txt", "volmin/history.csv", "volmin/T_est.txt", "volmin/report.txt"})
    m.output(f);
  m.finish();
}

inline void cmd_estimate_anchor(const CommandContext& ctx) {
  begin_command(ctx);
  Manifest m(ctx);
  require_input(paths::noisy_csv(ctx.out), "corrupt");
  m.input("data/train_noisy.csv");
  const Dataset noisy = read_csv(paths::noisy_csv(ctx.out), ctx.config.data.classes);
  const auto test = load_test(ctx.out, ctx.config.data.classes);
  if (test) m.input("data/test.csv");
  const auto t_true = load_true_t(ctx.out);
  if (t_true) m.input("true_T.txt");
  const auto o = run_anchor(ctx.config, noisy, test, t_true, ctx.seed());
  const fs::path dir = ctx.out / "anchor";
  std::ostringstream clf;
  o.model.classifier.write_text(clf);
  write_file_atomic(dir / "noisy_posterior_classifier.txt", clf.str());
  m.output("anchor/noisy_posterior_classifier.txt");
  std::ostringstream rep;
  for (const auto& meth : o.methods) {
    const std::string file = "T_" + meth.method + ".txt";
    write_matrix_file(dir / file, meth.estimate, meth.method + " estimate");
    m.output("anchor/" + file);
    rep << "method=" << meth.method << " est_error=" << format_real(meth.est_error)
        << " test_accuracy=" << format_real(meth.test_accuracy) << '\n';
  }
  write_file_atomic(dir / "report.txt", rep.str());
  m.output("anchor/report.txt");
  m.finish();
}

// ---------------------------------------------------------------------------
// Sweep

struct SweepRow {
  std::string method;
  std::uint64_t seed = 0;
  double est_error = std::numeric_limits<double>::quiet_NaN();
  double test_accuracy = std::numeric_limits<double>::quiet_NaN();
  double posterior_gap = std::numeric_limits<double>::quiet_NaN();
};

// One full trial: generate, corrupt, VolMinNet, anchor baselines.
inline std::vector<SweepRow> run_trial(const ExperimentConfig& cfg, std::uint64_t seed,
                                       const std::optional<fs::path>& dir = std::nullopt) {
  const auto g = generate_data(cfg, seed);
  const auto t = true_transition(cfg);
  const Dataset noisy = corrupt(cfg, g.train, t, seed);
  std::vector<SweepRow> rows;
  const auto v = run_volmin(cfg, noisy, g.test, t, seed);
  rows.push_back({"volminnet", seed, v.est_error, v.test_accuracy, v.posterior_gap});
  std::optional<AnchorOutcome> a;
  if (cfg.estimators.anchor_max || cfg.estimators.anchor_percentile) {
    a = run_anchor(cfg, noisy, g.test, t, seed);
    for (const auto& meth : a->methods) rows.push_back({meth.method, seed, meth.est_error, meth.test_accuracy});
  }
  if (dir) {
    write_matrix_file(*dir / "true_T.txt", t.matrix());
    write_matrix_file(*dir / "T_volminnet.txt", v.result.estimate);
    write_matrix_file(*dir / "W_volminnet.txt", v.result.transition.weights());
    write_file_atomic(*dir / "history_volminnet.csv", v.result.history.to_csv());
    if (a)
      for (const auto& meth : a->methods) write_matrix_file(*dir / ("T_" + meth.method + ".txt"), meth.estimate);
  }
  return rows;
}

inline std::size_t thread_cap() {
  if (const char* env = std::getenv("VOLMIN_THREADS")) {
    try {
      const auto v = std::stoul(env);
      if (v >= 1) return v;
    } catch (const std::exception&) {
    }
  }
  return 1;
}

inline std::string aggregate_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "method,seed,est_error,test_accuracy,posterior_gap\n";
  std::vector<std::string> order;
  for (const auto& r : rows) {
    if (std::find(order.begin(), order.end(), r.method) == order.end()) order.push_back(r.method);
    os << r.method << ',' << r.seed << ',' << format_real(r.est_error) << ',' << format_real(r.test_accuracy) << ','
       << format_real(r.posterior_gap) << '\n';
  }
  auto stats = [](const std::vector<double>& xs) {
    std::vector<double> v;
    for (double x : xs)
      if (!std::isnan(x)) v.push_back(x);
    if (v.empty()) return std::string("NA");
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
    return format_real(mean) + " +- " + format_real(sd);
  };
  for (const auto& meth : order) {
    std::vector<double> e, acc, gap;
    for (const auto& r : rows)
      if (r.method == meth) {
        e.push_back(r.est_error);
        acc.push_back(r.test_accuracy);
        gap.push_back(r.posterior_gap);
      }
    os << meth << ",summary," << stats(e) << ',' << stats(acc) << ',' << stats(gap) << '\n';
  }
  return os.str();
}

inline std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::optional<fs::path>& out = std::nullopt) {
  const auto& seeds = cfg.seeds;
  std::vector<std::vector<SweepRow>> per_seed(seeds.size());
  std::vector<std::string> errors(seeds.size());
  const std::size_t workers = std::min(thread_cap(), seeds.size());
  auto work = [&](std::size_t k) {
    try {
      std::optional<fs::path> dir;
      if (out) dir = *out / ("seed-" + std::to_string(seeds[k]));
      per_seed[k] = run_trial(cfg, seeds[k], dir);
    } catch (const std::exception& e) {
      errors[k] = e.what();
    }
  };
  if (workers <= 1) {
    for (std::size_t k = 0; k < seeds.size(); ++k) work(k);
  } else {
    std::mutex mu;
    std::size_t next = 0;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (;;) {
          std::size_t k;
          {
            std::lock_guard lock(mu);
            if (next >= seeds.size()) return;
            k = next++;
          }
          work(k);
        }
      });
    for (auto& th : pool) th.join();
  }
  for (std::size_t k = 0; k < seeds.size(); ++k)
    if (!errors[k].empty()) throw NumericalError("seed " + std::to_string(seeds[k]) + ": " + errors[k]);
  std::vector<SweepRow> rows;
  for (const auto& method : {"volminnet", "anchor-max", "anchor-percentile"})
    for (const auto& trial : per_seed)
      for (const auto& r : trial)
        if (r.method == method) rows.push_back(r);
  return rows;
}

inline void cmd_sweep(const CommandContext& ctx) {
  begin_command(ctx);
  Manifest m(ctx);
  if (ctx.config.data.source == DataSource::csv) m.input(ctx.config.data.path);
  ExperimentConfig cfg = ctx.config;
  if (ctx.seed_override) cfg.seeds = {*ctx.seed_override};
  const auto rows = run_sweep(cfg, ctx.out);
  write_file_atomic(ctx.out / "aggregate.csv", aggregate_csv(rows));
  for (auto s : cfg.seeds) m.output("seed-" + std::to_string(s) + "/");
  m.output("aggregate.csv");
  m.finish();
}

inline const std::map<std::string, void (*)(const CommandContext&)>& commands() {
  static const std::map<std::string, void (*)(const CommandContext&)> table{
      {"generate", cmd_generate},           {"corrupt", cmd_corrupt},
      {"check-scattered", cmd_check_scattered}, {"train-volmin", cmd_train_volmin},
      {"estimate-anchor", cmd_estimate_anchor}, {"sweep", cmd_sweep},
  };
  return table;
}

}  // namespace volmin
