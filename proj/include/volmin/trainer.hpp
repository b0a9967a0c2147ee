#pragma once

// Joint training of a classifier h and a trainable transition T on noisy
// labels. The objective is
//
//   mean_i  -log [T h(x_i)]_{y~_i}  +  lambda * log|det T|
//
// and both parameter sets move on every step from one gradient evaluation.

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "volmin/data.hpp"
#include "volmin/error.hpp"
#include "volmin/linalg.hpp"
#include "volmin/model.hpp"
#include "volmin/noise.hpp"
#include "volmin/optim.hpp"
#include "volmin/rng.hpp"
#include "volmin/transition.hpp"

namespace volmin {

inline constexpr double kDefaultLambda = 1e-4;
inline constexpr double kProbabilityFloor = 1e-300;

// `final_epoch` keeps the last epoch; validation is still recorded.
enum class SelectionMetric { noisy_val_accuracy, noisy_val_loss, final_epoch };

inline std::string to_string(SelectionMetric m) {
  switch (m) {
    case SelectionMetric::noisy_val_accuracy: return "noisy-val-accuracy";
    case SelectionMetric::noisy_val_loss: return "noisy-val-loss";
    case SelectionMetric::final_epoch: return "final";
  }
  return "";
}

inline SelectionMetric parse_selection_metric(const std::string& s) {
  if (s == "noisy-val-accuracy") return SelectionMetric::noisy_val_accuracy;
  if (s == "noisy-val-loss") return SelectionMetric::noisy_val_loss;
  if (s == "final") return SelectionMetric::final_epoch;
  throw ValueError("unknown selection metric '" + s + "'");
}

struct LrStep {
  std::size_t epoch = 0;  // the rate is divided once this many epochs have completed
  double divisor = 1.0;
  friend bool operator==(const LrStep&, const LrStep&) = default;
};

struct TrainConfig {
  double lambda = kDefaultLambda;
  std::size_t epochs = 300;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  Architecture architecture = Architecture::mlp;
  std::vector<std::size_t> hidden{32};
  OptimizerSpec classifier_optimizer = OptimizerSpec::adam(1e-3);
  OptimizerSpec transition_optimizer = OptimizerSpec::adam(1e-3);
  std::vector<LrStep> lr_schedule;
  SelectionMetric selection_metric = SelectionMetric::noisy_val_loss;
  std::optional<double> transition_init;  // defaults to default_transition_init(C)

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValueError("lambda must be finite and >= 0");
    if (batch_size < 1) throw ValueError("batch_size must be >= 1");
    if (epochs < 1) throw ValueError("epochs must be >= 1");
    for (const auto& s : lr_schedule)
      if (!(s.divisor > 0.0)) throw ValueError("lr_schedule divisors must be positive");
    if (transition_optimizer.weight_decay != 0.0)
      throw ValueError("weight decay is not applied to transition weights; set it to 0");
  }

  double lr_scale(std::size_t completed_epochs) const {
    double scale = 1.0;
    for (const auto& s : lr_schedule)
      if (completed_epochs >= s.epoch) scale /= s.divisor;
    return scale;
  }
};

// One mini-batch. Soft targets, when present, replace the one-hot noisy
// labels in the fidelity term (cross-entropy against a full distribution).
struct Batch {
  Matrix x;
  Labels labels;
  std::optional<Matrix> targets;

  std::size_t size() const noexcept { return x.rows(); }
};

struct LossAndGrads {
  double loss = 0.0;      // fidelity + lambda * log|det|
  double fidelity = 0.0;
  SignedLogDet volume;
  Matrix grad_t;          // dLoss/dT before the transition chain
  Matrix grad_w;
  Vector grad_theta;
  std::size_t clamp_events = 0;
};

namespace detail {

// Fidelity term of one batch against a fixed matrix t. Accumulates
// dFidelity/dT into grad_t and dFidelity/dtheta into grad_theta.
inline double fidelity_pass(const Batch& batch, const Matrix& t, const Classifier& clf, Matrix& grad_t,
                            std::span<double> grad_theta, std::size_t& clamp_events) {
  const std::size_t n = batch.size();
  const std::size_t c = t.rows();
  if (n == 0) throw ValueError("loss_and_grads: empty batch");
  if (clf.classes() != c) throw ShapeError("classifier and transition disagree on class count");
  if (batch.targets && (batch.targets->rows() != n || batch.targets->cols() != c))
    throw ShapeError("soft targets must be batch x C");
  if (!batch.targets && batch.labels.size() != n) throw ShapeError("batch labels length mismatch");

  Classifier::Trace trace;
  Vector q(c), dq(c), dh(c);
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    clf.forward(batch.x.row(s), trace);
    const Vector& h = trace.acts.back();
    for (std::size_t i = 0; i < c; ++i) {
      double v = 0.0;
      for (std::size_t k = 0; k < c; ++k) v += t(i, k) * h[k];
      q[i] = v;
    }
    std::fill(dq.begin(), dq.end(), 0.0);
    auto term = [&](std::size_t i, double weight) {
      if (weight == 0.0) return;
      if (q[i] < kProbabilityFloor) {
        ++clamp_events;
        total -= weight * std::log(kProbabilityFloor);
        return;
      }
      total -= weight * std::log(q[i]);
      dq[i] -= weight / q[i] * inv_n;
    };
    if (batch.targets) {
      for (std::size_t i = 0; i < c; ++i) term(i, (*batch.targets)(s, i));
    } else {
      if (batch.labels[s] >= c) throw ValueError("label out of range in batch");
      term(batch.labels[s], 1.0);
    }
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t k = 0; k < c; ++k) grad_t(i, k) += dq[i] * h[k];
    for (std::size_t k = 0; k < c; ++k) {
      double v = 0.0;
      for (std::size_t i = 0; i < c; ++i) v += t(i, k) * dq[i];
      dh[k] = v;
    }
    clf.backward(trace, dh, grad_theta);
  }
  return total * inv_n;
}

}  // namespace detail

// Loss and exact gradients with respect to both the transition weights and
// the classifier parameters.
inline LossAndGrads loss_and_grads(const Batch& batch, const TrainableTransition& tt, const Classifier& clf,
                                   double lambda) {
  const std::size_t c = tt.classes();
  const Matrix t = tt.realize_matrix();
  LossAndGrads r;
  r.grad_t = Matrix(c, c);
  r.grad_theta.assign(clf.num_params(), 0.0);
  r.fidelity = detail::fidelity_pass(batch, t, clf, r.grad_t, r.grad_theta, r.clamp_events);
  r.volume = signed_logdet(t);
  r.loss = r.fidelity;
  if (lambda != 0.0) {
    if (r.volume.sign == 0) throw NumericalError("transition matrix became singular");
    r.loss += lambda * r.volume.log_abs;
    r.grad_t += lambda * inverse_transpose(t);
  }
  r.grad_w = backward(tt, r.grad_t);
  return r;
}

// Fidelity and classifier gradient against a frozen transition: the
// classical forward-corrected loss. No volume term.
inline LossAndGrads loss_and_grads_fixed(const Batch& batch, const Matrix& t, const Classifier& clf) {
  const std::size_t c = t.rows();
  LossAndGrads r;
  r.grad_t = Matrix(c, c);
  r.grad_theta.assign(clf.num_params(), 0.0);
  r.fidelity = detail::fidelity_pass(batch, t, clf, r.grad_t, r.grad_theta, r.clamp_events);
  r.volume = signed_logdet(t);
  r.loss = r.fidelity;
  return r;
}

// ---------------------------------------------------------------------------
// Evaluation helpers

// Row-wise classifier outputs, n x C.
inline Matrix predict(const Classifier& clf, const Matrix& x) {
  Matrix out(x.rows(), clf.classes());
  Classifier::Trace trace;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    clf.forward(x.row(i), trace);
    auto r = out.row(i);
    std::copy(trace.acts.back().begin(), trace.acts.back().end(), r.begin());
  }
  return out;
}

inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

// Fraction of rows whose argmax of (t h(x)) equals the label.
inline double corrected_accuracy(const Classifier& clf, const Matrix& t, const Matrix& x, const Labels& y) {
  if (x.rows() == 0) return 0.0;
  const Matrix h = predict(clf, x);
  std::size_t hits = 0;
  Vector q(t.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    q = matvec(t, h.row(i));
    hits += argmax(q) == y[i];
  }
  return static_cast<double>(hits) / static_cast<double>(x.rows());
}

inline double accuracy(const Classifier& clf, const Matrix& x, const Labels& y) {
  return corrected_accuracy(clf, Matrix::identity(clf.classes()), x, y);
}

inline double corrected_loss(const Classifier& clf, const Matrix& t, const Matrix& x, const Labels& y) {
  if (x.rows() == 0) return 0.0;
  const Matrix h = predict(clf, x);
  double total = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const Vector q = matvec(t, h.row(i));
    total -= std::log(std::max(q[y[i]], kProbabilityFloor));
  }
  return total / static_cast<double>(x.rows());
}

// Mean over rows of max_k |h_k(x) - p_k(x)|.
inline double mean_posterior_gap(const Classifier& clf, const Matrix& x, const Matrix& posterior) {
  const Matrix h = predict(clf, x);
  double total = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double m = 0.0;
    for (std::size_t k = 0; k < h.cols(); ++k) m = std::max(m, std::abs(h(i, k) - posterior(i, k)));
    total += m;
  }
  return x.rows() ? total / static_cast<double>(x.rows()) : 0.0;
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
  std::size_t epoch = 0;          // 1-based
  double fidelity = 0.0;          // mean batch fidelity over the epoch
  SignedLogDet volume;            // of T-hat at the end of the epoch
  std::optional<double> est_error;
  double val_metric = 0.0;
  std::size_t det_sign_events = 0;  // steps in this epoch with sign(det T-hat) <= 0
  std::size_t clamp_events = 0;

  friend bool operator==(const EpochRecord& a, const EpochRecord& b) {
    return a.epoch == b.epoch && a.fidelity == b.fidelity && a.volume.sign == b.volume.sign &&
           a.volume.log_abs == b.volume.log_abs && a.est_error == b.est_error &&
           a.val_metric == b.val_metric && a.det_sign_events == b.det_sign_events &&
           a.clamp_events == b.clamp_events;
  }
};

struct TrainHistory {
  std::vector<EpochRecord> records;

  std::string to_csv() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "epoch,fidelity,logdet_sign,logabsdet,est_error,val_metric,det_sign_events\n";
    for (const auto& r : records) {
      os << r.epoch << ',' << r.fidelity << ',' << r.volume.sign << ',' << r.volume.log_abs << ',';
      if (r.est_error) os << *r.est_error;
      os << ',' << r.val_metric << ',' << r.det_sign_events << '\n';
    }
    return os.str();
  }

  friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

// How the transition participates in training.
struct TransitionSetup {
  std::optional<Matrix> frozen;  // when set, T is fixed and only the classifier trains
  std::optional<Matrix> true_t;  // for the est_error column
};

struct TrainResult {
  TrainableTransition transition;
  Classifier classifier;
  TrainHistory history;
  std::size_t best_epoch = 0;
  Matrix estimate;  // realized T-hat of the selected epoch (the frozen matrix when frozen)
};

// Raised when the loss turns NaN; carries the last parameters that produced
// a finite loss.
class TrainingAborted : public NumericalError {
 public:
  TrainingAborted(const std::string& what, TrainableTransition t, Classifier c, std::size_t epoch)
      : NumericalError(what), transition(std::move(t)), classifier(std::move(c)), epoch(epoch) {}
  TrainableTransition transition;
  Classifier classifier;
  std::size_t epoch;
};

inline Batch make_batch(const Dataset& ds, std::span<const std::size_t> idx, const Matrix* targets) {
  Batch b;
  const std::size_t d = ds.features();
  std::vector<double> xs;
  xs.reserve(idx.size() * d);
  const Labels& y = ds.noisy_labels();
  for (std::size_t i : idx) {
    auto r = ds.x.row(i);
    xs.insert(xs.end(), r.begin(), r.end());
    b.labels.push_back(y[i]);
  }
  b.x = Matrix(idx.size(), d, std::move(xs));
  if (targets) {
    Matrix t(idx.size(), targets->cols());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      auto src = targets->row(idx[k]);
      std::copy(src.begin(), src.end(), t.row(k).begin());
    }
    b.targets = std::move(t);
  }
  return b;
}

// Mini-batch training with a seeded per-epoch shuffle. Returns the
// parameters of the epoch that scores best on the noisy validation split
// (the last epoch if the split is empty). `soft_targets` (n_train x C)
// replaces the training labels in the fidelity term when given.
inline TrainResult train(const Dataset& train_set, const Dataset& val_set, const TrainConfig& config,
                         const TransitionSetup& setup = {}, const Matrix* soft_targets = nullptr) {
  config.validate();
  train_set.validate();
  if (train_set.size() == 0) throw ValueError("train: empty training set");
  (void)train_set.noisy_labels();
  const std::size_t c = train_set.classes;
  if (soft_targets && (soft_targets->rows() != train_set.size() || soft_targets->cols() != c))
    throw ShapeError("train: soft targets must be n_train x C");
  if (setup.frozen && (setup.frozen->rows() != c || setup.frozen->cols() != c))
    throw ShapeError("train: frozen transition has wrong shape");

  Classifier clf = Classifier::make(config.architecture, train_set.features(), config.hidden, c);
  clf.init_glorot(mix_seed(config.seed, 1));
  TrainableTransition tt(c, config.transition_init.value_or(default_transition_init(c)));

  Optimizer opt_theta(config.classifier_optimizer, clf.num_params());
  Optimizer opt_w(config.transition_optimizer, c * c);

  const bool has_val = val_set.size() > 0 && val_set.y_noisy.has_value();
  const bool maximize = config.selection_metric == SelectionMetric::noisy_val_accuracy;
  auto current_t = [&] { return setup.frozen ? *setup.frozen : tt.realize_matrix(); };
  auto score = [&](const Matrix& t) {
    if (!has_val) return 0.0;
    return maximize ? corrected_accuracy(clf, t, val_set.x, *val_set.y_noisy)
                    : corrected_loss(clf, t, val_set.x, *val_set.y_noisy);
  };

  TrainResult result{tt, clf, {}, 0, current_t()};
  double best = maximize ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
  const std::size_t n = train_set.size();
  std::vector<std::size_t> idx;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Engine eng = make_engine(config.seed, 0x65706f6368ULL + epoch);
    const auto perm = permutation(eng, n);
    const double scale = config.lr_scale(epoch - 1);
    EpochRecord rec;
    rec.epoch = epoch;
    double fid_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      const Batch batch = make_batch(train_set, {perm.data() + start, stop - start}, soft_targets);
      LossAndGrads g = setup.frozen ? loss_and_grads_fixed(batch, *setup.frozen, clf)
                                    : loss_and_grads(batch, tt, clf, config.lambda);
      if (!std::isfinite(g.loss)) {
        throw TrainingAborted("non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                                  std::to_string(start) + " (fidelity " + std::to_string(g.fidelity) + ")",
                              tt, clf, epoch);
      }
      if (!setup.frozen && g.volume.sign <= 0) ++rec.det_sign_events;
      rec.clamp_events += g.clamp_events;
      fid_sum += g.fidelity;
      ++batches;
      opt_theta.step(clf.params(), g.grad_theta, scale, true);
      if (!setup.frozen) {
        opt_w.step(tt.weights().data(), g.grad_w.data(), scale, false);
        for (std::size_t i = 0; i < c; ++i) tt.weights()(i, i) = 0.0;
      }
    }
    if (!clf.params().empty() && !detail::all_finite(clf.params()))
      throw TrainingAborted("classifier parameters became non-finite at epoch " + std::to_string(epoch),
                            result.transition, result.classifier, epoch);

    const Matrix t = current_t();
    rec.fidelity = fid_sum / static_cast<double>(batches);
    rec.volume = signed_logdet(t);
    if (setup.true_t) rec.est_error = estimation_error(*setup.true_t, t);
    rec.val_metric = score(t);
    result.history.records.push_back(rec);

    const bool better = !has_val || config.selection_metric == SelectionMetric::final_epoch ||
                        (maximize ? rec.val_metric > best : rec.val_metric < best);
    if (better) {
      best = rec.val_metric;
      result.transition = tt;
      result.classifier = clf;
      result.best_epoch = epoch;
      result.estimate = t;
    }
  }
  return result;
}

}  // namespace volmin
