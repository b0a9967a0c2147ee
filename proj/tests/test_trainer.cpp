#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "volmin/data.hpp"
#include "volmin/trainer.hpp"

using namespace volmin;

namespace {

Batch random_batch(Engine& eng, std::size_t n, std::size_t d, std::size_t c) {
  Batch b;
  b.x = oracle::random_matrix(eng, n, d);
  for (std::size_t i = 0; i < n; ++i) b.labels.push_back(uniform_index(eng, c));
  return b;
}

Matrix random_weights(Engine& eng, std::size_t c) {
  Matrix w = oracle::random_matrix(eng, c, c, -3.0, 0.5);
  for (std::size_t i = 0; i < c; ++i) w(i, i) = 0.0;
  return w;
}

// Independent loss evaluation: realize T, forward every row, sum logs.
double reference_loss(const Batch& b, const TrainableTransition& tt, const Classifier& clf, double lambda) {
  const Matrix t = tt.realize_matrix();
  double total = 0.0;
  for (std::size_t s = 0; s < b.size(); ++s) {
    const Vector h = clf.forward(b.x.row(s));
    double q = 0.0;
    for (std::size_t k = 0; k < h.size(); ++k) q += t(b.labels[s], k) * h[k];
    total -= std::log(q);
  }
  return total / static_cast<double>(b.size()) + lambda * std::log(std::abs(oracle::cofactor_det(t)));
}

// Linearly separable two-blob data with clean = noisy labels.
Dataset separable(std::size_t n, std::uint64_t seed) {
  Engine eng = make_engine(seed);
  Dataset ds;
  ds.classes = 2;
  Matrix x(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = i % 2;
    x(i, 0) = (y ? 2.0 : -2.0) + 0.5 * standard_normal(eng);
    x(i, 1) = standard_normal(eng);
    ds.y_clean.push_back(y);
  }
  ds.x = x;
  ds.y_noisy = ds.y_clean;
  return ds;
}

}  // namespace

TEST(Loss, LambdaZeroIsForwardCorrectedCrossEntropy) {
  auto eng = make_engine(30);
  const Batch b = random_batch(eng, 6, 3, 4);
  auto clf = Classifier::mlp(3, {5}, 4);
  clf.init_glorot(1);
  const TrainableTransition tt(random_weights(eng, 4));
  const auto r = loss_and_grads(b, tt, clf, 0.0);
  EXPECT_NEAR(r.loss, reference_loss(b, tt, clf, 0.0), 1e-13);
  EXPECT_EQ(r.loss, r.fidelity);
}

TEST(Loss, HandEvaluatedSinglePoint) {
  Batch b;
  b.x = Matrix{{0.7}};
  b.labels = {0};
  const auto clf = Classifier::softmax_linear(1, 2);  // zero parameters: h = (0.5, 0.5)
  const TrainableTransition tt(2, 0.0);                // entries 2/3, 1/3
  const auto r = loss_and_grads(b, tt, clf, 1e-4);
  EXPECT_NEAR(r.fidelity, std::log(2.0), 1e-15);
  EXPECT_NEAR(r.loss - r.fidelity, 1e-4 * std::log(1.0 / 3.0), 1e-17);
  EXPECT_NEAR(r.loss, 0.693147 - 1.0986e-4, 1e-6);
}

TEST(Loss, MatchesIndependentEvaluation) {
  auto eng = make_engine(31);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t c = 2 + rep % 4;
    const Batch b = random_batch(eng, 5, 2, c);
    auto clf = Classifier::mlp(2, {4}, c);
    clf.init_glorot(rep);
    const TrainableTransition tt(random_weights(eng, c));
    EXPECT_NEAR(loss_and_grads(b, tt, clf, 0.3).loss, reference_loss(b, tt, clf, 0.3), 1e-12);
  }
}

TEST(Loss, GradientsMatchFiniteDifferences) {
  auto eng = make_engine(32);
  for (auto arch : {Architecture::softmax_linear, Architecture::mlp}) {
    const std::size_t c = 3, d = 2;
    const Batch b = random_batch(eng, 4, d, c);
    auto clf = Classifier::make(arch, d, {4}, c);
    clf.init_glorot(3);
    TrainableTransition tt(random_weights(eng, c));
    const double lambda = 0.5;
    const auto r = loss_and_grads(b, tt, clf, lambda);

    std::vector<double> w(tt.weights().data().begin(), tt.weights().data().end());
    auto f_w = [&] { return reference_loss(b, TrainableTransition(Matrix(c, c, w)), clf, lambda); };
    for (std::size_t k = 0; k < w.size(); ++k) {
      if (k / c == k % c) continue;
      EXPECT_LT(oracle::rel_err(r.grad_w.data()[k], oracle::central_diff(w, k, 1e-6, f_w)), 1e-4);
    }
    std::vector<double> theta(clf.params().begin(), clf.params().end());
    auto f_theta = [&] {
      Classifier probe = clf;
      std::copy(theta.begin(), theta.end(), probe.params().begin());
      return reference_loss(b, tt, probe, lambda);
    };
    for (std::size_t k = 0; k < theta.size(); ++k)
      EXPECT_LT(oracle::rel_err(r.grad_theta[k], oracle::central_diff(theta, k, 1e-6, f_theta)), 1e-4);
  }
}

TEST(Loss, SoftOneHotTargetsEqualLabels) {
  auto eng = make_engine(33);
  Batch b = random_batch(eng, 5, 2, 3);
  auto clf = Classifier::mlp(2, {3}, 3);
  clf.init_glorot(4);
  const TrainableTransition tt(random_weights(eng, 3));
  const auto hard = loss_and_grads(b, tt, clf, 1e-4);
  Matrix onehot(5, 3);
  for (std::size_t i = 0; i < 5; ++i) onehot(i, b.labels[i]) = 1.0;
  b.targets = onehot;
  const auto soft = loss_and_grads(b, tt, clf, 1e-4);
  EXPECT_NEAR(soft.loss, hard.loss, 1e-15);
  EXPECT_LT(max_abs_diff(soft.grad_w, hard.grad_w), 1e-15);
}

TEST(Loss, FrozenTransitionHasNoVolumeTerm) {
  auto eng = make_engine(34);
  const Batch b = random_batch(eng, 4, 2, 3);
  auto clf = Classifier::mlp(2, {3}, 3);
  clf.init_glorot(5);
  const TrainableTransition tt(random_weights(eng, 3));
  const auto fixed = loss_and_grads_fixed(b, tt.realize_matrix(), clf);
  const auto full = loss_and_grads(b, tt, clf, 0.0);
  EXPECT_EQ(fixed.loss, full.loss);
  EXPECT_EQ(fixed.grad_theta, full.grad_theta);
}

TEST(Loss, RejectsMismatchedInputs) {
  Batch b;
  b.x = Matrix{{0.1, 0.2}};
  b.labels = {3};
  auto clf = Classifier::mlp(2, {3}, 3);
  EXPECT_THROW(loss_and_grads(b, TrainableTransition(3), clf, 0.0), ValueError);
  b.labels = {0};
  EXPECT_THROW(loss_and_grads(b, TrainableTransition(4), clf, 0.0), ShapeError);
}

TEST(TrainConfig, Defaults) {
  const TrainConfig c;
  EXPECT_EQ(c.lambda, 1e-4);
  EXPECT_EQ(c.transition_optimizer, OptimizerSpec::adam(1e-3));
  EXPECT_FALSE(c.transition_init.has_value());
  TrainConfig bad;
  bad.transition_optimizer.weight_decay = 1e-3;
  EXPECT_THROW(bad.validate(), ValueError);
  TrainConfig sched;
  sched.lr_schedule = {{10, 10.0}, {20, 10.0}};
  EXPECT_EQ(sched.lr_scale(9), 1.0);
  EXPECT_NEAR(sched.lr_scale(10), 0.1, 1e-15);
  EXPECT_NEAR(sched.lr_scale(25), 0.01, 1e-15);
}

TEST(Train, NoiseFreeErmOnSeparableData) {
  const Dataset tr = separable(1000, 1), va = separable(200, 2);
  TrainConfig cfg;
  cfg.lambda = 0.0;
  cfg.epochs = 50;
  cfg.architecture = Architecture::softmax_linear;
  TransitionSetup setup;
  setup.frozen = Matrix::identity(2);
  const auto r = train(tr, va, cfg, setup);
  EXPECT_GT(accuracy(r.classifier, tr.x, tr.y_clean), 0.95);
  EXPECT_EQ(r.estimate, Matrix::identity(2));
  EXPECT_EQ(r.history.records.size(), 50u);
}

TEST(Train, BitwiseDeterministicPerSeed) {
  const auto ds = gen_simplex_feature(3, 600, 0.9, SimplexProfile::edge_scattered, 3);
  Dataset noisy = ds;
  NoiseSpec ns;
  ns.kind = NoiseKind::pair;
  ns.rate = 0.3;
  ns.classes = 3;
  noisy.y_noisy = corrupt_labels(ds.y_clean, build_transition(ns), 4);
  const auto s = split(noisy, 0.1, 5);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 7;
  TransitionSetup setup;
  setup.true_t = build_transition(ns).matrix();
  const auto a = train(s.train, s.validation, cfg, setup);
  const auto b = train(s.train, s.validation, cfg, setup);
  EXPECT_EQ(a.history, b.history);
  EXPECT_EQ(a.history.to_csv(), b.history.to_csv());
  EXPECT_EQ(a.estimate, b.estimate);
  EXPECT_TRUE(std::equal(a.classifier.params().begin(), a.classifier.params().end(), b.classifier.params().begin()));
  cfg.seed = 8;
  EXPECT_NE(train(s.train, s.validation, cfg, setup).history, a.history);
  for (const auto& rec : a.history.records) EXPECT_TRUE(rec.est_error.has_value());
}

TEST(Train, SelectsBestValidationEpoch) {
  const auto ds = gen_simplex_feature(3, 400, 0.9, SimplexProfile::edge_scattered, 9);
  Dataset noisy = ds;
  noisy.y_noisy = ds.y_clean;
  const auto s = split(noisy, 0.2, 1);
  TrainConfig cfg;
  cfg.epochs = 8;
  const auto r = train(s.train, s.validation, cfg);
  double best = std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  for (const auto& rec : r.history.records)
    if (rec.val_metric < best) {
      best = rec.val_metric;
      arg = rec.epoch;
    }
  EXPECT_EQ(r.best_epoch, arg);
  EXPECT_NEAR(corrected_loss(r.classifier, r.estimate, s.validation.x, *s.validation.y_noisy), best, 1e-12);
}

TEST(Train, FinalSelectionKeepsLastEpoch) {
  const auto ds = gen_simplex_feature(3, 400, 0.9, SimplexProfile::edge_scattered, 9);
  Dataset noisy = ds;
  noisy.y_noisy = ds.y_clean;
  const auto s = split(noisy, 0.2, 1);
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.selection_metric = parse_selection_metric("final");
  const auto r = train(s.train, s.validation, cfg);
  EXPECT_EQ(r.best_epoch, 6u);
  cfg.epochs = 7;
  const auto longer = train(s.train, s.validation, cfg);
  EXPECT_EQ(longer.history.records[5], r.history.records[5]);
  EXPECT_EQ(r.estimate, r.transition.realize_matrix());
  EXPECT_EQ(to_string(SelectionMetric::final_epoch), "final");
}

TEST(Train, HistoryCsvLayout) {
  TrainHistory h;
  EpochRecord r;
  r.epoch = 1;
  r.fidelity = 0.5;
  r.volume = {1, -0.25};
  r.val_metric = 0.75;
  h.records.push_back(r);
  EXPECT_EQ(h.to_csv(), "epoch,fidelity,logdet_sign,logabsdet,est_error,val_metric,det_sign_events\n1,0.5,1,-0.25,,0.75,0\n");
}
