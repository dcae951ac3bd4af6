#include <gtest/gtest.h>

#include <random>

#include "alc/synth.hpp"
#include "alc/train_eval.hpp"
#include "oracles.hpp"

namespace ev = alc::eval;
namespace zoo = alc::zoo;
namespace prep = alc::prep;

namespace {

prep::Dataset small_synth(std::size_t subjects = 4, std::size_t per_class = 10, std::size_t channels = 3) {
  alc::synth::SynthSpec s;
  s.n_subjects = subjects;
  s.windows_per_class_per_subject = per_class;
  s.channels = channels;
  s.window_length = 32;
  s.sample_rate_hz = 20;
  return alc::synth::generate(s);
}

std::vector<std::size_t> all_indices(const prep::Dataset& ds) {
  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

ev::ConfusionMatrix matrix(std::array<std::array<std::uint64_t, 3>, 3> c) {
  ev::ConfusionMatrix cm;
  cm.counts = c;
  return cm;
}

TEST(Train, ZeroEpochsLeavesParametersUntouched) {
  auto ds = small_synth();
  auto m = zoo::build({zoo::ModelKind::CNN, 3, 32, 3}, 1);
  const auto before = zoo::export_model(m);
  ev::Hyperparams hp;
  hp.epochs = 0;
  EXPECT_TRUE(ev::train(m, ds, all_indices(ds), hp).empty());
  EXPECT_EQ(zoo::export_model(m), before);
}

TEST(Train, MlpLossDecreasesOnSynthetic) {
  auto ds = small_synth();
  prep::apply_normalizer(prep::fit_normalizer(ds), ds);
  auto m = zoo::build({zoo::ModelKind::MLP, 3, 32, 3}, 2);
  ev::Hyperparams hp;
  hp.seed = 3;
  const auto hist = ev::train(m, ds, all_indices(ds), hp);
  ASSERT_EQ(hist.size(), 15u);
  EXPECT_LT(hist.back(), hist.front());
}

TEST(Train, SameSeedSameHistory) {
  auto ds = small_synth();
  ev::Hyperparams hp;
  hp.epochs = 3;
  hp.seed = 11;
  auto a = zoo::build({zoo::ModelKind::RESNET1D, 3, 32, 3}, 5);
  auto b = zoo::build({zoo::ModelKind::RESNET1D, 3, 32, 3}, 5);
  EXPECT_EQ(ev::train(a, ds, all_indices(ds), hp), ev::train(b, ds, all_indices(ds), hp));
  EXPECT_EQ(zoo::export_model(a), zoo::export_model(b));
}

TEST(Train, Errors) {
  auto ds = small_synth();
  auto m = zoo::build({zoo::ModelKind::MLP, 3, 32, 3}, 2);
  EXPECT_THROW(ev::train(m, ds, {}, ev::Hyperparams{}), alc::EmptySetError);
  ev::Hyperparams hp;
  hp.batch_size = 0;
  EXPECT_THROW(ev::train(m, ds, all_indices(ds), hp), alc::ParamError);
}

TEST(Metrics, WorkedMatrix) {
  const auto cm = matrix({{{1, 1, 0}, {0, 2, 0}, {0, 0, 2}}});
  EXPECT_NEAR(ev::accuracy(cm), 0.8333, 1e-4);
  EXPECT_NEAR(ev::macro_f1(cm), 0.8222, 1e-4);
  EXPECT_DOUBLE_EQ(ev::macro_f1(cm), (2.0 / 3 + 0.8 + 1.0) / 3);
}

TEST(Metrics, IdentityAndAbsentClass) {
  EXPECT_EQ(ev::macro_f1(matrix({{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}})), 1.0);
  // High never occurs nor is predicted: its F1 counts as 0
  EXPECT_DOUBLE_EQ(ev::macro_f1(matrix({{{3, 0, 0}, {0, 3, 0}, {0, 0, 0}}})), 2.0 / 3);
  EXPECT_THROW(ev::accuracy(ev::ConfusionMatrix{}), alc::EmptySetError);
}

TEST(Metrics, AgreeWithScalarOracle) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 1000; ++trial) {
    std::array<std::array<std::uint64_t, 3>, 3> c{};
    for (auto& row : c)
      for (auto& v : row) v = rng() % 4 == 0 ? 0 : rng() % 20;
    c[rng() % 3][rng() % 3] += 1;  // never empty
    const auto want = alc::testing::scalar_metrics(c);
    EXPECT_NEAR(ev::accuracy(matrix(c)), want.accuracy, 1e-12);
    EXPECT_NEAR(ev::macro_f1(matrix(c)), want.macro_f1, 1e-12);
  }
}

TEST(RowNormalize, ReportedHighRows) {
  // High row at a scale of 100 and 1000 windows
  auto pct = ev::row_normalize(matrix({{{0, 0, 0}, {0, 0, 0}, {14, 33, 53}}}));
  EXPECT_NEAR(pct[2][0], 14.0, 1e-12);
  EXPECT_NEAR(pct[2][1], 33.0, 1e-12);
  EXPECT_NEAR(pct[2][2], 53.0, 1e-12);
  pct = ev::row_normalize(matrix({{{0, 0, 0}, {0, 0, 0}, {79, 59, 862}}}));
  EXPECT_NEAR(pct[2][0], 7.9, 1e-12);
  EXPECT_NEAR(pct[2][1], 5.9, 1e-12);
  EXPECT_NEAR(pct[2][2], 86.2, 1e-12);
  EXPECT_EQ(pct[0], (std::array<double, 3>{0, 0, 0}));
}

TEST(RowNormalize, RowsSumToHundred) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    std::array<std::array<std::uint64_t, 3>, 3> c{};
    for (auto& row : c)
      for (auto& v : row) v = rng() % 50;
    const auto pct = ev::row_normalize(matrix(c));
    for (std::size_t r = 0; r < 3; ++r) {
      if (c[r][0] + c[r][1] + c[r][2] == 0) continue;
      EXPECT_NEAR(pct[r][0] + pct[r][1] + pct[r][2], 100.0, 1e-9);
    }
  }
}

TEST(Argmax, TiesGoLow) {
  alc::nn::Tensor t({2, 3}, {1, 1, 0, 0, 2, 2});
  EXPECT_EQ(ev::argmax_rows(t), (std::vector<int>{0, 1}));
}

TEST(Evaluate, TotalConservedAndOrderInvariant) {
  auto ds = small_synth();
  auto m = zoo::build({zoo::ModelKind::CNN, 3, 32, 3}, 9);
  auto idx = all_indices(ds);
  const auto a = ev::evaluate(m, ds, idx);
  EXPECT_EQ(a.confusion.total(), ds.size());
  std::mt19937_64 rng(1);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto b = ev::evaluate(m, ds, idx);
  EXPECT_EQ(a.confusion, b.confusion);
  // accuracy matches direct prediction counting
  const auto pred = ev::predict(m, ds, idx);
  double correct = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) correct += pred[i] == static_cast<int>(ds.examples[idx[i]].label);
  EXPECT_DOUBLE_EQ(b.accuracy, correct / static_cast<double>(idx.size()));
  EXPECT_THROW(ev::evaluate(m, ds, {}), alc::EmptySetError);
}

TEST(Evaluate, ConstantPredictorOnBalancedSet) {
  auto ds = small_synth();
  auto m = zoo::build({zoo::ModelKind::MLP, 3, 32, 3}, 9);
  // zero the weights and make the Low logit largest
  for (auto* p : m.parameters()) p->value.fill(0.0);
  auto params = m.parameters();
  params.back()->value[0] = 1.0;  // output bias
  const auto r = ev::evaluate(m, ds, all_indices(ds));
  EXPECT_NEAR(r.accuracy, 1.0 / 3, 1e-12);
  EXPECT_EQ(r.per_class_recall, (std::array<double, 3>{1, 0, 0}));
}

TEST(RunExperiment, PerSubjectScoresOrderedAndDeterministic) {
  const auto ds = small_synth(9, 5);
  ev::Hyperparams hp;
  hp.epochs = 2;
  hp.seed = 4;
  const auto a = ev::run_experiment(prep::SensorConfig::WO, zoo::ModelKind::MLP, ds, hp, ev::Protocol::Random80_20, 2);
  ASSERT_EQ(a.per_subject.size(), 18u);
  for (std::size_t i = 0; i < 18; ++i) {
    EXPECT_EQ(a.per_subject[i].subject, i / 2 + 1);
    EXPECT_EQ(a.per_subject[i].repeat, i % 2);
  }
  EXPECT_EQ(a.overall.confusion.total(), 27u);
  const auto b = ev::run_experiment(prep::SensorConfig::WO, zoo::ModelKind::MLP, ds, hp, ev::Protocol::Random80_20, 2);
  for (std::size_t i = 0; i < 18; ++i) EXPECT_EQ(a.per_subject[i].macro_f1, b.per_subject[i].macro_f1);
  const auto one = ev::run_experiment(prep::SensorConfig::WO, zoo::ModelKind::MLP, ds, hp, ev::Protocol::Random80_20, 1);
  EXPECT_EQ(one.per_subject.size(), 9u);
}

TEST(RunExperiment, LosoTrainsOneModelPerSubject) {
  const auto ds = small_synth(3, 4);
  ev::Hyperparams hp;
  hp.epochs = 1;
  const auto r = ev::run_experiment(prep::SensorConfig::WO, zoo::ModelKind::MLP, ds, hp, ev::Protocol::Loso, 2);
  EXPECT_EQ(r.loss_history.size(), 3u);
  EXPECT_EQ(r.overall.confusion.total(), ds.size());
  EXPECT_EQ(r.per_subject.size(), 6u);
}

TEST(RunExperiment, SynthMlpSeparatesClasses) {
  const auto ds = small_synth(4, 20, 6);
  ev::Hyperparams hp;
  hp.seed = 1;
  const auto r = ev::run_experiment(prep::SensorConfig::W6, zoo::ModelKind::MLP, ds, hp, ev::Protocol::Random80_20, 1);
  EXPECT_GE(r.overall.accuracy, 0.95);
}

TEST(Seeds, DerivationSeparatesTags) {
  EXPECT_NE(ev::derive_seed(1, {2, 3}), ev::derive_seed(1, {3, 2}));
  EXPECT_NE(ev::derive_seed(1, {2}), ev::derive_seed(2, {2}));
  EXPECT_EQ(ev::derive_seed(7, {1, 2}), ev::derive_seed(7, {1, 2}));
}

}  // namespace
