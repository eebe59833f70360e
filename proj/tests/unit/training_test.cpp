#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "monde/data.hpp"
#include "monde/errors.hpp"
#include "monde/training.hpp"

namespace monde {
namespace {

ModelSpec tiny(Family family, int D, int K) {
  ModelSpec s;
  s.family = family;
  s.covariates = D;
  s.responses = K;
  s.x_widths = {8};
  s.y_widths = {8, 8};
  s.made_blocks = 4;
  s.hx_widths = {8};
  s.hxy_widths = {8};
  s.t_widths = {8};
  s.corr_widths = {4};
  return s;
}

Dataset sin_data(long n, std::uint64_t seed) {
  return split_standardize(gen_synthetic({GeneratorKind::sin_normal, n, seed}), {0.6, 0.2, 0.2}, seed);
}

TEST(Adam, ZeroGradientLeavesEverythingUnchanged) {
  std::vector<double> p{1.0, -2.0}, g{0.0, 0.0};
  OptimState s(2);
  adam_step(p, g, s, TrainConfig{});
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0}));
  EXPECT_EQ(s.m, (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(s.v, (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(s.step, 1);
}

TEST(Adam, FirstStepMagnitude) {
  std::vector<double> p{0.0}, g{1.0};
  OptimState s(1);
  adam_step(p, g, s, TrainConfig{});
  // Bias-corrected moments are exactly g and g^2, so the step is lr * 1 / (1 + eps).
  EXPECT_LE(std::abs(p[0]), 0.001);
  EXPECT_GE(std::abs(p[0]), 0.000999);
  EXPECT_DOUBLE_EQ(p[0], -0.001 / (1.0 + 1e-7));
}

TEST(Adam, Deterministic) {
  std::vector<double> a{0.3, 0.7}, b = a, g{0.2, -1.5};
  OptimState sa(2), sb(2);
  for (int i = 0; i < 3; ++i) {
    adam_step(a, g, sa, TrainConfig{});
    adam_step(b, g, sb, TrainConfig{});
  }
  EXPECT_EQ(a, b);
  EXPECT_EQ(sa.m, sb.m);
}

TEST(Adam, RejectsNonFinite) {
  std::vector<double> p{1.0}, g{std::nan("")};
  OptimState s(1);
  EXPECT_THROW(adam_step(p, g, s, TrainConfig{}), NonFiniteGradient);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(s.step, 0);
}

TEST(TrainConfig, ValidationNamesField) {
  TrainConfig c;
  c.early_stop_patience = 0;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.path(), "training.early_stop_patience");
  }
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Train, ZeroLearningRateKeepsParameters) {
  const auto ds = sin_data(300, 1);
  auto model = make_model(tiny(Family::umonde, 1, 1), 2);
  const auto before = std::vector<double>(model->params().values().begin(), model->params().values().end());
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.max_epochs = 2;
  train(*model, ds, cfg);
  const auto after = model->params().values();
  ASSERT_EQ(before.size(), after.size());
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i], after[i]);
}

TEST(Train, ImprovesAndReturnsBestEpoch) {
  const auto ds = sin_data(2000, 3);
  auto model = make_model(tiny(Family::umonde, 1, 1), 4);
  const double initial = evaluate_split(*model, ds, Split::validation).mean;
  TrainConfig cfg;
  cfg.max_epochs = 15;
  cfg.learning_rate = 5e-3;
  const auto h = train(*model, ds, cfg);
  ASSERT_EQ(h.epochs.size(), 15u);
  const double final_val = evaluate_split(*model, ds, Split::validation).mean;
  EXPECT_GT(final_val, initial);
  EXPECT_NEAR(final_val, h.best_val_ll, 1e-12);
  for (const auto& e : h.epochs) EXPECT_GE(final_val, e.val_ll - 1e-12);
  for (std::size_t i = 1; i < h.epochs.size(); ++i) {
    EXPECT_EQ(h.epochs[i].epoch, h.epochs[i - 1].epoch + 1);
    EXPECT_GE(h.epochs[i].batch_size, h.epochs[i - 1].batch_size);
  }
}

TEST(Train, InjectedNanRestartsWithDoubledBatch) {
  const auto ds = sin_data(1000, 5);
  auto model = make_model(tiny(Family::umonde, 1, 1), 6);
  TrainConfig cfg;
  cfg.max_epochs = 5;
  cfg.batch_size = 32;
  TrainHooks hooks;
  hooks.inject_nan = [](int epoch, long batch) { return epoch == 3 && batch == 2; };
  const auto h = train(*model, ds, cfg, hooks);
  ASSERT_EQ(h.epochs.size(), 5u);
  EXPECT_EQ(h.restarts(), 1);
  EXPECT_EQ(h.epochs[2].event, "restart");
  EXPECT_EQ(h.epochs[1].batch_size, 32);
  EXPECT_EQ(h.epochs[2].batch_size, 64);
  EXPECT_TRUE(std::isnan(h.epochs[2].val_ll));
  EXPECT_EQ(h.epochs[4].batch_size, 64);
}

TEST(Train, DivergesAtCap) {
  const auto ds = sin_data(200, 7);
  auto model = make_model(tiny(Family::umonde, 1, 1), 8);
  TrainConfig cfg;
  cfg.max_epochs = 20;
  cfg.batch_size = 60;
  TrainHooks hooks;
  hooks.inject_nan = [](int epoch, long) { return epoch >= 2; };
  // Train split has 120 rows: 60 -> restart at 120 -> failure at cap -> second failure at cap.
  EXPECT_THROW(train(*model, ds, cfg, hooks), TrainingDiverged);
}

TEST(Train, PlateauDoublesBatch) {
  const auto ds = sin_data(600, 9);
  auto model = make_model(tiny(Family::umonde, 1, 1), 10);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;  // validation never improves
  cfg.max_epochs = 25;
  cfg.batch_size = 16;
  cfg.plateau_patience = 3;
  cfg.early_stop_patience = 8;
  const auto h = train(*model, ds, cfg);
  ASSERT_EQ(h.epochs.size(), 8u);
  EXPECT_EQ(h.epochs[2].event, "plateau-double");
  EXPECT_EQ(h.epochs[2].batch_size, 32);
  EXPECT_EQ(h.epochs[5].batch_size, 64);
  EXPECT_EQ(h.epochs[7].event, "early-stop");
  EXPECT_EQ(h.best_epoch, 0);
}

TEST(Train, HistoryDeterministic) {
  const auto ds = split_standardize(gen_synthetic({GeneratorKind::mv_nonlinear, 600, 11}), {0.6, 0.2, 0.2}, 11);
  auto run = [&] {
    auto model = make_model(tiny(Family::pumonde, 1, 2), 12);
    TrainConfig cfg;
    cfg.max_epochs = 3;
    cfg.seed = 13;
    auto h = train(*model, ds, cfg);
    return std::make_pair(h.to_csv(), std::vector<double>(model->params().values().begin(),
                                                          model->params().values().end()));
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  EXPECT_EQ(a.first.substr(0, a.first.find('\n')), "epoch,train_loss,val_ll,batch_size,event");
}

TEST(Train, CopulaSnapshotMatchesRecordedValidation) {
  GeneratorSpec g{GeneratorKind::bivariate_gaussian, 800, 14};
  const auto ds = split_standardize(gen_synthetic(g), {0.6, 0.2, 0.2}, 14);
  auto model = make_model(tiny(Family::copula_const, 0, 2), 15);
  TrainConfig cfg;
  cfg.max_epochs = 4;
  cfg.learning_rate = 5e-3;
  const auto h = train(*model, ds, cfg);
  EXPECT_NEAR(evaluate_split(*model, ds, Split::validation).mean, h.best_val_ll, 1e-12);
}

TEST(Evaluate, SummaryExamples) {
  const auto one = summarize(Eigen::VectorXd::Constant(1, -1.0));
  EXPECT_EQ(one.mean, -1.0);
  EXPECT_EQ(one.std_error, 0.0);
  EXPECT_EQ(summarize(Eigen::Vector2d(-1.0, -3.0)).mean, -2.0);

  Eigen::VectorXd v(5);
  v << 0.5, -1.25, 3.0, 2.0, -0.75;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= 5.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  EXPECT_NEAR(summarize(v).std_error, std::sqrt(ss / 4.0) / std::sqrt(5.0), 1e-15);
}

TEST(Evaluate, OriginalUnitsShiftByLogSd) {
  const auto ds = split_standardize(gen_synthetic({GeneratorKind::mv_nonlinear, 500, 16}), {0.6, 0.2, 0.2}, 16);
  auto umonde = make_model(tiny(Family::copula_const, 1, 2), 17);
  auto pumonde = make_model(tiny(Family::pumonde, 1, 2), 17);
  const double shift = std::log(ds.stats.y_sd[0]) + std::log(ds.stats.y_sd[1]);
  for (const auto* m : {umonde.get(), pumonde.get()}) {
    const auto s = evaluate_split(*m, ds, Split::test);
    const auto o = evaluate_split(*m, ds, Split::test, true);
    EXPECT_NEAR(s.mean - o.mean, m->log_sd_multiplicity() * shift, 1e-10);
  }
  EXPECT_EQ(pumonde->log_sd_multiplicity(), 1.0);
}

}  // namespace
}  // namespace monde
