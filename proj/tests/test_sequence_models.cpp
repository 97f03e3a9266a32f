#include <algorithm>
#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "model_fixtures.hpp"
#include "pseudolab/metrics.hpp"

namespace pseudolab {
namespace {

double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }

TEST(Lstm, MatchesHandComputedCell) {
  std::mt19937_64 rng(1);
  seq::LstmSpec spec{1, 1, 1, 0.0};
  seq::LstmClassifier m(spec, rng);
  const double wi[4] = {0.5, -0.3, 0.8, 0.1};
  const double wh[4] = {0.2, 0.4, -0.6, 0.7};
  const double b[4] = {0.05, 1.0, -0.1, 0.0};
  std::copy(wi, wi + 4, m.layers[0].w_ih.data().begin());
  std::copy(wh, wh + 4, m.layers[0].w_hh.data().begin());
  std::copy(b, b + 4, m.layers[0].bias.data().begin());
  m.head.weight.data()[0] = 1.5;
  m.head.bias.data()[0] = -0.2;

  const double xs[3] = {0.3, -1.2, 0.9};
  double h = 0.0, c = 0.0;
  for (double x : xs) {
    const double i = sig(wi[0] * x + wh[0] * h + b[0]);
    const double f = sig(wi[1] * x + wh[1] * h + b[1]);
    const double g = std::tanh(wi[2] * x + wh[2] * h + b[2]);
    const double o = sig(wi[3] * x + wh[3] * h + b[3]);
    c = f * c + i * g;
    h = o * std::tanh(c);
  }
  const double expected = 1.5 * h - 0.2;
  nn::Tensor x({1, 3, 1}, {xs[0], xs[1], xs[2]});
  EXPECT_NEAR(m.forward(x, false, rng).item(), expected, 1e-14);
}

TEST(Lstm, RejectsWrongWidth) {
  std::mt19937_64 rng(1);
  seq::LstmClassifier m({3, 4, 1, 0.0}, rng);
  EXPECT_THROW((void)m.forward(nn::Tensor::zeros({2, 5, 4}), false, rng), ShapeError);
}

TEST(Gradients, LstmMatchesFiniteDifferences) {
  for (std::uint64_t seed : {1u, 2u}) EXPECT_LT(testing::sequence_gradcheck(ModelKind::lstm, seed), 1e-3);
}

TEST(Gradients, TransformerWithDiscrepancyMatchesFiniteDifferences) {
  for (std::uint64_t seed : {1u, 2u}) EXPECT_LT(testing::sequence_gradcheck(ModelKind::transformer, seed), 1e-3);
}

TEST(Transformer, SinusoidalEncoding) {
  const auto pe = seq::sinusoidal_encoding(4, 6);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(pe.data()[i], i % 2 == 0 ? 0.0 : 1.0);
  EXPECT_DOUBLE_EQ(pe.data()[2 * 6 + 0], std::sin(2.0));
  EXPECT_DOUBLE_EQ(pe.data()[3 * 6 + 3], std::cos(3.0 * std::pow(10000.0, -2.0 / 6.0)));
}

TEST(Transformer, AssociationsAreRowStochastic) {
  auto cfg = testing::toy_config(ModelKind::transformer, 3);
  const auto m = make_classifier(ModelKind::transformer, 4, cfg);
  std::mt19937_64 rng(5);
  const auto x = testing::random_tensor({2, 6, 4}, rng, -1, 1, false);
  const auto out = m.transformer.forward(x, false, rng, true, true);
  ASSERT_EQ(out.associations.size(), cfg.encoder_layers);
  EXPECT_GE(out.discrepancy.item(), 0.0);
  for (const auto& a : out.associations) {
    ASSERT_EQ(a.series.shape(), (nn::Shape{4, 6, 6}));
    ASSERT_EQ(a.prior.shape(), (nn::Shape{4, 6, 6}));
    for (std::size_t r = 0; r < 4 * 6; ++r) {
      double s = 0.0, p = 0.0;
      std::size_t argmax = 0;
      for (std::size_t j = 0; j < 6; ++j) {
        s += a.series.data()[r * 6 + j];
        p += a.prior.data()[r * 6 + j];
        if (a.prior.data()[r * 6 + j] > a.prior.data()[r * 6 + argmax]) argmax = j;
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
      EXPECT_NEAR(p, 1.0, 1e-12);
      EXPECT_EQ(argmax, r % 6);  // the prior peaks on the diagonal
    }
  }
}

TEST(Transformer, HeadsMustDivideModelWidth) {
  auto cfg = testing::toy_config(ModelKind::transformer, 1);
  cfg.heads = 3;
  EXPECT_THROW(make_classifier(ModelKind::transformer, 4, cfg), ConfigError);
  EXPECT_THROW(make_classifier(ModelKind::hybrid, 4, cfg), ConfigError);
}

TEST(Defaults, LstmTables) {
  const auto decl = default_train_config(ModelKind::lstm, Preset::declaration, LabelKind::iforest);
  EXPECT_EQ(decl.window_size, 100u);
  EXPECT_EQ(decl.batch_size, 64u);
  EXPECT_EQ(decl.pos_weight, 30.0);
  EXPECT_EQ(decl.weight_decay, 0.001);
  EXPECT_EQ(decl.learning_rate, 0.005);
  EXPECT_EQ(decl.patience, 7);
  EXPECT_EQ(decl.dropout, 0.5);
  EXPECT_EQ(decl.scheduler, nn::SchedulerKind::reduce_on_plateau);
  EXPECT_EQ(default_train_config(ModelKind::lstm, Preset::declaration, LabelKind::ae).pos_weight, 30.0);
  const auto orig = default_train_config(ModelKind::lstm, Preset::declaration, LabelKind::original);
  EXPECT_EQ(orig.pos_weight, 10.0);
  EXPECT_EQ(orig.lstm_layers, 1u);
  const auto op = default_train_config(ModelKind::lstm, Preset::operation, LabelKind::iforest);
  EXPECT_EQ(op.window_size, 50u);
  EXPECT_EQ(op.learning_rate, 0.0005);
  EXPECT_EQ(default_train_config(ModelKind::lstm, Preset::operation, LabelKind::original).window_size, 100u);
}

TEST(Defaults, TransformerTables) {
  const auto d = default_train_config(ModelKind::transformer, Preset::declaration, LabelKind::ae);
  EXPECT_EQ(d.window_size, 100u);
  EXPECT_EQ(d.pos_weight, 40.0);
  EXPECT_EQ(d.learning_rate, 1e-4);
  EXPECT_EQ(d.patience, 5);
  EXPECT_EQ(d.dropout, 0.0);
  EXPECT_EQ(d.weight_decay, 0.0);
  EXPECT_EQ(d.scheduler, nn::SchedulerKind::halve_each_epoch);
  const auto dorig = default_train_config(ModelKind::transformer, Preset::declaration, LabelKind::original);
  EXPECT_EQ(dorig.pos_weight, 20.0);
  EXPECT_EQ(dorig.patience, 10);
  const auto o = default_train_config(ModelKind::transformer, Preset::operation, LabelKind::iforest);
  EXPECT_EQ(o.window_size, 50u);
  EXPECT_EQ(o.pos_weight, 20.0);
  EXPECT_EQ(o.learning_rate, 1e-4);
  EXPECT_EQ(o.patience, 10);
  const auto oorig = default_train_config(ModelKind::transformer, Preset::operation, LabelKind::original);
  EXPECT_EQ(oorig.window_size, 100u);
  EXPECT_EQ(oorig.pos_weight, 10.0);
  EXPECT_EQ(oorig.learning_rate, 5e-4);
}

TEST(Config, JsonOverridesAndRejectsUnknownKeys) {
  auto c = default_train_config(ModelKind::lstm, Preset::declaration, LabelKind::iforest);
  apply_json(c, {{"window_size", 20}, {"scheduler", "none"}});
  EXPECT_EQ(c.window_size, 20u);
  EXPECT_EQ(c.scheduler, nn::SchedulerKind::none);
  EXPECT_THROW(apply_json(c, {{"windowsize", 20}}), ConfigError);
  EXPECT_THROW(apply_json(c, {{"window_size", "big"}}), ConfigError);
  TrainConfig back;
  apply_json(back, to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(Threshold, SweepPicksBestF1) {
  EXPECT_EQ(select_threshold({0.9, 0.8, 0.3, 0.1}, {1, 0, 1, 0}), 0.3);
  // F1 2/3 at both 0.9 and 0.6: the larger threshold wins.
  EXPECT_EQ(select_threshold({0.9, 0.8, 0.7, 0.6}, {1, 0, 0, 1}), 0.9);
  EXPECT_EQ(select_threshold({0.9, 0.2}, {0, 0}), 0.5);
  EXPECT_EQ(apply_threshold({0.3, 0.29, 0.8}, 0.3), (Labels{1, 0, 1}));
  EXPECT_THROW(select_threshold({0.1}, {1, 0}), ArgumentError);
}

double val_f1(const TrainResult& r, const WindowedDataset& val) {
  return compute_metrics(apply_threshold(predict_proba(r.model, val), 0.5), val.labels).f1;
}

TEST(Training, SeparableDataIsLearned) {
  const auto d = testing::separable_windows(11);
  for (auto kind : {ModelKind::lstm, ModelKind::transformer}) {
    const auto r = train_classifier(kind, d.train, d.val, testing::separable_config(kind, 11));
    EXPECT_EQ(val_f1(r, d.val), 1.0) << to_string(kind);
    EXPECT_FALSE(r.degenerate_labels);
    EXPECT_FALSE(r.trace.empty());
  }
}

TEST(Training, DeterministicAndSerializable) {
  const auto d = testing::separable_windows(2);
  auto cfg = testing::separable_config(ModelKind::lstm, 5);
  cfg.max_epochs = 3;
  cfg.lstm_layers = 2;
  cfg.dropout = 0.5;
  cfg.shuffle = true;
  const auto a = train_classifier(ModelKind::lstm, d.train, d.val, cfg);
  const auto b = train_classifier(ModelKind::lstm, d.train, d.val, cfg);
  EXPECT_EQ(a.trace, b.trace);
  EXPECT_EQ(to_json(a.model), to_json(b.model));
  const auto back = classifier_from_json(nlohmann::json::parse(to_json(a.model).dump()));
  EXPECT_EQ(predict_logits(back, d.val), predict_logits(a.model, d.val));
}

TEST(Training, TraceRecordsLearningRatePerEpoch) {
  const auto d = testing::separable_windows(4);
  auto cfg = testing::separable_config(ModelKind::transformer, 4);
  cfg.max_epochs = 3;
  cfg.scheduler = nn::SchedulerKind::halve_each_epoch;
  cfg.learning_rate = 1e-3;
  cfg.patience = 50;
  const auto r = train_classifier(ModelKind::transformer, d.train, d.val, cfg);
  ASSERT_EQ(r.trace.size(), 3u);
  EXPECT_EQ(r.trace[0].lr, 1e-3);
  EXPECT_EQ(r.trace[1].lr, 5e-4);
  EXPECT_EQ(r.trace[2].lr, 2.5e-4);
  std::ostringstream os;
  nn::write_trace_csv(os, r.trace);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "epoch,train_loss,val_loss,lr");
}

TEST(Training, AllNegativeLabelsAreFlagged) {
  auto d = testing::separable_windows(6);
  std::fill(d.train.labels.begin(), d.train.labels.end(), 0);
  auto cfg = testing::separable_config(ModelKind::lstm, 1);
  cfg.max_epochs = 2;
  const auto r = train_classifier(ModelKind::lstm, d.train, d.val, cfg);
  EXPECT_TRUE(r.degenerate_labels);
  WindowedDataset empty;
  EXPECT_THROW(train_classifier(ModelKind::lstm, empty, d.val, cfg), TrainingError);
}

}  // namespace
}  // namespace pseudolab
