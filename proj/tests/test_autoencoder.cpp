#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "pseudolab/autoencoder.hpp"

namespace pseudolab {
namespace {

FeatureMatrix uniform_rows(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < cols; ++c) names.push_back("f" + std::to_string(c));
  FeatureMatrix m(rows, names, std::vector<ColumnKind>(cols, ColumnKind::numeric_scaled));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.2, 0.5);
  for (auto& v : m.values) v = u(rng);
  return m;
}

AutoencoderConfig quick(std::uint64_t seed) {
  auto c = default_ae_config(Preset::declaration);
  c.max_epochs = 5;
  c.seed = seed;
  return c;
}

TEST(Reconstruction, ErrorArithmetic) {
  auto m = make_autoencoder(2, quick(1));
  // Zero weights and biases give x_hat = sigmoid(0) = 0.5 everywhere.
  for (const auto& p : m.parameters().tensors()) std::fill(p.data().begin(), p.data().end(), 0.0);
  const double x[] = {1.0, 0.0};
  EXPECT_DOUBLE_EQ(reconstruction_error(m, x), 0.5);
  const double half[] = {0.5, 0.5};
  EXPECT_EQ(reconstruction_error(m, half), 0.0);
  const double wrong[] = {0.5};
  EXPECT_THROW((void)reconstruction_error(m, wrong), ArgumentError);
}

TEST(Reconstruction, BatchMatchesLoopOracle) {
  const auto X = uniform_rows(300, 7, 3);
  const auto m = fit_ae(X, quick(3));
  const auto batch = reconstruction_errors(m, X);
  for (std::size_t r = 0; r < X.rows; ++r) EXPECT_NEAR(batch[r], reconstruction_error(m, X.row(r)), 1e-14);
  for (double e : batch) EXPECT_GE(e, 0.0);
}

TEST(Fit, ThresholdIsNearestRankPercentile) {
  const auto X = uniform_rows(1000, 6, 5);
  const auto m = fit_ae(X, quick(5));
  auto errors = reconstruction_errors(m, X);
  std::sort(errors.begin(), errors.end());
  // ceil(0.984 * 1000) = 984 -> the 984th smallest, index 983.
  EXPECT_EQ(m.error_threshold, errors[983]);
  const auto set = pseudo_label_ae(m, X);
  EXPECT_LE(set.positives(), 16u);
  for (std::size_t i = 0; i < X.rows; ++i) EXPECT_EQ(set.labels[i], set.scores[i] > m.error_threshold ? 1 : 0);
}

TEST(Fit, IdenticalRowsGiveEqualErrorsAndNoLabels) {
  FeatureMatrix X(50, {"a", "b", "c"}, std::vector<ColumnKind>(3, ColumnKind::numeric_scaled));
  for (std::size_t r = 0; r < 50; ++r) {
    X.at(r, 0) = 0.3;
    X.at(r, 1) = 0.9;
    X.at(r, 2) = 0.1;
  }
  const auto m = fit_ae(X, quick(2));
  const auto set = pseudo_label_ae(m, X);
  for (double e : set.scores) EXPECT_NEAR(e, set.scores[0], 1e-6);
  EXPECT_EQ(set.positives(), 0u);
}

TEST(Fit, StrictThresholdBoundary) {
  const auto X = uniform_rows(40, 3, 8);
  auto m = fit_ae(X, quick(8));
  const auto errors = reconstruction_errors(m, X);
  m.error_threshold = errors[7];
  const auto set = pseudo_label_ae(m, X);
  EXPECT_EQ(set.labels[7], 0);
}

TEST(Fit, DeterministicPerSeed) {
  const auto X = uniform_rows(200, 5, 9);
  const auto a = fit_ae(X, quick(4));
  const auto b = fit_ae(X, quick(4));
  EXPECT_EQ(a.error_threshold, b.error_threshold);
  EXPECT_EQ(to_json(a), to_json(b));
  const auto back = autoencoder_from_json(nlohmann::json::parse(to_json(a).dump()));
  EXPECT_EQ(reconstruction_errors(back, X), reconstruction_errors(a, X));
  EXPECT_EQ(back.error_threshold, a.error_threshold);
}

TEST(Fit, Preconditions) {
  auto X = uniform_rows(20, 3, 1);
  X.at(4, 1) = 1.5;
  EXPECT_THROW(fit_ae(X, quick(1)), ArgumentError);
  X.at(4, 1) = 1.0 + 1e-12;
  EXPECT_NO_THROW(fit_ae(X, quick(1)));
  EXPECT_THROW(fit_ae(uniform_rows(1, 3, 1), quick(1)), FitError);
  const auto m = fit_ae(uniform_rows(20, 3, 1), quick(1));
  EXPECT_THROW(reconstruction_errors(m, uniform_rows(4, 2, 1)), ArgumentError);
}

TEST(Fit, CyclicColumnsAreMappedIntoUnitRange) {
  FeatureMatrix X(30, {"h_sin", "h_cos"}, {ColumnKind::cyclic_sin, ColumnKind::cyclic_cos});
  for (std::size_t r = 0; r < X.rows; ++r) {
    const auto p = encode_cyclical(static_cast<double>(r % 24), 24);
    X.at(r, 0) = p.sin_component;
    X.at(r, 1) = p.cos_component;
  }
  EXPECT_NO_THROW(fit_ae(X, quick(1)));
  const auto v = ae_inputs(X);
  for (double x : v) {
    EXPECT_GE(x, 0.0);
    EXPECT_LE(x, 1.0);
  }
}

TEST(Fit, OperationPresetShape) {
  const auto c = default_ae_config(Preset::operation);
  EXPECT_EQ(c.hidden1, 16u);
  EXPECT_EQ(c.hidden2, 8u);
  EXPECT_EQ(c.optimizer, nn::OptimizerKind::rmsprop);
  EXPECT_EQ(c.learning_rate, 0.01);
  EXPECT_EQ(c.batch_size, 32u);
  EXPECT_EQ(c.patience, 8);
  EXPECT_EQ(c.threshold_percentile, 98.4);
  const auto d = default_ae_config(Preset::declaration);
  EXPECT_EQ(d.hidden1, 32u);
  EXPECT_EQ(d.hidden2, 10u);
  EXPECT_EQ(d.optimizer, nn::OptimizerKind::adam);
}

TEST(Fit, PlantedOutliersReconstructWorse) {
  // 24 columns driven by two latent factors; outliers ignore the structure.
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  FeatureMatrix X = uniform_rows(400, 24, 6);
  for (std::size_t r = 0; r < X.rows; ++r) {
    const double a = u(rng), b = u(rng);
    for (std::size_t c = 0; c < X.cols; ++c) {
      X.at(r, c) = r % 50 == 0 ? u(rng) : 0.5 + 0.25 * std::sin(a * 3.0 + c) + 0.2 * std::cos(b * 2.0 + 0.5 * c);
    }
  }
  auto cfg = quick(6);
  cfg.max_epochs = 40;
  const auto m = fit_ae(X, cfg);
  const auto e = reconstruction_errors(m, X);
  double out = 0.0, in = 0.0;
  for (std::size_t r = 0; r < X.rows; ++r) (r % 50 == 0 ? out : in) += e[r];
  EXPECT_GT(out / 8.0, in / 392.0);
}

TEST(Gradients, LossMatchesFiniteDifferences) {
  for (auto kind : {ReconstructionLoss::mae, ReconstructionLoss::squared}) {
    auto cfg = quick(2);
    cfg.hidden1 = 6;
    cfg.hidden2 = 3;
    cfg.loss = kind;
    const auto m = make_autoencoder(4, cfg);
    std::mt19937_64 rng(3);
    const auto x = testing::random_tensor({5, 4}, rng, 0.0, 1.0, false);
    const auto params = m.parameters();
    const auto r = testing::check_gradients([&] { return reconstruction_loss(x, m.reconstruct(x), kind); },
                                            params.tensors(), 1e-6, 10, 5);
    EXPECT_LT(r.max_rel_error, 1e-3);
  }
}

}  // namespace
}  // namespace pseudolab
