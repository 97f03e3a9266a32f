#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "pseudolab/iforest.hpp"

namespace pseudolab {
namespace {

FeatureMatrix matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < cols; ++c) names.push_back("f" + std::to_string(c));
  FeatureMatrix m(rows, names, std::vector<ColumnKind>(cols, ColumnKind::numeric_scaled));
  m.values = std::move(values);
  return m;
}

// 99 points from N(0, 1) per coordinate plus one point 10 sigma away in every
// coordinate, stored at `outlier_row`.
FeatureMatrix planted(std::uint64_t seed, std::size_t cols, std::size_t outlier_row) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> v(100 * cols);
  for (auto& x : v) x = z(rng);
  for (std::size_t c = 0; c < cols; ++c) v[outlier_row * cols + c] = 10.0;
  return matrix(100, cols, std::move(v));
}

TEST(PathAdjustment, PinnedValues) {
  EXPECT_EQ(average_path_adjustment(0), 0.0);
  EXPECT_EQ(average_path_adjustment(1), 0.0);
  EXPECT_NEAR(average_path_adjustment(2), 2 * kEulerGamma - 1.0, 1e-15);
  EXPECT_NEAR(average_path_adjustment(2), 0.1544313298, 1e-10);
  // c(256) = 2 (ln 255 + gamma) - 2 * 255 / 256
  EXPECT_NEAR(average_path_adjustment(256), 2 * (std::log(255.0) + kEulerGamma) - 510.0 / 256.0, 1e-12);
}

TEST(PathLength, LeafDepthPlusAdjustment) {
  IsolationTree t;
  // root splits f0 at 0.5; left is a size-1 leaf at depth 1, right a size-2 leaf at depth 1.
  t.nodes = {{0, 0.5, 1, 2, 3, 0}, {-1, 0, -1, -1, 1, 1}, {-1, 0, -1, -1, 2, 1}};
  const double a[] = {0.1};
  const double b[] = {0.9};
  EXPECT_EQ(t.path_length(a), 1.0);
  EXPECT_NEAR(t.path_length(b), 1.0 + 0.1544313298, 1e-9);
  IsolationTree single;
  single.nodes = {{-1, 0, -1, -1, 1, 0}};
  EXPECT_EQ(single.path_length(a), 0.0);
  const double wide[] = {0.1, 0.2};
  IsolationTree deep;
  deep.nodes = {{1, 0.5, 1, 2, 3, 0}, {-1, 0, -1, -1, 1, 1}, {-1, 0, -1, -1, 2, 1}};
  EXPECT_THROW((void)deep.path_length(a), ArgumentError);
  EXPECT_EQ(deep.path_length(wide), 1.0);
}

TEST(Score, FixedPointAndLimit) {
  EXPECT_DOUBLE_EQ(0.5 - anomaly_score_from_path(average_path_adjustment(90), 90), 0.0);
  EXPECT_NEAR(0.5 - anomaly_score_from_path(1e-12, 90), -0.5, 1e-9);
}

TEST(Fit, IdenticalRowsScoreEqually) {
  const auto X = matrix(2, 3, {1, 2, 3, 1, 2, 3});
  IForestParams p;
  p.max_features = 1.0;
  p.max_samples = 1.0;
  const auto m = fit_iforest(X, p);
  const auto d = score(m, X);
  EXPECT_EQ(d[0], d[1]);
  for (const auto& t : m.trees) EXPECT_EQ(t.nodes.size(), 1u);
}

TEST(Fit, TreeStructureInvariants) {
  const auto X = planted(3, 4, 17);
  IForestParams p;
  p.max_features = 0.5;
  p.seed = 11;
  const auto m = fit_iforest(X, p);
  EXPECT_EQ(m.trees.size(), 50u);
  EXPECT_EQ(m.subsample_size, 90u);
  for (const auto& t : m.trees) {
    EXPECT_EQ(t.max_depth, 7);
    std::set<int> used;
    for (const auto& n : t.nodes) {
      EXPECT_LE(n.depth, t.max_depth);
      if (!n.is_leaf()) {
        used.insert(n.feature);
        EXPECT_EQ(t.nodes[static_cast<std::size_t>(n.left)].size + t.nodes[static_cast<std::size_t>(n.right)].size,
                  n.size);
      }
    }
    EXPECT_LE(used.size(), 2u);  // ceil(0.5 * 4) features per tree
    EXPECT_EQ(t.nodes[0].size, 90u);
  }
}

TEST(Fit, SplitValuesLieInsideNodeRange) {
  const auto X = planted(5, 2, 0);
  IForestParams p;
  p.max_features = 1.0;
  p.max_samples = 1.0;
  p.n_estimators = 5;
  const auto m = fit_iforest(X, p);
  for (const auto& t : m.trees) {
    // Walk every row to its leaf, recording which rows pass each node.
    std::vector<std::vector<std::size_t>> members(t.nodes.size());
    for (std::size_t r = 0; r < X.rows; ++r) {
      std::size_t i = 0;
      members[i].push_back(r);
      while (!t.nodes[i].is_leaf()) {
        const auto& n = t.nodes[i];
        i = static_cast<std::size_t>(X.at(r, static_cast<std::size_t>(n.feature)) < n.split ? n.left : n.right);
        members[i].push_back(r);
      }
    }
    for (std::size_t i = 0; i < t.nodes.size(); ++i) {
      const auto& n = t.nodes[i];
      EXPECT_EQ(members[i].size(), n.size);
      if (n.is_leaf()) continue;
      double lo = INFINITY, hi = -INFINITY;
      for (auto r : members[i]) {
        lo = std::min(lo, X.at(r, static_cast<std::size_t>(n.feature)));
        hi = std::max(hi, X.at(r, static_cast<std::size_t>(n.feature)));
      }
      EXPECT_GT(n.split, lo);
      EXPECT_LE(n.split, hi);
    }
  }
}

TEST(Fit, PlantedOutlierIsTheOnlyLabel) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t row = seed * 5 % 100;
    const auto X = planted(seed + 100, 3, row);
    IForestParams p;
    p.seed = seed;
    const auto m = fit_iforest(X, p);
    const auto set = pseudo_label_iforest(m, X);
    EXPECT_EQ(set.positives(), 1u);
    EXPECT_EQ(set.labels[row], 1);
    const auto min_it = std::min_element(set.scores.begin(), set.scores.end());
    EXPECT_EQ(static_cast<std::size_t>(min_it - set.scores.begin()), row);
    // Brute force: the outlier's mean path length is strictly the shortest.
    const double h_out = mean_path_length(m, X.row(row));
    for (std::size_t r = 0; r < X.rows; ++r) {
      if (r != row) {
        EXPECT_LT(h_out, mean_path_length(m, X.row(r)));
      }
    }
  }
}

TEST(Labels, ExactCountMatchesSortOracle) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> v(1000 * 5);
  for (auto& x : v) x = std::round(u(rng) * 4) / 4;  // coarse grid forces score ties
  const auto X = matrix(1000, 5, v);
  IForestParams p;
  p.seed = 2;
  p.max_features = 0.4;
  const auto m = fit_iforest(X, p);
  const auto set = pseudo_label_iforest(m, X);
  EXPECT_EQ(set.positives(), 16u);
  std::vector<std::size_t> order(X.rows);
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return set.scores[a] < set.scores[b]; });
  Labels oracle(X.rows, 0);
  for (std::size_t i = 0; i < 16; ++i) oracle[order[i]] = 1;
  EXPECT_EQ(set.labels, oracle);
  EXPECT_EQ(set.threshold, set.scores[order[15]]);
}

TEST(Labels, TooFewRowsGivesWarning) {
  const auto X = planted(1, 2, 0).slice_rows(0, 50);
  IForestParams p;
  const auto m = fit_iforest(X, p);
  const auto set = pseudo_label_iforest(m, X);
  EXPECT_TRUE(set.warning);
  EXPECT_EQ(set.positives(), 0u);
}

TEST(Labels, DuplicatesGetIdenticalScores) {
  auto X = planted(9, 3, 4);
  for (std::size_t c = 0; c < 3; ++c) X.at(60, c) = X.at(20, c);
  IForestParams p;
  p.seed = 4;
  const auto d = score(fit_iforest(X, p), X);
  EXPECT_EQ(d[20], d[60]);
}

TEST(Fit, DeterministicAndSerializable) {
  const auto X = planted(2, 4, 50);
  IForestParams p;
  p.seed = 77;
  const auto a = fit_iforest(X, p);
  const auto b = fit_iforest(X, p);
  EXPECT_EQ(to_json(a), to_json(b));
  const auto back = iforest_from_json(nlohmann::json::parse(to_json(a).dump()));
  EXPECT_EQ(score(back, X), score(a, X));
  EXPECT_EQ(back.threshold, a.threshold);
  p.seed = 78;
  EXPECT_NE(to_json(fit_iforest(X, p)), to_json(a));
}

TEST(Fit, Errors) {
  IForestParams p;
  EXPECT_THROW(fit_iforest(matrix(1, 2, {1, 2}), p), FitError);
  p.contamination = 0.5;
  EXPECT_THROW(fit_iforest(planted(1, 2, 0), p), ConfigError);
  p = {};
  p.max_features = 0.01;  // rounds up to one feature
  EXPECT_NO_THROW(fit_iforest(planted(1, 2, 0), p));
  const auto m = fit_iforest(planted(1, 2, 0), IForestParams{});
  EXPECT_THROW(score(m, matrix(1, 3, {0, 0, 0})), ArgumentError);
}

}  // namespace
}  // namespace pseudolab
