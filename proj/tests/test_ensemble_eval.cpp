#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <boost/math/distributions/chi_squared.hpp>
#include <gtest/gtest.h>

#include "pseudolab/datagen.hpp"
#include "pseudolab/ensemble.hpp"
#include "pseudolab/metrics.hpp"

namespace pseudolab {
namespace {

double chi2_tail(double x) { return boost::math::cdf(boost::math::complement(boost::math::chi_squared(1.0), x)); }

TEST(Metrics, ConfusionCountsAndRatios) {
  const Labels pred{1, 1, 0, 0, 1, 0, 1, 0};
  const Labels act{1, 0, 0, 1, 1, 0, 0, 0};
  const auto r = compute_metrics(pred, act);
  EXPECT_EQ(r.tp, 2u);
  EXPECT_EQ(r.fp, 2u);
  EXPECT_EQ(r.tn, 3u);
  EXPECT_EQ(r.fn, 1u);
  EXPECT_DOUBLE_EQ(r.accuracy, 5.0 / 8.0);
  EXPECT_DOUBLE_EQ(r.precision, 0.5);
  EXPECT_DOUBLE_EQ(r.recall, 2.0 / 3.0);
  EXPECT_NEAR(r.f1, 4.0 / 7.0, 1e-15);
}

TEST(Metrics, F1EqualsCountIdentity) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    Labels p(50), a(50);
    for (std::size_t i = 0; i < 50; ++i) {
      p[i] = static_cast<int>(rng() % 2);
      a[i] = static_cast<int>(rng() % 3 == 0);
    }
    const auto r = compute_metrics(p, a);
    EXPECT_EQ(r.tp + r.fp + r.tn + r.fn, 50u);
    const double den = 2.0 * r.tp + r.fp + r.fn;
    EXPECT_NEAR(r.f1, den == 0 ? 0.0 : 2.0 * r.tp / den, 1e-12);
  }
}

TEST(Metrics, ZeroDenominatorsGiveZero) {
  const auto none = compute_metrics({0, 0, 0}, {0, 0, 0});
  EXPECT_EQ(none.precision, 0.0);
  EXPECT_EQ(none.recall, 0.0);
  EXPECT_EQ(none.f1, 0.0);
  EXPECT_EQ(none.accuracy, 1.0);
  const auto missed = compute_metrics({0, 0}, {1, 1});
  EXPECT_EQ(missed.precision, 0.0);
  EXPECT_EQ(missed.f1, 0.0);
  EXPECT_THROW(compute_metrics({0, 1}, {0}), ArgumentError);
  EXPECT_THROW(compute_metrics({}, {}), ArgumentError);
}

TEST(McNemar, ContinuityCorrectedExamples) {
  const auto r = mcnemar_from_counts(5, 15);
  EXPECT_DOUBLE_EQ(r.statistic, 81.0 / 20.0);
  EXPECT_NEAR(r.p_value, chi2_tail(4.05), 1e-12);
  EXPECT_NEAR(r.p_value, 0.04417, 5e-6);
  EXPECT_TRUE(r.significant);

  const auto zero = mcnemar_from_counts(0, 0);
  EXPECT_EQ(zero.statistic, 0.0);
  EXPECT_EQ(zero.p_value, 1.0);
  EXPECT_FALSE(zero.significant);

  const auto even = mcnemar_from_counts(10, 10);
  EXPECT_DOUBLE_EQ(even.statistic, 0.05);
  EXPECT_NEAR(even.p_value, chi2_tail(0.05), 1e-12);
  EXPECT_FALSE(even.significant);
}

TEST(McNemar, TailMatchesReferenceDistribution) {
  for (std::size_t b = 0; b < 30; b += 3) {
    for (std::size_t c = 0; c < 30; c += 4) {
      const auto r = mcnemar_from_counts(b, c);
      if (b + c == 0) continue;
      EXPECT_NEAR(r.p_value, chi2_tail(r.statistic), 1e-12) << b << "," << c;
    }
  }
}

TEST(McNemar, DiscordantCountsAndSymmetry) {
  const Labels actual{1, 0, 1, 0, 1, 0, 1, 1};
  const Labels a{1, 0, 0, 1, 1, 0, 0, 1};
  const Labels b{0, 0, 1, 0, 1, 1, 1, 1};
  const auto ab = mcnemar(a, b, actual);
  const auto ba = mcnemar(b, a, actual);
  // a wrong at 2,3,6; b wrong at 0,5.
  EXPECT_EQ(ab.b, 3u);
  EXPECT_EQ(ab.c, 2u);
  EXPECT_EQ(ba.b, ab.c);
  EXPECT_EQ(ba.c, ab.b);
  EXPECT_EQ(ab.statistic, ba.statistic);
  EXPECT_EQ(ab.p_value, ba.p_value);
  EXPECT_EQ(mcnemar(a, a, actual).p_value, 1.0);
  EXPECT_THROW(mcnemar(a, Labels{1}, actual), ArgumentError);
}

TEST(Agreement, PercentExample) {
  const auto r = agreement_from_counts(184, 69100, 956, 956);
  EXPECT_EQ(r.n, 71196u);
  EXPECT_NEAR(r.percent(r.both_positive), 0.26, 0.005);
  EXPECT_NEAR(r.percent(r.both_negative), 97.06, 0.005);
  EXPECT_NEAR(r.percent(r.iforest_only), 1.34, 0.005);
  EXPECT_NEAR(r.percent(r.ae_only), 1.34, 0.005);
  const auto table = agreement_table(r);
  EXPECT_NE(table.find("97.06"), std::string::npos);
  EXPECT_NE(table.find("0.26"), std::string::npos);
}

TEST(Agreement, CountsPartitionRows) {
  const auto r = agreement_report({1, 1, 0, 0, 1}, {1, 0, 1, 0, 0});
  EXPECT_EQ(r.both_positive, 1u);
  EXPECT_EQ(r.iforest_only, 2u);
  EXPECT_EQ(r.ae_only, 1u);
  EXPECT_EQ(r.both_negative, 1u);
  EXPECT_EQ(r.both_positive + r.both_negative + r.iforest_only + r.ae_only, r.n);
  EXPECT_EQ(agreement_report({}, {}).percent(0), 0.0);
}

TEST(TopAnomalies, SummaryMatchesTwoPassOracle) {
  GeneratorConfig g;
  g.n_records = 400;
  g.seed = 12;
  const auto data = generate_dataset(g);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  std::vector<double> scores(data.size());
  for (auto& s : scores) s = std::round(u(rng) * 50) / 50;  // plenty of ties
  for (auto source : {LabelSource::iforest, LabelSource::autoencoder}) {
    const std::size_t k = 25;
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0u);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) {
      if (scores[a] != scores[b]) return source == LabelSource::iforest ? scores[a] < scores[b] : scores[a] > scores[b];
      return a < b;
    });
    idx.resize(k);
    EXPECT_EQ(top_anomalies(scores, source, k), idx);
    const auto summary = top_anomaly_summary(scores, data.records, source, k);
    ASSERT_EQ(summary.size(), summary_features().size());
    for (const auto& s : summary) {
      double sum = 0.0;
      for (auto i : idx) sum += summary_value(data.records[i], s.feature);
      const double mean = sum / k;
      double ss = 0.0, lo = INFINITY, hi = -INFINITY;
      for (auto i : idx) {
        const double v = summary_value(data.records[i], s.feature);
        ss += (v - mean) * (v - mean);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      EXPECT_NEAR(s.mean, mean, 1e-9 * std::max(1.0, std::abs(mean))) << s.feature;
      EXPECT_NEAR(s.std, std::sqrt(ss / (k - 1)), 1e-9 * std::max(1.0, s.std)) << s.feature;
      EXPECT_EQ(s.min, lo);
      EXPECT_EQ(s.max, hi);
    }
  }
  EXPECT_THROW(top_anomalies(scores, LabelSource::iforest, scores.size() + 1), ArgumentError);
  const auto one = top_anomaly_summary(scores, data.records, LabelSource::iforest, 1);
  for (const auto& s : one) EXPECT_EQ(s.std, 0.0);
}

TEST(Meta, LearnsAgreementRule) {
  // Target is 1 exactly when both base models say 1.
  Labels l, t, y;
  for (int rep = 0; rep < 25; ++rep) {
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) {
        l.push_back(a);
        t.push_back(b);
        y.push_back(a & b);
      }
    }
  }
  const auto e = fit_meta(l, t, y, "validation");
  EXPECT_FALSE(e.degenerate);
  EXPECT_EQ(predict_meta(e, l, t), y);
  EXPECT_GT(e.weights[0], 0.0);
  EXPECT_GT(e.weights[1], 0.0);
  EXPECT_EQ(e.trained_on, "validation");
}

TEST(Meta, BalancedClassWeights) {
  const auto w = balanced_class_weights({0, 0, 0, 1});
  EXPECT_DOUBLE_EQ(w[0], 4.0 / 6.0);
  EXPECT_DOUBLE_EQ(w[1], 2.0);
  const auto none = balanced_class_weights({0, 0});
  EXPECT_EQ(none[1], 0.0);
}

TEST(Meta, SingleClassTargetIsConstant) {
  const auto e = fit_meta({1, 0, 1}, {0, 1, 1}, {0, 0, 0});
  EXPECT_TRUE(e.degenerate);
  EXPECT_EQ(predict_meta(e, {1, 0, 1}, {1, 1, 1}), (Labels{0, 0, 0}));
  const auto all = fit_meta({1, 0}, {0, 0}, {1, 1});
  EXPECT_EQ(predict_meta(all, {0, 0}, {0, 0}), (Labels{1, 1}));
  EXPECT_THROW(fit_meta({1}, {1, 0}, {1, 0}), ArgumentError);
}

TEST(Meta, JsonRoundTrip) {
  const auto e = fit_meta({1, 0, 1, 0, 1}, {1, 1, 0, 0, 1}, {1, 0, 1, 0, 1}, "validation");
  const auto back = ensemble_from_json(nlohmann::json::parse(to_json(e).dump()));
  EXPECT_EQ(back.weights, e.weights);
  EXPECT_EQ(back.bias, e.bias);
  EXPECT_EQ(back.class_weights, e.class_weights);
  EXPECT_EQ(back.trained_on, "validation");
  EXPECT_THROW(ensemble_from_json({{"bias", 1.0}}), SchemaError);
}

TEST(Reports, TablesAndJson) {
  auto r = report_from_counts(3, 1, 10, 2);
  r.threshold = 0.42;
  const auto back = eval_report_from_json(nlohmann::json::parse(to_json(r).dump()));
  EXPECT_EQ(back.f1, r.f1);
  EXPECT_EQ(back.threshold, 0.42);
  const auto t = metrics_table({{"iforest lstm", r}});
  EXPECT_NE(t.find("Accuracy"), std::string::npos);
  EXPECT_NE(t.find("F1-score"), std::string::npos);
  EXPECT_NE(t.find("0.750"), std::string::npos);  // precision 3/4
  const auto m = mcnemar_table("lstm vs transformer", mcnemar_from_counts(5, 15));
  EXPECT_NE(m.find("4.0500"), std::string::npos);
  EXPECT_NE(m.find("Yes"), std::string::npos);
}

}  // namespace
}  // namespace pseudolab
