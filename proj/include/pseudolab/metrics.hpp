#pragma once

#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pseudolab/common.hpp"
#include "pseudolab/datagen.hpp"
#include "pseudolab/iforest.hpp"

namespace pseudolab {

struct EvalReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double threshold = 0.5;
  std::vector<std::uint64_t> seeds;
  std::string split = "test";
};

namespace detail {
inline double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

inline void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ArgumentError(std::string(what) + ": lengths differ (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}
}  // namespace detail

/// Metrics from confusion counts; every zero denominator yields 0.
inline EvalReport report_from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
  EvalReport r;
  r.tp = tp;
  r.fp = fp;
  r.tn = tn;
  r.fn = fn;
  const auto d = [](std::size_t v) { return static_cast<double>(v); };
  r.accuracy = detail::ratio(d(tp + tn), d(tp + fp + tn + fn));
  r.precision = detail::ratio(d(tp), d(tp + fp));
  r.recall = detail::ratio(d(tp), d(tp + fn));
  r.f1 = detail::ratio(2.0 * r.precision * r.recall, r.precision + r.recall);
  return r;
}

inline EvalReport compute_metrics(const Labels& predicted, const Labels& actual) {
  detail::require_same_length(predicted.size(), actual.size(), "compute_metrics");
  if (predicted.empty()) throw ArgumentError("compute_metrics: empty label vectors");
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted[i] == 1, a = actual[i] == 1;
    (p ? (a ? tp : fp) : (a ? fn : tn))++;
  }
  return report_from_counts(tp, fp, tn, fn);
}

struct McNemarResult {
  std::size_t b = 0;  // A wrong, B right
  std::size_t c = 0;  // A right, B wrong
  double statistic = 0.0;
  double p_value = 1.0;
  bool significant = false;
};

/// Continuity-corrected statistic (|b - c| - 1)^2 / (b + c) with a
/// chi-squared(1) tail p = erfc(sqrt(stat / 2)).
inline McNemarResult mcnemar_from_counts(std::size_t b, std::size_t c) {
  McNemarResult r;
  r.b = b;
  r.c = c;
  if (b + c > 0) {
    const double diff = std::abs(static_cast<double>(b) - static_cast<double>(c)) - 1.0;
    r.statistic = diff * diff / static_cast<double>(b + c);
    r.p_value = std::erfc(std::sqrt(r.statistic / 2.0));
  }
  r.significant = r.p_value < 0.05;
  return r;
}

inline McNemarResult mcnemar(const Labels& a, const Labels& b, const Labels& actual) {
  detail::require_same_length(a.size(), actual.size(), "mcnemar");
  detail::require_same_length(b.size(), actual.size(), "mcnemar");
  std::size_t nb = 0, nc = 0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const bool a_ok = a[i] == actual[i], b_ok = b[i] == actual[i];
    if (!a_ok && b_ok) ++nb;
    if (a_ok && !b_ok) ++nc;
  }
  return mcnemar_from_counts(nb, nc);
}

struct AgreementReport {
  std::size_t n = 0;
  std::size_t both_positive = 0;
  std::size_t both_negative = 0;
  std::size_t iforest_only = 0;
  std::size_t ae_only = 0;

  [[nodiscard]] double percent(std::size_t count) const {
    return n == 0 ? 0.0 : 100.0 * static_cast<double>(count) / static_cast<double>(n);
  }
};

inline AgreementReport agreement_from_counts(std::size_t both1, std::size_t both0, std::size_t iforest_only,
                                             std::size_t ae_only) {
  return {both1 + both0 + iforest_only + ae_only, both1, both0, iforest_only, ae_only};
}

inline AgreementReport agreement_report(const Labels& iforest, const Labels& ae) {
  detail::require_same_length(iforest.size(), ae.size(), "agreement_report");
  AgreementReport r;
  r.n = iforest.size();
  for (std::size_t i = 0; i < r.n; ++i) {
    const bool f = iforest[i] == 1, a = ae[i] == 1;
    if (f && a) ++r.both_positive;
    else if (!f && !a) ++r.both_negative;
    else if (f) ++r.iforest_only;
    else ++r.ae_only;
  }
  return r;
}

struct FeatureSummary {
  std::string feature;
  double mean = 0.0;
  double std = 0.0;  // sample (n - 1) standard deviation; 0 when k = 1
  double min = 0.0;
  double max = 0.0;
};

inline const std::vector<std::string>& summary_features() {
  static const std::vector<std::string> f{"amount_submitted", "amount_accepted", "amount_insured",
                                          "total_ops_accepted", "total_ops_stopped", "early_payment",
                                          "payment_term"};
  return f;
}

inline double summary_value(const BillingRecord& r, const std::string& f) {
  if (f == "amount_submitted") return r.amount_submitted;
  if (f == "amount_accepted") return r.amount_accepted;
  if (f == "amount_insured") return r.amount_insured;
  if (f == "total_ops_accepted") return static_cast<double>(r.total_ops_accepted);
  if (f == "total_ops_stopped") return static_cast<double>(r.total_ops_stopped);
  if (f == "early_payment") return r.early_payment ? 1.0 : 0.0;
  if (f == "payment_term") return static_cast<double>(r.payment_term);
  throw ArgumentError("unknown summary feature '" + f + "'");
}

/// Indices of the k most anomalous rows: lowest decision score for the
/// isolation forest, highest error for the autoencoder. Ties keep the lower index.
inline std::vector<std::size_t> top_anomalies(const std::vector<double>& scores, LabelSource source, std::size_t k) {
  if (k > scores.size()) {
    throw ArgumentError("k = " + std::to_string(k) + " exceeds the " + std::to_string(scores.size()) + " scored rows");
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return source == LabelSource::iforest ? scores[a] < scores[b] : scores[a] > scores[b];
  });
  idx.resize(k);
  return idx;
}

inline std::vector<FeatureSummary> top_anomaly_summary(const std::vector<double>& scores,
                                                       const std::vector<BillingRecord>& records,
                                                       LabelSource source, std::size_t k = 10) {
  detail::require_same_length(scores.size(), records.size(), "top_anomaly_summary");
  const auto top = top_anomalies(scores, source, k);
  std::vector<FeatureSummary> out;
  for (const auto& f : summary_features()) {
    FeatureSummary s;
    s.feature = f;
    if (top.empty()) {
      out.push_back(s);
      continue;
    }
    s.min = s.max = summary_value(records[top[0]], f);
    double sum = 0.0;
    for (auto i : top) {
      const double v = summary_value(records[i], f);
      sum += v;
      s.min = std::min(s.min, v);
      s.max = std::max(s.max, v);
    }
    s.mean = sum / static_cast<double>(top.size());
    if (top.size() > 1) {
      double ss = 0.0;
      for (auto i : top) {
        const double d = summary_value(records[i], f) - s.mean;
        ss += d * d;
      }
      s.std = std::sqrt(ss / static_cast<double>(top.size() - 1));
    }
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const EvalReport& r) {
  return {{"split", r.split},     {"accuracy", r.accuracy}, {"precision", r.precision}, {"recall", r.recall},
          {"f1", r.f1},           {"tp", r.tp},             {"fp", r.fp},               {"tn", r.tn},
          {"fn", r.fn},           {"threshold", r.threshold}, {"seeds", r.seeds}};
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r = report_from_counts(j.at("tp").get<std::size_t>(), j.at("fp").get<std::size_t>(),
                                    j.at("tn").get<std::size_t>(), j.at("fn").get<std::size_t>());
  r.threshold = j.value("threshold", 0.5);
  r.split = j.value("split", std::string("test"));
  r.seeds = j.value("seeds", std::vector<std::uint64_t>{});
  return r;
}

inline nlohmann::json to_json(const McNemarResult& m) {
  return {{"b", m.b}, {"c", m.c}, {"statistic", m.statistic}, {"p_value", m.p_value}, {"significant", m.significant}};
}

inline nlohmann::json to_json(const AgreementReport& a) {
  return {{"n", a.n},
          {"both_positive", {{"count", a.both_positive}, {"percent", a.percent(a.both_positive)}}},
          {"both_negative", {{"count", a.both_negative}, {"percent", a.percent(a.both_negative)}}},
          {"iforest_only", {{"count", a.iforest_only}, {"percent", a.percent(a.iforest_only)}}},
          {"ae_only", {{"count", a.ae_only}, {"percent", a.percent(a.ae_only)}}}};
}

inline nlohmann::json to_json(const std::vector<FeatureSummary>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : rows) {
    arr.push_back({{"feature", s.feature}, {"mean", s.mean}, {"std", s.std}, {"min", s.min}, {"max", s.max}});
  }
  return arr;
}

/// Aligned-column table: one row per named report, columns
/// Accuracy / Precision / Recall / F1-score with three decimals.
inline std::string metrics_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::size_t w = 5;
  for (const auto& [name, r] : rows) w = std::max(w, name.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(w)) << "Model" << std::right << std::setw(10) << "Accuracy"
     << std::setw(11) << "Precision" << std::setw(8) << "Recall" << std::setw(10) << "F1-score" << '\n';
  os << std::fixed << std::setprecision(3);
  for (const auto& [name, r] : rows) {
    os << std::left << std::setw(static_cast<int>(w)) << name << std::right << std::setw(10) << r.accuracy
       << std::setw(11) << r.precision << std::setw(8) << r.recall << std::setw(10) << r.f1 << '\n';
  }
  return os.str();
}

inline std::string mcnemar_table(const std::string& comparison, const McNemarResult& m) {
  std::ostringstream os;
  const int w = static_cast<int>(std::max<std::size_t>(10, comparison.size()));
  os << std::left << std::setw(w) << "Comparison" << std::right << std::setw(7) << "b" << std::setw(7) << "c"
     << std::setw(11) << "Statistic" << std::setw(10) << "P-value" << std::setw(13) << "Significant" << '\n';
  os << std::left << std::setw(w) << comparison << std::right << std::setw(7) << m.b << std::setw(7) << m.c
     << std::fixed << std::setprecision(4) << std::setw(11) << m.statistic << std::setw(10) << m.p_value
     << std::setw(13) << (m.significant ? "Yes" : "No") << '\n';
  return os.str();
}

inline std::string agreement_table(const AgreementReport& a) {
  std::ostringstream os;
  os << std::left << std::setw(22) << "Agreement" << std::right << std::setw(10) << "Count" << std::setw(10)
     << "Percent" << '\n';
  os << std::fixed << std::setprecision(2);
  const auto row = [&](const char* name, std::size_t c) {
    os << std::left << std::setw(22) << name << std::right << std::setw(10) << c << std::setw(10) << a.percent(c)
       << '\n';
  };
  row("Both label 1", a.both_positive);
  row("Both label 0", a.both_negative);
  row("Only iForest label 1", a.iforest_only);
  row("Only AE label 1", a.ae_only);
  return os.str();
}

}  // namespace pseudolab
