#pragma once

// Stacking hybrid: logistic regression over the LSTM and Transformer
// predicted labels, fitted by gradient descent with balanced class weights.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "pseudolab/common.hpp"

namespace pseudolab {

struct MetaFitParams {
  double l2 = 1e-4;
  int max_iterations = 1000;
  double tolerance = 1e-6;
  double step = 1.0;
};

struct StackedEnsemble {
  std::array<double, 2> weights{0.0, 0.0};  // LSTM, Transformer
  double bias = 0.0;
  std::array<double, 2> class_weights{1.0, 1.0};  // class 0, class 1
  std::string trained_on;
  bool degenerate = false;
  int iterations = 0;
};

/// w_c = n / (2 n_c); a class with no members gets weight 0.
inline std::array<double, 2> balanced_class_weights(const Labels& y) {
  const double n = static_cast<double>(y.size());
  const auto n1 = static_cast<double>(std::count(y.begin(), y.end(), 1));
  const double n0 = n - n1;
  return {n0 > 0 ? n / (2.0 * n0) : 0.0, n1 > 0 ? n / (2.0 * n1) : 0.0};
}

inline double meta_probability(const StackedEnsemble& e, int lstm, int transformer) {
  return sigmoid(e.weights[0] * lstm + e.weights[1] * transformer + e.bias);
}

/// Minimizes (1/n) sum_i w_{y_i} logloss_i + (l2/2) |w|^2 (bias unpenalized).
/// A single-class target yields a constant predictor flagged `degenerate`.
inline StackedEnsemble fit_meta(const Labels& lstm, const Labels& transformer, const Labels& target,
                                const std::string& trained_on = "", const MetaFitParams& p = {}) {
  if (lstm.size() != target.size() || transformer.size() != target.size()) {
    throw ArgumentError("fit_meta: base predictions and target differ in length");
  }
  if (target.empty()) throw ArgumentError("fit_meta: empty target");
  StackedEnsemble e;
  e.trained_on = trained_on;
  e.class_weights = balanced_class_weights(target);
  const auto positives = std::count(target.begin(), target.end(), 1);
  if (positives == 0 || positives == static_cast<long>(target.size())) {
    e.degenerate = true;
    e.bias = positives == 0 ? -10.0 : 10.0;
    return e;
  }
  const double n = static_cast<double>(target.size());
  for (int it = 0; it < p.max_iterations; ++it) {
    double g0 = p.l2 * e.weights[0], g1 = p.l2 * e.weights[1], gb = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double r = e.class_weights[target[i]] * (meta_probability(e, lstm[i], transformer[i]) - target[i]) / n;
      g0 += r * lstm[i];
      g1 += r * transformer[i];
      gb += r;
    }
    e.iterations = it + 1;
    if (std::sqrt(g0 * g0 + g1 * g1 + gb * gb) < p.tolerance) break;
    e.weights[0] -= p.step * g0;
    e.weights[1] -= p.step * g1;
    e.bias -= p.step * gb;
  }
  if (!std::isfinite(e.weights[0]) || !std::isfinite(e.weights[1]) || !std::isfinite(e.bias)) {
    throw NumericError("meta-learner weights diverged");
  }
  return e;
}

/// label = 1 iff sigmoid(w . x + b) >= 0.5.
inline Labels predict_meta(const StackedEnsemble& e, const Labels& lstm, const Labels& transformer) {
  if (lstm.size() != transformer.size()) throw ArgumentError("predict_meta: base predictions differ in length");
  Labels out(lstm.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = meta_probability(e, lstm[i], transformer[i]) >= 0.5 ? 1 : 0;
  return out;
}

inline nlohmann::json to_json(const StackedEnsemble& e) {
  return {{"kind", "stacked_logistic"},
          {"features", {"lstm", "transformer"}},
          {"weights", e.weights},
          {"bias", e.bias},
          {"class_weights", e.class_weights},
          {"trained_on", e.trained_on},
          {"degenerate", e.degenerate},
          {"iterations", e.iterations}};
}

inline StackedEnsemble ensemble_from_json(const nlohmann::json& j) {
  try {
    StackedEnsemble e;
    e.weights = j.at("weights").get<std::array<double, 2>>();
    e.bias = j.at("bias").get<double>();
    e.class_weights = j.at("class_weights").get<std::array<double, 2>>();
    e.trained_on = j.value("trained_on", std::string());
    e.degenerate = j.value("degenerate", false);
    e.iterations = j.value("iterations", 0);
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw SchemaError(std::string("ensemble document: ") + ex.what());
  }
}

}  // namespace pseudolab
