#pragma once

// Isolation Forest pseudo-labeler.
//
// Score convention: s(x) = 2^(-E[h(x)] / c(psi)) in (0, 1] and the decision
// score d(x) = 0.5 - s(x), so anomalies have low (negative) d. The fitted
// threshold is the floor(c * n)-th smallest decision score on the fit data.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pseudolab/common.hpp"
#include "pseudolab/preprocess.hpp"

namespace pseudolab {

inline constexpr double kEulerGamma = 0.5772156649015329;

/// Average unsuccessful-search path length of a BST with m points:
/// c(m) = 2 H(m-1) - 2(m-1)/m with H(k) = ln k + gamma; c(1) = c(0) = 0.
inline double average_path_adjustment(std::size_t m) {
  if (m <= 1) return 0.0;
  const auto k = static_cast<double>(m - 1);
  return 2.0 * (std::log(k) + kEulerGamma) - 2.0 * k / static_cast<double>(m);
}

struct IsolationTreeNode {
  int feature = -1;  // -1 marks a leaf
  double split = 0.0;
  int left = -1;
  int right = -1;
  std::size_t size = 0;
  int depth = 0;

  [[nodiscard]] bool is_leaf() const { return feature < 0; }
};

struct IsolationTree {
  std::vector<IsolationTreeNode> nodes;  // nodes[0] is the root
  int max_depth = 0;

  /// Leaf depth plus c(leaf size).
  [[nodiscard]] double path_length(std::span<const double> x) const {
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) {
      const auto& n = nodes[i];
      if (static_cast<std::size_t>(n.feature) >= x.size()) {
        throw ArgumentError("feature vector has " + std::to_string(x.size()) +
                            " entries, tree splits on index " + std::to_string(n.feature));
      }
      i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] < n.split ? n.left : n.right);
    }
    return nodes[i].depth + average_path_adjustment(nodes[i].size);
  }
};

/// Grows one tree over `rows` of `X`, splitting only on `features`. A node
/// becomes a leaf when it holds <= 1 row, reaches `max_depth`, or is constant
/// on every candidate feature.
inline IsolationTree build_isolation_tree(const FeatureMatrix& X, std::vector<std::size_t> rows,
                                          const std::vector<std::size_t>& features, int max_depth,
                                          std::mt19937_64& rng) {
  IsolationTree tree;
  tree.max_depth = max_depth;
  struct Pending {
    std::size_t node;
    std::size_t begin;
    std::size_t end;
  };
  tree.nodes.push_back({-1, 0.0, -1, -1, rows.size(), 0});
  std::vector<Pending> stack{{0, 0, rows.size()}};
  std::vector<std::size_t> usable;
  std::vector<double> lo(features.size());
  std::vector<double> hi(features.size());
  while (!stack.empty()) {
    const auto job = stack.back();
    stack.pop_back();
    const std::size_t count = job.end - job.begin;
    const int depth = tree.nodes[job.node].depth;
    if (count <= 1 || depth >= max_depth) continue;

    usable.clear();
    for (std::size_t f = 0; f < features.size(); ++f) {
      lo[f] = std::numeric_limits<double>::infinity();
      hi[f] = -std::numeric_limits<double>::infinity();
      for (std::size_t r = job.begin; r < job.end; ++r) {
        const double v = X.at(rows[r], features[f]);
        lo[f] = std::min(lo[f], v);
        hi[f] = std::max(hi[f], v);
      }
      if (hi[f] > lo[f]) usable.push_back(f);
    }
    if (usable.empty()) continue;

    std::uniform_int_distribution<std::size_t> pick(0, usable.size() - 1);
    const std::size_t f = usable[pick(rng)];
    std::uniform_real_distribution<double> cut(lo[f], hi[f]);
    double split = cut(rng);
    while (!(split > lo[f])) split = cut(rng);

    const std::size_t col = features[f];
    const auto mid = std::partition(rows.begin() + static_cast<std::ptrdiff_t>(job.begin),
                                    rows.begin() + static_cast<std::ptrdiff_t>(job.end),
                                    [&](std::size_t r) { return X.at(r, col) < split; });
    const auto m = static_cast<std::size_t>(mid - rows.begin());

    const auto left = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({-1, 0.0, -1, -1, m - job.begin, depth + 1});
    const auto right = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({-1, 0.0, -1, -1, job.end - m, depth + 1});
    auto& node = tree.nodes[job.node];
    node.feature = static_cast<int>(col);
    node.split = split;
    node.left = left;
    node.right = right;
    stack.push_back({static_cast<std::size_t>(right), m, job.end});
    stack.push_back({static_cast<std::size_t>(left), job.begin, m});
  }
  return tree;
}

struct IForestParams {
  std::size_t n_estimators = 50;
  double max_samples = 0.90;   // fraction of rows per tree
  double max_features = 0.10;  // fraction of columns per tree
  bool bootstrap = false;
  double contamination = 0.016;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_estimators < 1) throw ConfigError("n_estimators must be >= 1");
    if (!(max_samples > 0.0 && max_samples <= 1.0)) throw ConfigError("max_samples must lie in (0, 1]");
    if (!(max_features > 0.0 && max_features <= 1.0)) throw ConfigError("max_features must lie in (0, 1]");
    if (!(contamination > 0.0 && contamination < 0.5)) throw ConfigError("contamination must lie in (0, 0.5)");
  }
};

struct IsolationForestModel {
  IForestParams params;
  std::size_t n_features = 0;
  std::size_t subsample_size = 0;
  std::vector<IsolationTree> trees;
  double threshold = 0.0;
  // How many fit rows scoring exactly `threshold` belong to the flagged set.
  std::size_t tie_quota = 0;
  std::size_t fit_rows = 0;
  // floor(c * n) was 0 on the fit data; nothing gets flagged.
  bool degenerate_threshold = false;
};

enum class LabelSource { iforest, autoencoder };

inline std::string to_string(LabelSource s) {
  return s == LabelSource::iforest ? "iforest" : "autoencoder";
}

struct PseudoLabelSet {
  std::vector<double> scores;
  Labels labels;
  double threshold = 0.0;
  LabelSource source = LabelSource::iforest;
  bool warning = false;

  [[nodiscard]] std::size_t positives() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  }
};

inline double mean_path_length(const IsolationForestModel& model, std::span<const double> x) {
  if (x.size() != model.n_features) {
    throw ArgumentError("expected " + std::to_string(model.n_features) + " features, got " +
                        std::to_string(x.size()));
  }
  double total = 0.0;
  for (const auto& t : model.trees) total += t.path_length(x);
  return total / static_cast<double>(model.trees.size());
}

/// s = 2^(-E[h] / c(psi)).
inline double anomaly_score_from_path(double mean_path, std::size_t subsample_size) {
  const double norm = average_path_adjustment(subsample_size);
  if (norm <= 0.0) return 0.5;
  return std::exp2(-mean_path / norm);
}

/// Decision scores d = 0.5 - s; lower is more anomalous.
inline std::vector<double> score(const IsolationForestModel& model, const FeatureMatrix& X) {
  if (X.cols != model.n_features) {
    throw ArgumentError("expected " + std::to_string(model.n_features) + " features, got " +
                        std::to_string(X.cols));
  }
  std::vector<double> d(X.rows);
  for (std::size_t i = 0; i < X.rows; ++i) {
    d[i] = 0.5 - anomaly_score_from_path(mean_path_length(model, X.row(i)), model.subsample_size);
  }
  return d;
}

namespace detail {

inline std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, bool with_replacement,
                                               std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  if (with_replacement) {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t i = 0; i < k; ++i) out.push_back(pick(rng));
    return out;
  }
  out.resize(n);
  std::iota(out.begin(), out.end(), std::size_t{0});
  // Partial Fisher-Yates: the first k entries form a uniform k-subset.
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(out[i], out[pick(rng)]);
  }
  out.resize(k);
  return out;
}

}  // namespace detail

/// Fits the forest on all rows of X and sets the contamination threshold from
/// the fit rows' decision scores.
inline IsolationForestModel fit_iforest(const FeatureMatrix& X, const IForestParams& params) {
  params.validate();
  if (X.rows < 2) throw FitError("isolation forest needs at least 2 rows");
  if (X.cols < 1) throw FitError("isolation forest needs at least 1 feature");
  IsolationForestModel model;
  model.params = params;
  model.n_features = X.cols;
  model.subsample_size = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(params.max_samples * static_cast<double>(X.rows) - 1e-9)));
  const auto n_feat = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(params.max_features * static_cast<double>(X.cols) - 1e-9)), 1,
      X.cols);
  const int max_depth =
      static_cast<int>(std::ceil(std::log2(static_cast<double>(model.subsample_size))));

  model.trees.reserve(params.n_estimators);
  for (std::size_t t = 0; t < params.n_estimators; ++t) {
    std::mt19937_64 rng(mix_seed(params.seed, t));
    auto features = detail::sample_indices(X.cols, n_feat, false, rng);
    std::sort(features.begin(), features.end());
    auto rows = detail::sample_indices(X.rows, model.subsample_size, params.bootstrap, rng);
    model.trees.push_back(build_isolation_tree(X, std::move(rows), features, max_depth, rng));
  }

  const auto d = score(model, X);
  model.fit_rows = X.rows;
  const std::size_t k = anomaly_budget(params.contamination, X.rows);
  if (k == 0) {
    model.degenerate_threshold = true;
    model.threshold = std::nextafter(*std::min_element(d.begin(), d.end()),
                                     -std::numeric_limits<double>::infinity());
    model.tie_quota = 0;
    return model;
  }
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return d[a] < d[b]; });
  model.threshold = d[order[k - 1]];
  model.tie_quota = static_cast<std::size_t>(
      std::count_if(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                    [&](std::size_t i) { return d[i] == model.threshold; }));
  return model;
}

/// Flags rows with d < threshold, plus the first `tie_quota` rows (by index)
/// with d == threshold. On the fit data this yields exactly floor(c * n) ones.
inline PseudoLabelSet pseudo_label_iforest(const IsolationForestModel& model, const FeatureMatrix& X) {
  PseudoLabelSet out;
  out.source = LabelSource::iforest;
  out.threshold = model.threshold;
  out.warning = model.degenerate_threshold;
  out.scores = score(model, X);
  out.labels.assign(X.rows, 0);
  std::size_t ties = 0;
  for (std::size_t i = 0; i < X.rows; ++i) {
    if (out.scores[i] < model.threshold) {
      out.labels[i] = 1;
    } else if (out.scores[i] == model.threshold && ties < model.tie_quota) {
      out.labels[i] = 1;
      ++ties;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const IsolationForestModel& m) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : m.trees) {
    std::vector<int> feature, left, right, depth;
    std::vector<double> split;
    std::vector<std::size_t> size;
    for (const auto& n : t.nodes) {
      feature.push_back(n.feature);
      split.push_back(n.split);
      left.push_back(n.left);
      right.push_back(n.right);
      size.push_back(n.size);
      depth.push_back(n.depth);
    }
    trees.push_back({{"max_depth", t.max_depth}, {"feature", feature}, {"split", split},
                     {"left", left}, {"right", right}, {"size", size}, {"depth", depth}});
  }
  return {{"kind", "isolation_forest"},
          {"params",
           {{"n_estimators", m.params.n_estimators}, {"max_samples", m.params.max_samples},
            {"max_features", m.params.max_features}, {"bootstrap", m.params.bootstrap},
            {"contamination", m.params.contamination}, {"seed", m.params.seed}}},
          {"n_features", m.n_features},
          {"subsample_size", m.subsample_size},
          {"threshold", m.threshold},
          {"tie_quota", m.tie_quota},
          {"fit_rows", m.fit_rows},
          {"degenerate_threshold", m.degenerate_threshold},
          {"trees", trees}};
}

inline IsolationForestModel iforest_from_json(const nlohmann::json& j) {
  IsolationForestModel m;
  const auto& p = j.at("params");
  m.params.n_estimators = p.at("n_estimators").get<std::size_t>();
  m.params.max_samples = p.at("max_samples").get<double>();
  m.params.max_features = p.at("max_features").get<double>();
  m.params.bootstrap = p.at("bootstrap").get<bool>();
  m.params.contamination = p.at("contamination").get<double>();
  m.params.seed = p.at("seed").get<std::uint64_t>();
  m.n_features = j.at("n_features").get<std::size_t>();
  m.subsample_size = j.at("subsample_size").get<std::size_t>();
  m.threshold = j.at("threshold").get<double>();
  m.tie_quota = j.at("tie_quota").get<std::size_t>();
  m.fit_rows = j.at("fit_rows").get<std::size_t>();
  m.degenerate_threshold = j.at("degenerate_threshold").get<bool>();
  for (const auto& jt : j.at("trees")) {
    IsolationTree t;
    t.max_depth = jt.at("max_depth").get<int>();
    const auto feature = jt.at("feature").get<std::vector<int>>();
    const auto split = jt.at("split").get<std::vector<double>>();
    const auto left = jt.at("left").get<std::vector<int>>();
    const auto right = jt.at("right").get<std::vector<int>>();
    const auto size = jt.at("size").get<std::vector<std::size_t>>();
    const auto depth = jt.at("depth").get<std::vector<int>>();
    for (std::size_t i = 0; i < feature.size(); ++i) {
      t.nodes.push_back({feature[i], split[i], left[i], right[i], size[i], depth[i]});
    }
    m.trees.push_back(std::move(t));
  }
  return m;
}

}  // namespace pseudolab
