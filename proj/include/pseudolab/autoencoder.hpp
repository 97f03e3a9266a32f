#pragma once

// Dense autoencoder pseudo-labeler: rows whose reconstruction error exceeds
// the 98.4th percentile of the training errors are labeled anomalous.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "pseudolab/common.hpp"
#include "pseudolab/iforest.hpp"
#include "pseudolab/nn/module.hpp"
#include "pseudolab/nn/ops.hpp"
#include "pseudolab/nn/optim.hpp"
#include "pseudolab/preprocess.hpp"

namespace pseudolab {

enum class ReconstructionLoss { mae, squared };

struct AutoencoderConfig {
  std::size_t hidden1 = 32;
  std::size_t hidden2 = 10;
  nn::OptimizerKind optimizer = nn::OptimizerKind::adam;
  double learning_rate = 0.01;
  std::size_t batch_size = 32;
  int max_epochs = 50;
  int patience = 8;
  double threshold_percentile = 98.4;
  ReconstructionLoss loss = ReconstructionLoss::mae;
  /// Trailing share of the fit rows held out to drive early stopping.
  double validation_fraction = 0.1;
  bool shuffle = false;
  std::uint64_t seed = 42;
};

inline AutoencoderConfig default_ae_config(Preset preset) {
  AutoencoderConfig c;
  if (preset == Preset::operation) {
    c.hidden1 = 16;
    c.hidden2 = 8;
    c.optimizer = nn::OptimizerKind::rmsprop;
  }
  return c;
}

struct AutoencoderModel {
  AutoencoderConfig config;
  std::size_t input_width = 0;
  nn::Linear enc1, enc2, dec1, dec2;
  double error_threshold = std::numeric_limits<double>::quiet_NaN();
  std::vector<nn::EpochRecord> trace;

  [[nodiscard]] nn::ParameterSet parameters() const {
    nn::ParameterSet p;
    p.append(enc1.parameters(), "enc1.");
    p.append(enc2.parameters(), "enc2.");
    p.append(dec1.parameters(), "dec1.");
    p.append(dec2.parameters(), "dec2.");
    return p;
  }

  /// x: [batch x input_width] -> reconstruction of the same shape.
  [[nodiscard]] nn::Tensor reconstruct(const nn::Tensor& x) const {
    auto z = nn::relu(enc2(nn::relu(enc1(x))));
    return nn::sigmoid(dec2(nn::relu(dec1(z))));
  }
};

inline AutoencoderModel make_autoencoder(std::size_t input_width, const AutoencoderConfig& cfg) {
  std::mt19937_64 rng(mix_seed(cfg.seed, 0xae));
  AutoencoderModel m;
  m.config = cfg;
  m.input_width = input_width;
  m.enc1 = nn::Linear(input_width, cfg.hidden1, rng);
  m.enc2 = nn::Linear(cfg.hidden1, cfg.hidden2, rng);
  m.dec1 = nn::Linear(cfg.hidden2, cfg.hidden1, rng);
  m.dec2 = nn::Linear(cfg.hidden1, input_width, rng);
  return m;
}

/// Copy of X's values with sin/cos columns mapped from [-1,1] to [0,1]; every
/// other column is passed through.
inline std::vector<double> ae_inputs(const FeatureMatrix& X) {
  std::vector<double> v = X.values;
  for (std::size_t c = 0; c < X.cols; ++c) {
    const auto k = X.column_kinds.empty() ? ColumnKind::numeric_scaled : X.column_kinds[c];
    if (k != ColumnKind::cyclic_sin && k != ColumnKind::cyclic_cos) continue;
    for (std::size_t r = 0; r < X.rows; ++r) v[r * X.cols + c] = 0.5 * (v[r * X.cols + c] + 1.0);
  }
  return v;
}

inline nn::Tensor reconstruction_loss(const nn::Tensor& x, const nn::Tensor& xhat, ReconstructionLoss kind) {
  auto diff = nn::sub(xhat, x);
  return nn::mean(kind == ReconstructionLoss::mae ? nn::abs(diff) : nn::square(diff));
}

namespace detail {

inline nn::Tensor batch_tensor(const std::vector<double>& v, std::size_t width, std::size_t begin,
                               std::size_t end) {
  return {{end - begin, width},
          std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(begin * width),
                              v.begin() + static_cast<std::ptrdiff_t>(end * width))};
}

inline double eval_loss(const AutoencoderModel& m, const std::vector<double>& v, std::size_t begin,
                        std::size_t end) {
  nn::NoGradGuard guard;
  double total = 0.0;
  const std::size_t w = m.input_width;
  for (std::size_t b = begin; b < end; b += 256) {
    const std::size_t e = std::min(end, b + 256);
    auto x = batch_tensor(v, w, b, e);
    total += reconstruction_loss(x, m.reconstruct(x), m.config.loss).item() * static_cast<double>(e - b);
  }
  return total / static_cast<double>(end - begin);
}

}  // namespace detail

/// Per-row errors: mean |x - x_hat| over the features (or mean squared error
/// when the model was trained with the squared loss).
inline std::vector<double> reconstruction_errors(const AutoencoderModel& model, const FeatureMatrix& X) {
  if (X.cols != model.input_width) {
    throw ArgumentError("autoencoder expects " + std::to_string(model.input_width) + " features, got " +
                        std::to_string(X.cols));
  }
  const auto v = ae_inputs(X);
  std::vector<double> errors(X.rows);
  nn::NoGradGuard guard;
  const std::size_t w = model.input_width;
  for (std::size_t b = 0; b < X.rows; b += 256) {
    const std::size_t e = std::min(X.rows, b + 256);
    auto xhat = model.reconstruct(detail::batch_tensor(v, w, b, e));
    for (std::size_t r = b; r < e; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < w; ++j) {
        const double d = v[r * w + j] - xhat.data()[(r - b) * w + j];
        s += model.config.loss == ReconstructionLoss::mae ? std::abs(d) : d * d;
      }
      errors[r] = s / static_cast<double>(w);
    }
  }
  return errors;
}

/// Error of one feature vector already in the model's input space.
inline double reconstruction_error(const AutoencoderModel& model, std::span<const double> x) {
  if (x.size() != model.input_width) {
    throw ArgumentError("autoencoder expects " + std::to_string(model.input_width) + " features, got " +
                        std::to_string(x.size()));
  }
  nn::NoGradGuard guard;
  auto xhat = model.reconstruct(nn::Tensor({1, x.size()}, std::vector<double>(x.begin(), x.end())));
  double s = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double d = x[j] - xhat.data()[j];
    s += model.config.loss == ReconstructionLoss::mae ? std::abs(d) : d * d;
  }
  return s / static_cast<double>(x.size());
}

inline AutoencoderModel fit_ae(const FeatureMatrix& X, const AutoencoderConfig& cfg) {
  if (X.rows < 2) throw FitError("autoencoder needs at least 2 training rows, got " + std::to_string(X.rows));
  const auto v = ae_inputs(X);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(v[i] >= -1e-9 && v[i] <= 1.0 + 1e-9)) {
      throw ArgumentError("autoencoder input outside [0,1] at row " + std::to_string(i / X.cols) +
                          ", column '" + X.column_names.at(i % X.cols) + "'");
    }
  }
  auto model = make_autoencoder(X.cols, cfg);
  auto params = model.parameters();

  auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(X.rows)));
  n_val = std::min(n_val, X.rows - 1);
  const std::size_t n_fit = X.rows - n_val;

  nn::Optimizer opt(cfg.optimizer, params, cfg.learning_rate);
  nn::EarlyStopper stopper(cfg.patience);
  std::mt19937_64 rng(mix_seed(cfg.seed, 0xae5));
  std::vector<std::size_t> order(n_fit);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t w = X.cols;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    if (cfg.shuffle) std::shuffle(order.begin(), order.end(), rng);
    double train_total = 0.0;
    for (std::size_t b = 0; b < n_fit; b += cfg.batch_size) {
      const std::size_t e = std::min(n_fit, b + cfg.batch_size);
      std::vector<double> buf((e - b) * w);
      for (std::size_t r = b; r < e; ++r) {
        std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(order[r] * w), w,
                    buf.begin() + static_cast<std::ptrdiff_t>((r - b) * w));
      }
      nn::Tensor x({e - b, w}, std::move(buf));
      opt.zero_grad();
      auto loss = reconstruction_loss(x, model.reconstruct(x), cfg.loss);
      nn::backward(loss);
      opt.step();
      train_total += loss.item() * static_cast<double>(e - b);
    }
    const double train_loss = train_total / static_cast<double>(n_fit);
    const double val_loss = n_val > 0 ? detail::eval_loss(model, v, n_fit, X.rows) : train_loss;
    model.trace.push_back({epoch, train_loss, val_loss, opt.learning_rate});
    if (stopper.check(val_loss, params) == nn::StopDecision::stop) break;
  }
  stopper.restore_best(params);

  model.error_threshold = nearest_rank_percentile(reconstruction_errors(model, X), cfg.threshold_percentile);
  if (!std::isfinite(model.error_threshold)) throw NumericError("autoencoder error threshold is not finite");
  return model;
}

inline AutoencoderModel fit_ae(const FeatureMatrix& X, Preset preset, std::uint64_t seed) {
  auto cfg = default_ae_config(preset);
  cfg.seed = seed;
  return fit_ae(X, cfg);
}

/// label = 1 iff error > threshold (strict).
inline PseudoLabelSet pseudo_label_ae(const AutoencoderModel& model, const FeatureMatrix& X) {
  PseudoLabelSet out;
  out.scores = reconstruction_errors(model, X);
  out.threshold = model.error_threshold;
  out.source = LabelSource::autoencoder;
  out.labels.resize(out.scores.size());
  for (std::size_t i = 0; i < out.scores.size(); ++i) out.labels[i] = out.scores[i] > model.error_threshold ? 1 : 0;
  return out;
}

inline nlohmann::json to_json(const AutoencoderModel& m) {
  const auto& c = m.config;
  return {{"kind", "autoencoder"},
          {"input_width", m.input_width},
          {"hidden1", c.hidden1},
          {"hidden2", c.hidden2},
          {"optimizer", nn::to_string(c.optimizer)},
          {"learning_rate", c.learning_rate},
          {"loss", c.loss == ReconstructionLoss::mae ? "mae" : "squared"},
          {"threshold_percentile", c.threshold_percentile},
          {"error_threshold", m.error_threshold},
          {"seed", c.seed},
          {"parameters", nn::to_json(m.parameters())}};
}

inline AutoencoderModel autoencoder_from_json(const nlohmann::json& j) {
  try {
    AutoencoderConfig c;
    c.hidden1 = j.at("hidden1").get<std::size_t>();
    c.hidden2 = j.at("hidden2").get<std::size_t>();
    c.optimizer = nn::parse_optimizer(j.at("optimizer").get<std::string>());
    c.learning_rate = j.at("learning_rate").get<double>();
    c.loss = j.at("loss").get<std::string>() == "mae" ? ReconstructionLoss::mae : ReconstructionLoss::squared;
    c.threshold_percentile = j.at("threshold_percentile").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    auto m = make_autoencoder(j.at("input_width").get<std::size_t>(), c);
    auto params = m.parameters();
    nn::load_json(params, j.at("parameters"));
    m.error_threshold = j.at("error_threshold").get<double>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("autoencoder document: ") + e.what());
  }
}

}  // namespace pseudolab
