#pragma once

// Training, threshold selection and prediction for the windowed sequence
// classifiers, plus the per-configuration hyperparameter defaults.

#include <algorithm>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "pseudolab/common.hpp"
#include "pseudolab/datagen.hpp"
#include "pseudolab/nn/optim.hpp"
#include "pseudolab/preprocess.hpp"
#include "pseudolab/sequence/lstm.hpp"
#include "pseudolab/sequence/transformer.hpp"

namespace pseudolab {

enum class ModelKind { lstm, transformer, hybrid };
enum class LabelKind { iforest, ae, original };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::lstm: return "lstm";
    case ModelKind::transformer: return "transformer";
    case ModelKind::hybrid: return "hybrid";
  }
  return "lstm";
}

inline ModelKind parse_model_kind(const std::string& s) {
  for (auto k : {ModelKind::lstm, ModelKind::transformer, ModelKind::hybrid}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown model '" + s + "' (expected lstm, transformer or hybrid)");
}

inline std::string to_string(LabelKind k) {
  switch (k) {
    case LabelKind::iforest: return "iforest";
    case LabelKind::ae: return "ae";
    case LabelKind::original: return "original";
  }
  return "iforest";
}

inline LabelKind parse_label_kind(const std::string& s) {
  for (auto k : {LabelKind::iforest, LabelKind::ae, LabelKind::original}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown label source '" + s + "' (expected iforest, ae or original)");
}

struct TrainConfig {
  std::size_t window_size = 100;
  std::size_t batch_size = 64;
  double pos_weight = 30.0;
  double learning_rate = 0.005;
  double weight_decay = 0.001;
  int patience = 7;
  int max_epochs = 50;
  nn::SchedulerKind scheduler = nn::SchedulerKind::reduce_on_plateau;
  double dropout = 0.5;
  std::uint64_t seed = 42;
  bool shuffle = false;

  // Architecture.
  std::size_t hidden = 64;
  std::size_t lstm_layers = 2;
  std::size_t d_model = 64;
  std::size_t heads = 8;
  std::size_t encoder_layers = 3;
  std::size_t ff_hidden = 512;
  double discrepancy_weight = 0.0;
};

/// Hyperparameters for one (model, preset, label source) combination.
inline TrainConfig default_train_config(ModelKind model, Preset preset, LabelKind labels) {
  TrainConfig c;
  const bool decl = preset == Preset::declaration;
  const bool orig = labels == LabelKind::original;
  c.batch_size = 64;
  c.max_epochs = 50;
  if (model == ModelKind::transformer) {
    c.scheduler = nn::SchedulerKind::halve_each_epoch;
    c.dropout = 0.0;
    c.weight_decay = 0.0;
    if (decl) {
      c.window_size = 100;
      c.pos_weight = orig ? 20.0 : 40.0;
      c.learning_rate = 1e-4;
      c.patience = orig ? 10 : 5;
    } else {
      c.window_size = orig ? 100 : 50;
      c.pos_weight = orig ? 10.0 : 20.0;
      c.learning_rate = orig ? 5e-4 : 1e-4;
      c.patience = 10;
    }
    return c;
  }
  c.scheduler = nn::SchedulerKind::reduce_on_plateau;
  c.weight_decay = 0.001;
  c.patience = 7;
  c.pos_weight = orig ? 10.0 : 30.0;
  if (decl) {
    c.window_size = 100;
    c.learning_rate = 0.005;
    if (orig) {
      c.lstm_layers = 1;
      c.dropout = 0.0;
    }
  } else {
    c.window_size = orig ? 100 : 50;
    c.learning_rate = 0.0005;
  }
  return c;
}

/// Either an LSTM or a Transformer; `kind` selects which member is live.
struct SequenceClassifier {
  ModelKind kind = ModelKind::lstm;
  std::size_t input_width = 0;
  TrainConfig config;
  seq::LstmClassifier lstm;
  seq::TransformerClassifier transformer;

  [[nodiscard]] nn::ParameterSet parameters() const {
    return kind == ModelKind::lstm ? lstm.parameters() : transformer.parameters();
  }

  /// Logits [B] and, for the transformer with a positive discrepancy weight,
  /// the discrepancy term.
  [[nodiscard]] seq::TransformerOutput forward(const nn::Tensor& x, bool train, std::mt19937_64& rng) const {
    if (kind == ModelKind::lstm) return {lstm.forward(x, train, rng), {}, {}};
    return transformer.forward(x, train, rng, config.discrepancy_weight > 0.0);
  }
};

inline SequenceClassifier make_classifier(ModelKind kind, std::size_t input_width, const TrainConfig& cfg) {
  if (kind == ModelKind::hybrid) throw ConfigError("hybrid is an ensemble, not a single sequence model");
  SequenceClassifier m;
  m.kind = kind;
  m.input_width = input_width;
  m.config = cfg;
  std::mt19937_64 rng(mix_seed(cfg.seed, kind == ModelKind::lstm ? 0x15a : 0x7f0));
  if (kind == ModelKind::lstm) {
    seq::LstmSpec s;
    s.input_width = input_width;
    s.hidden = cfg.hidden;
    s.layers = cfg.lstm_layers;
    s.dropout = cfg.lstm_layers > 1 ? cfg.dropout : 0.0;
    m.lstm = seq::LstmClassifier(s, rng);
  } else {
    seq::TransformerSpec s;
    s.input_width = input_width;
    s.d_model = cfg.d_model;
    s.heads = cfg.heads;
    s.layers = cfg.encoder_layers;
    s.ff_hidden = cfg.ff_hidden;
    s.dropout = cfg.dropout;
    m.transformer = seq::TransformerClassifier(s, rng);
  }
  return m;
}

/// Copies windows [begin, end) into a [B x T x F] tensor.
inline nn::Tensor window_batch(const WindowedDataset& w, std::size_t begin, std::size_t end) {
  const std::size_t per = w.window_size * w.n_features;
  std::vector<double> buf((end - begin) * per);
  for (std::size_t i = begin; i < end; ++i) {
    const auto src = w.window(i);
    std::copy(src.begin(), src.end(), buf.begin() + static_cast<std::ptrdiff_t>((i - begin) * per));
  }
  return {{end - begin, w.window_size, w.n_features}, std::move(buf)};
}

inline std::vector<double> label_targets(const Labels& labels, std::size_t begin, std::size_t end) {
  return {labels.begin() + static_cast<std::ptrdiff_t>(begin), labels.begin() + static_cast<std::ptrdiff_t>(end)};
}

/// Inference logits for every window, in order.
inline std::vector<double> predict_logits(const SequenceClassifier& model, const WindowedDataset& w,
                                          std::size_t batch = 256) {
  nn::NoGradGuard guard;
  std::mt19937_64 unused(0);
  std::vector<double> out;
  out.reserve(w.size());
  for (std::size_t b = 0; b < w.size(); b += batch) {
    const std::size_t e = std::min(w.size(), b + batch);
    auto logits = model.forward(window_batch(w, b, e), false, unused).logits;
    out.insert(out.end(), logits.data().begin(), logits.data().end());
  }
  return out;
}

inline std::vector<double> predict_proba(const SequenceClassifier& model, const WindowedDataset& w) {
  auto z = predict_logits(model, w);
  for (auto& v : z) v = sigmoid(v);
  return z;
}

/// Mean weighted BCE over a whole window set.
inline double evaluate_loss(const SequenceClassifier& model, const WindowedDataset& w, double pos_weight) {
  const auto z = predict_logits(model, w);
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double y = w.labels[i];
    total += pos_weight * y * nn::softplus_value(-z[i]) + (1.0 - y) * nn::softplus_value(z[i]);
  }
  return z.empty() ? 0.0 : total / static_cast<double>(z.size());
}

struct TrainResult {
  SequenceClassifier model;
  std::vector<nn::EpochRecord> trace;
  int best_epoch = -1;
  bool degenerate_labels = false;
};

/// Trains on `train`, early-stops and schedules on `val` loss, and returns the
/// best-validation snapshot. Batches follow window order unless cfg.shuffle.
inline TrainResult train_classifier(ModelKind kind, const WindowedDataset& train, const WindowedDataset& val,
                                    const TrainConfig& cfg) {
  if (train.size() == 0) throw TrainingError("no training windows (split shorter than the window?)");
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be positive");
  TrainResult r;
  r.model = make_classifier(kind, train.n_features, cfg);
  r.degenerate_labels = std::none_of(train.labels.begin(), train.labels.end(), [](int y) { return y == 1; });

  auto params = r.model.parameters();
  nn::Optimizer opt(nn::OptimizerKind::adam, params, cfg.learning_rate, cfg.weight_decay);
  nn::LrScheduler sched(cfg.scheduler, 0.5, 5);
  nn::EarlyStopper stopper(cfg.patience);
  std::mt19937_64 rng(mix_seed(cfg.seed, 0xd0));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    if (cfg.shuffle) std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      nn::Tensor x;
      std::vector<double> y;
      if (cfg.shuffle) {
        const std::size_t per = train.window_size * train.n_features;
        std::vector<double> buf;
        buf.reserve((e - b) * per);
        for (std::size_t i = b; i < e; ++i) {
          const auto src = train.window(order[i]);
          buf.insert(buf.end(), src.begin(), src.end());
          y.push_back(train.labels[order[i]]);
        }
        x = nn::Tensor({e - b, train.window_size, train.n_features}, std::move(buf));
      } else {
        x = window_batch(train, b, e);
        y = label_targets(train.labels, b, e);
      }
      opt.zero_grad();
      auto out = r.model.forward(x, true, rng);
      auto loss = nn::weighted_bce(out.logits, y, cfg.pos_weight);
      if (out.discrepancy.defined()) loss = nn::add(loss, nn::scale(out.discrepancy, cfg.discrepancy_weight));
      if (!std::isfinite(loss.item())) {
        throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch));
      }
      nn::backward(loss);
      opt.step();
      total += loss.item() * static_cast<double>(e - b);
    }
    const double train_loss = total / static_cast<double>(order.size());
    const double val_loss = val.size() > 0 ? evaluate_loss(r.model, val, cfg.pos_weight) : train_loss;
    const double lr_used = opt.learning_rate;
    sched.on_epoch_end(opt, val_loss);
    r.trace.push_back({epoch, train_loss, val_loss, lr_used});
    if (stopper.check(val_loss, params) == nn::StopDecision::stop) break;
  }
  stopper.restore_best(params);
  r.best_epoch = stopper.best_epoch();
  return r;
}

/// Threshold maximizing F1 over the distinct predicted probabilities
/// (prediction rule p >= t). Ties go to the larger threshold. Falls back to
/// 0.5 when there are no positives or no candidate reaches F1 > 0.
inline double select_threshold(const std::vector<double>& probs, const Labels& labels) {
  if (probs.size() != labels.size()) throw ArgumentError("probabilities and labels differ in length");
  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (positives == 0) return 0.5;
  std::vector<std::size_t> idx(probs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  double best_f1 = 0.0;
  double best_t = 0.5;
  std::size_t tp = 0, fp = 0;
  for (std::size_t k = 0; k < idx.size();) {
    const double t = probs[idx[k]];
    while (k < idx.size() && probs[idx[k]] == t) {
      (labels[idx[k]] == 1 ? tp : fp)++;
      ++k;
    }
    const double f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + (positives - tp));
    if (f1 > best_f1) {
      best_f1 = f1;
      best_t = t;
    }
  }
  return best_f1 > 0.0 ? best_t : 0.5;
}

inline Labels apply_threshold(const std::vector<double>& probs, double threshold) {
  Labels out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] >= threshold ? 1 : 0;
  return out;
}

struct Prediction {
  std::vector<double> probabilities;
  Labels labels;
};

inline Prediction predict(const SequenceClassifier& model, const WindowedDataset& w, double threshold) {
  Prediction p;
  p.probabilities = predict_proba(model, w);
  p.labels = apply_threshold(p.probabilities, threshold);
  return p;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"window_size", c.window_size},
          {"batch_size", c.batch_size},
          {"pos_weight", c.pos_weight},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"patience", c.patience},
          {"max_epochs", c.max_epochs},
          {"scheduler", nn::to_string(c.scheduler)},
          {"dropout", c.dropout},
          {"seed", c.seed},
          {"shuffle", c.shuffle},
          {"hidden", c.hidden},
          {"lstm_layers", c.lstm_layers},
          {"d_model", c.d_model},
          {"heads", c.heads},
          {"encoder_layers", c.encoder_layers},
          {"ff_hidden", c.ff_hidden},
          {"discrepancy_weight", c.discrepancy_weight}};
}

/// Overrides the fields present in `j`; unknown keys are rejected.
inline void apply_json(TrainConfig& c, const nlohmann::json& j) {
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "window_size") c.window_size = v.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "pos_weight") c.pos_weight = v.get<double>();
      else if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "weight_decay") c.weight_decay = v.get<double>();
      else if (key == "patience") c.patience = v.get<int>();
      else if (key == "max_epochs") c.max_epochs = v.get<int>();
      else if (key == "scheduler") c.scheduler = nn::parse_scheduler(v.get<std::string>());
      else if (key == "dropout") c.dropout = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "shuffle") c.shuffle = v.get<bool>();
      else if (key == "hidden") c.hidden = v.get<std::size_t>();
      else if (key == "lstm_layers") c.lstm_layers = v.get<std::size_t>();
      else if (key == "d_model") c.d_model = v.get<std::size_t>();
      else if (key == "heads") c.heads = v.get<std::size_t>();
      else if (key == "encoder_layers") c.encoder_layers = v.get<std::size_t>();
      else if (key == "ff_hidden") c.ff_hidden = v.get<std::size_t>();
      else if (key == "discrepancy_weight") c.discrepancy_weight = v.get<double>();
      else throw ConfigError("unknown training key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("training key '" + key + "': " + e.what());
    }
  }
}

inline nlohmann::json to_json(const SequenceClassifier& m) {
  return {{"kind", to_string(m.kind)},
          {"input_width", m.input_width},
          {"config", to_json(m.config)},
          {"parameters", nn::to_json(m.parameters())}};
}

inline SequenceClassifier classifier_from_json(const nlohmann::json& j) {
  try {
    TrainConfig cfg;
    apply_json(cfg, j.at("config"));
    auto m = make_classifier(parse_model_kind(j.at("kind").get<std::string>()),
                             j.at("input_width").get<std::size_t>(), cfg);
    auto params = m.parameters();
    nn::load_json(params, j.at("parameters"));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("classifier document: ") + e.what());
  }
}

}  // namespace pseudolab
