#pragma once

// End-to-end experiment runner: generate -> clean -> split -> pseudo-label ->
// window -> train -> threshold -> evaluate -> report, with a manifest that
// hashes every artifact.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include <json.hpp>

#include "pseudolab/autoencoder.hpp"
#include "pseudolab/datagen.hpp"
#include "pseudolab/ensemble.hpp"
#include "pseudolab/iforest.hpp"
#include "pseudolab/metrics.hpp"
#include "pseudolab/preprocess.hpp"
#include "pseudolab/sequence/classifier.hpp"

namespace pseudolab {

namespace fs = std::filesystem;

/// An error raised inside a named pipeline stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& message)
      : Error(stage + ": " + message), stage_(std::move(stage)) {}
  [[nodiscard]] const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// ---------------------------------------------------------------------------
// Hashing and small file helpers

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
  return os.str();
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IngestionError("cannot open '" + p.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline std::string sha256_file(const fs::path& p) { return sha256_hex(read_file(p)); }

inline void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IngestionError("cannot open '" + p.string() + "' for writing");
  out << text;
}

inline void write_json(const fs::path& p, const nlohmann::json& j) { write_text(p, j.dump(2) + "\n"); }

inline nlohmann::json read_json(const fs::path& p) {
  try {
    return nlohmann::json::parse(read_file(p));
  } catch (const nlohmann::json::parse_error& e) {
    throw IngestionError("'" + p.string() + "' is not valid JSON: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Label files: CSV with a header; one named column holds 0/1 values.

inline Labels read_label_column(const fs::path& path, const std::vector<std::string>& preferred) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw IngestionError("'" + path.string() + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  std::size_t col = header.size();
  for (const auto& name : preferred) {
    for (std::size_t c = 0; c < header.size() && col == header.size(); ++c) {
      if (header[c] == name) col = c;
    }
    if (col != header.size()) break;
  }
  if (col == header.size()) {
    throw IngestionError("'" + path.string() + "' has none of the expected label columns");
  }
  Labels out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw IngestionError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                           std::to_string(header.size()) + " fields");
    }
    const auto v = fields[col];
    if (v != "0" && v != "1") {
      throw IngestionError(path.string() + ":" + std::to_string(lineno) + ": label must be 0 or 1");
    }
    out.push_back(v == "1" ? 1 : 0);
  }
  return out;
}

inline void write_pseudo_labels(const fs::path& path, const PseudoLabelSet& set) {
  std::ostringstream os;
  os << "row_index,score,label\n";
  for (std::size_t i = 0; i < set.labels.size(); ++i) {
    os << i << ',' << format_double(set.scores.empty() ? 0.0 : set.scores[i]) << ',' << set.labels[i] << '\n';
  }
  write_text(path, os.str());
}

// ---------------------------------------------------------------------------
// Configuration

struct ExperimentConfig {
  Preset preset = Preset::declaration;
  LabelKind label_source = LabelKind::iforest;
  ModelKind model = ModelKind::lstm;

  GeneratorConfig generator;
  std::string dataset;  // existing raw CSV; generation is skipped when set

  IForestParams iforest;
  bool iforest_full_data = false;
  int ae_max_epochs = 50;
  double ae_percentile = 98.4;
  ReconstructionLoss ae_loss = ReconstructionLoss::mae;

  nlohmann::json train_overrides = nlohmann::json::object();
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
};

inline TrainConfig resolve_train_config(const ExperimentConfig& cfg, ModelKind model, std::uint64_t seed) {
  auto tc = default_train_config(model, cfg.preset, cfg.label_source);
  apply_json(tc, cfg.train_overrides);
  tc.seed = seed;
  return tc;
}

namespace detail {

inline const std::vector<std::string>& train_keys() {
  static const std::vector<std::string> k{"window_size", "batch_size",  "pos_weight", "learning_rate",
                                          "weight_decay", "patience",   "max_epochs", "scheduler",
                                          "dropout",      "shuffle",    "hidden",     "lstm_layers",
                                          "d_model",      "heads",      "encoder_layers", "ff_hidden",
                                          "discrepancy_weight"};
  return k;
}

template <typename T>
T get_as(const nlohmann::json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

}  // namespace detail

/// Parses the flat key/value config. Unknown keys are rejected.
inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig c;
  auto& g = c.generator;
  for (const auto& [key, v] : j.items()) {
    using detail::get_as;
    if (key == "preset") c.preset = parse_preset(get_as<std::string>(v, key));
    else if (key == "label_source") c.label_source = parse_label_kind(get_as<std::string>(v, key));
    else if (key == "model") c.model = parse_model_kind(get_as<std::string>(v, key));
    else if (key == "dataset") c.dataset = get_as<std::string>(v, key);
    else if (key == "n_records") g.n_records = get_as<std::size_t>(v, key);
    else if (key == "anomaly_rate") g.anomaly_rate = get_as<double>(v, key);
    else if (key == "original_label_rate") g.original_label_rate = get_as<double>(v, key);
    else if (key == "generator_seed") g.seed = get_as<std::uint64_t>(v, key);
    else if (key == "n_clients") g.n_clients = get_as<int>(v, key);
    else if (key == "n_practitioners") g.n_practitioners = get_as<int>(v, key);
    else if (key == "start_date") g.start = DateTime::parse(get_as<std::string>(v, key));
    else if (key == "end_date") g.end = DateTime::parse(get_as<std::string>(v, key));
    else if (key == "mix_inflated_amount") g.anomaly_mix.inflated_amount = get_as<double>(v, key);
    else if (key == "mix_duplicate_billing") g.anomaly_mix.duplicate_billing = get_as<double>(v, key);
    else if (key == "mix_odd_payment_term") g.anomaly_mix.odd_payment_term = get_as<double>(v, key);
    else if (key == "mix_burst_activity") g.anomaly_mix.burst_activity = get_as<double>(v, key);
    else if (key == "burst_size") g.burst_size = get_as<std::size_t>(v, key);
    else if (key == "duplicate_shift_seconds") g.duplicate_shift_seconds = get_as<std::int64_t>(v, key);
    else if (key == "iforest_trees") c.iforest.n_estimators = get_as<std::size_t>(v, key);
    else if (key == "contamination") c.iforest.contamination = get_as<double>(v, key);
    else if (key == "iforest_max_samples") c.iforest.max_samples = get_as<double>(v, key);
    else if (key == "iforest_max_features") c.iforest.max_features = get_as<double>(v, key);
    else if (key == "iforest_full_data") c.iforest_full_data = get_as<bool>(v, key);
    else if (key == "ae_max_epochs") c.ae_max_epochs = get_as<int>(v, key);
    else if (key == "ae_percentile") c.ae_percentile = get_as<double>(v, key);
    else if (key == "ae_loss") {
      const auto s = get_as<std::string>(v, key);
      if (s != "mae" && s != "squared") throw ConfigError("ae_loss must be mae or squared");
      c.ae_loss = s == "mae" ? ReconstructionLoss::mae : ReconstructionLoss::squared;
    } else if (key == "seeds") c.seeds = get_as<std::vector<std::uint64_t>>(v, key);
    else if (std::find(detail::train_keys().begin(), detail::train_keys().end(), key) != detail::train_keys().end())
      c.train_overrides[key] = v;
    else throw ConfigError("unknown config key '" + key + "'");
  }
  g.preset = c.preset;
  g.validate();
  c.iforest.validate();
  if (c.seeds.empty()) throw ConfigError("seeds must not be empty");
  if (!(c.ae_percentile > 0.0 && c.ae_percentile <= 100.0)) throw ConfigError("ae_percentile must lie in (0, 100]");
  // Surface bad training overrides now rather than mid-run.
  (void)resolve_train_config(c, c.model == ModelKind::transformer ? ModelKind::transformer : ModelKind::lstm, 0);
  return c;
}

/// Every setting, defaults included, in a stable key order.
inline nlohmann::json to_json(const ExperimentConfig& c) {
  const auto& g = c.generator;
  nlohmann::json j{{"preset", to_string(c.preset)},
                   {"label_source", to_string(c.label_source)},
                   {"model", to_string(c.model)},
                   {"dataset", c.dataset},
                   {"n_records", g.n_records},
                   {"anomaly_rate", g.anomaly_rate},
                   {"original_label_rate", g.original_label_rate},
                   {"generator_seed", g.seed},
                   {"n_clients", g.n_clients},
                   {"n_practitioners", g.n_practitioners},
                   {"start_date", g.start.iso()},
                   {"end_date", g.end.iso()},
                   {"mix_inflated_amount", g.anomaly_mix.inflated_amount},
                   {"mix_duplicate_billing", g.anomaly_mix.duplicate_billing},
                   {"mix_odd_payment_term", g.anomaly_mix.odd_payment_term},
                   {"mix_burst_activity", g.anomaly_mix.burst_activity},
                   {"burst_size", g.burst_size},
                   {"duplicate_shift_seconds", g.duplicate_shift_seconds},
                   {"iforest_trees", c.iforest.n_estimators},
                   {"contamination", c.iforest.contamination},
                   {"iforest_max_samples", c.iforest.max_samples},
                   {"iforest_max_features", c.iforest.max_features},
                   {"iforest_full_data", c.iforest_full_data},
                   {"ae_max_epochs", c.ae_max_epochs},
                   {"ae_percentile", c.ae_percentile},
                   {"ae_loss", c.ae_loss == ReconstructionLoss::mae ? "mae" : "squared"},
                   {"seeds", c.seeds}};
  for (const auto& [k, v] : c.train_overrides.items()) j[k] = v;
  return j;
}

inline ExperimentConfig load_experiment_config(const fs::path& p) { return parse_experiment_config(read_json(p)); }

// ---------------------------------------------------------------------------
// Prepared data shared by all seeds

struct PreparedData {
  BillingDataset dataset;  // cleaned, chronological
  std::size_t dropped_rows = 0;
  RowRange unsup_fit;      // first 80%
  std::vector<RowRange> sup;  // 60/20/20
  FeatureMatrix unsup_features;  // scaler fit on unsup_fit
  FeatureMatrix sup_features;    // scaler fit on sup[0]
  FeatureEncoder unsup_encoder, sup_encoder;
  Labels injected;
  Labels original;
};

inline PreparedData prepare_data(const BillingDataset& raw) {
  PreparedData d;
  d.dataset = clean(raw);
  d.dropped_rows = raw.size() - d.dataset.size();
  const std::size_t n = d.dataset.size();
  if (n < 10) throw ArgumentError("only " + std::to_string(n) + " clean rows; need at least 10");
  d.unsup_fit = chronological_split(n, {0.8, 0.2})[0];
  d.sup = chronological_split(n, {0.6, 0.2, 0.2});
  const auto& recs = d.dataset.records;
  const auto head = [&](std::size_t end) {
    return std::vector<BillingRecord>(recs.begin(), recs.begin() + static_cast<std::ptrdiff_t>(end));
  };
  d.unsup_encoder = fit_feature_encoder(head(d.unsup_fit.end), d.dataset.preset);
  d.sup_encoder = fit_feature_encoder(head(d.sup[0].end), d.dataset.preset);
  d.unsup_features = transform(recs, d.unsup_encoder);
  d.sup_features = transform(recs, d.sup_encoder);
  for (const auto& r : recs) {
    d.injected.push_back(r.is_injected_anomaly ? 1 : 0);
    d.original.push_back(r.original_label ? 1 : 0);
  }
  return d;
}

/// Pseudo-labels for every clean row from the configured source.
inline PseudoLabelSet make_label_set(const ExperimentConfig& cfg, const PreparedData& d, std::uint64_t seed,
                                     nlohmann::json* model_doc = nullptr) {
  const auto& X = d.unsup_features;
  if (cfg.label_source == LabelKind::original) {
    PseudoLabelSet s;
    s.labels = d.original;
    s.scores.assign(d.original.begin(), d.original.end());
    return s;
  }
  const auto fit_rows = cfg.iforest_full_data && cfg.label_source == LabelKind::iforest ? X.rows : d.unsup_fit.end;
  const auto X_fit = X.slice_rows(0, fit_rows);
  if (cfg.label_source == LabelKind::iforest) {
    auto p = cfg.iforest;
    p.seed = mix_seed(seed, 0x1f);
    const auto model = fit_iforest(X_fit, p);
    if (model_doc) *model_doc = to_json(model);
    return pseudo_label_iforest(model, X);
  }
  auto ac = default_ae_config(cfg.preset);
  ac.seed = mix_seed(seed, 0xae);
  ac.max_epochs = cfg.ae_max_epochs;
  ac.threshold_percentile = cfg.ae_percentile;
  ac.loss = cfg.ae_loss;
  const auto model = fit_ae(X_fit, ac);
  if (model_doc) *model_doc = to_json(model);
  return pseudo_label_ae(model, X);
}

struct SplitWindows {
  WindowedDataset train, val, test;
  Labels val_injected, test_injected;
};

inline SplitWindows make_split_windows(const PreparedData& d, const Labels& labels, std::size_t window) {
  SplitWindows w;
  const auto block = [&](const RowRange& r) {
    auto X = d.sup_features.slice_rows(r.begin, r.end);
    Labels y(labels.begin() + static_cast<std::ptrdiff_t>(r.begin), labels.begin() + static_cast<std::ptrdiff_t>(r.end));
    auto ws = make_windows(X, y, window, r.begin);
    if (ws.too_short || ws.size() == 0) {
      throw ArgumentError("split rows [" + std::to_string(r.begin) + ", " + std::to_string(r.end) +
                          ") are fewer than the window size " + std::to_string(window));
    }
    return ws;
  };
  w.train = block(d.sup[0]);
  w.val = block(d.sup[1]);
  w.test = block(d.sup[2]);
  for (auto i : w.val.source_row_index) w.val_injected.push_back(d.injected[i]);
  for (auto i : w.test.source_row_index) w.test_injected.push_back(d.injected[i]);
  return w;
}

// ---------------------------------------------------------------------------
// Per-seed run

struct SeedOutcome {
  std::uint64_t seed = 0;
  EvalReport validation;        // vs the label source
  EvalReport test_vs_labels;    // vs the label source
  EvalReport test_vs_injected;  // vs injected ground truth
  std::size_t pseudo_positives = 0;
  bool degenerate_labels = false;
};

inline void write_predictions(const fs::path& path, const WindowedDataset& w, const Labels& injected,
                              const std::vector<std::pair<std::string, std::vector<double>>>& probs,
                              const Labels& pred) {
  std::ostringstream os;
  os << "window_index,source_row_index";
  for (const auto& [name, _] : probs) os << ',' << name;
  os << ",prediction,label,injected\n";
  for (std::size_t i = 0; i < w.size(); ++i) {
    os << i << ',' << w.source_row_index[i];
    for (const auto& [_, p] : probs) os << ',' << format_double(p[i]);
    os << ',' << pred[i] << ',' << w.labels[i] << ',' << injected[i] << '\n';
  }
  write_text(path, os.str());
}

inline std::string trace_csv(const std::vector<nn::EpochRecord>& trace) {
  std::ostringstream os;
  nn::write_trace_csv(os, trace);
  return os.str();
}

struct StageTracker {
  nlohmann::json stages = nlohmann::json::array();
  std::string current;

  template <typename F>
  auto run(const std::string& name, F&& f) {
    current = name;
    try {
      if constexpr (std::is_void_v<decltype(f())>) {
        f();
        stages.push_back({{"stage", name}, {"status", "ok"}});
      } else {
        auto r = f();
        stages.push_back({{"stage", name}, {"status", "ok"}});
        return r;
      }
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      stages.push_back({{"stage", name}, {"status", "failed"}, {"error", e.what()}});
      throw StageError(name, e.what());
    }
  }
};

inline SeedOutcome run_seed(const ExperimentConfig& cfg, const PreparedData& d, std::uint64_t seed,
                            const fs::path& dir, StageTracker& st) {
  SeedOutcome out;
  out.seed = seed;
  fs::create_directories(dir);
  const std::string tag = "seed " + std::to_string(seed) + " ";

  nlohmann::json labeler;
  const auto labels = st.run(tag + "pseudolabel", [&] { return make_label_set(cfg, d, seed, &labeler); });
  out.pseudo_positives = labels.positives();
  write_pseudo_labels(dir / "pseudo_labels.csv", labels);
  if (!labeler.is_null()) write_json(dir / "labeler.json", labeler);

  std::vector<ModelKind> bases;
  if (cfg.model == ModelKind::hybrid) bases = {ModelKind::lstm, ModelKind::transformer};
  else bases = {cfg.model};

  std::map<ModelKind, Prediction> val_pred, test_pred;
  std::map<ModelKind, double> thresholds;
  SplitWindows windows;
  for (auto kind : bases) {
    const auto tc = resolve_train_config(cfg, kind, seed);
    windows = st.run(tag + "window", [&] { return make_split_windows(d, labels.labels, tc.window_size); });
    const auto trained = st.run(tag + "train " + to_string(kind),
                                [&] { return train_classifier(kind, windows.train, windows.val, tc); });
    out.degenerate_labels = out.degenerate_labels || trained.degenerate_labels;
    write_json(dir / (to_string(kind) + "_model.json"), to_json(trained.model));
    write_text(dir / (to_string(kind) + "_trace.csv"), trace_csv(trained.trace));
    st.run(tag + "threshold " + to_string(kind), [&] {
      auto vp = predict_proba(trained.model, windows.val);
      thresholds[kind] = select_threshold(vp, windows.val.labels);
      val_pred[kind] = {vp, apply_threshold(vp, thresholds[kind])};
      test_pred[kind] = predict(trained.model, windows.test, thresholds[kind]);
    });
  }

  st.run(tag + "evaluate", [&] {
    Labels val_final, test_final;
    std::vector<std::pair<std::string, std::vector<double>>> vprob, tprob;
    double threshold = 0.5;
    if (cfg.model == ModelKind::hybrid) {
      const auto& lv = val_pred[ModelKind::lstm];
      const auto& tv = val_pred[ModelKind::transformer];
      if (lv.labels.size() != tv.labels.size()) {
        throw ConfigError("hybrid base models must share window_size so their predictions align");
      }
      const auto ens = fit_meta(lv.labels, tv.labels, windows.val.labels, to_string(cfg.label_source));
      write_json(dir / "hybrid_model.json", to_json(ens));
      val_final = predict_meta(ens, lv.labels, tv.labels);
      test_final = predict_meta(ens, test_pred[ModelKind::lstm].labels, test_pred[ModelKind::transformer].labels);
      vprob = {{"lstm_probability", lv.probabilities}, {"transformer_probability", tv.probabilities}};
      tprob = {{"lstm_probability", test_pred[ModelKind::lstm].probabilities},
               {"transformer_probability", test_pred[ModelKind::transformer].probabilities}};
    } else {
      val_final = val_pred[cfg.model].labels;
      test_final = test_pred[cfg.model].labels;
      vprob = {{"probability", val_pred[cfg.model].probabilities}};
      tprob = {{"probability", test_pred[cfg.model].probabilities}};
      threshold = thresholds[cfg.model];
    }
    write_predictions(dir / "predictions_val.csv", windows.val, windows.val_injected, vprob, val_final);
    write_predictions(dir / "predictions_test.csv", windows.test, windows.test_injected, tprob, test_final);
    out.validation = compute_metrics(val_final, windows.val.labels);
    out.validation.split = "validation";
    out.test_vs_labels = compute_metrics(test_final, windows.test.labels);
    out.test_vs_injected = compute_metrics(test_final, windows.test_injected);
    out.test_vs_injected.split = "test_injected";
    for (auto* r : {&out.validation, &out.test_vs_labels, &out.test_vs_injected}) {
      r->threshold = threshold;
      r->seeds = {seed};
    }
  });

  nlohmann::json report{{"seed", seed},
                        {"preset", to_string(cfg.preset)},
                        {"label_source", to_string(cfg.label_source)},
                        {"model", to_string(cfg.model)},
                        {"pseudo_positives", out.pseudo_positives},
                        {"degenerate_labels", out.degenerate_labels},
                        {"validation", to_json(out.validation)},
                        {"test_vs_labels", to_json(out.test_vs_labels)},
                        {"test_vs_injected", to_json(out.test_vs_injected)}};
  write_json(dir / "report.json", report);
  const std::string name = to_string(cfg.label_source) + " " + to_string(cfg.model);
  write_text(dir / "report.txt", "seed " + std::to_string(seed) + "\n\nValidation (vs labels)\n" +
                                     metrics_table({{name, out.validation}}) + "\nTest (vs labels)\n" +
                                     metrics_table({{name, out.test_vs_labels}}) + "\nTest (vs injected)\n" +
                                     metrics_table({{name, out.test_vs_injected}}));
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single seed
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  if (v.empty()) return m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return m;
}

inline nlohmann::json aggregate_reports(const std::vector<EvalReport>& reports) {
  nlohmann::json j;
  for (const char* metric : {"accuracy", "precision", "recall", "f1"}) {
    std::vector<double> v;
    for (const auto& r : reports) v.push_back(to_json(r).at(metric).get<double>());
    const auto ms = mean_std(v);
    j[metric] = {{"mean", ms.mean}, {"std", ms.std}};
  }
  return j;
}

inline std::string aggregate_table(const std::string& name, const std::vector<EvalReport>& reports) {
  const auto agg = aggregate_reports(reports);
  std::ostringstream os;
  const int w = static_cast<int>(std::max<std::size_t>(5, name.size()));
  os << std::left << std::setw(w) << "Model" << std::right;
  for (const char* h : {"Accuracy", "Precision", "Recall", "F1-score"}) os << std::setw(18) << h;
  os << '\n' << std::left << std::setw(w) << name << std::right << std::fixed << std::setprecision(3);
  for (const char* m : {"accuracy", "precision", "recall", "f1"}) {
    std::ostringstream cell;
    cell << std::fixed << std::setprecision(3) << agg[m]["mean"].get<double>() << " +- "
         << agg[m]["std"].get<double>();
    os << std::setw(18) << cell.str();
  }
  os << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// run_experiment

struct RunResult {
  fs::path dir;
  std::vector<SeedOutcome> seeds;
  nlohmann::json manifest;
};

inline std::string range_json_key(const RowRange& r) {
  return "[" + std::to_string(r.begin) + ", " + std::to_string(r.end) + ")";
}

inline void finalize_manifest(const fs::path& dir, nlohmann::json& manifest) {
  nlohmann::json files = nlohmann::json::object();
  std::vector<fs::path> paths;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") paths.push_back(e.path());
  }
  std::sort(paths.begin(), paths.end());
  for (const auto& p : paths) files[fs::relative(p, dir).generic_string()] = sha256_file(p);
  manifest["files"] = files;
  write_json(dir / "manifest.json", manifest);
}

/// Runs every seed and writes the run directory. On failure the manifest
/// records the failing stage and a StageError is thrown.
inline RunResult run_experiment(const ExperimentConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  RunResult result;
  result.dir = dir;
  StageTracker st;
  nlohmann::json manifest{{"config", to_json(cfg)}, {"seeds", cfg.seeds}, {"status", "running"}};
  manifest["config_sha256"] = sha256_hex(manifest["config"].dump());
  try {
    const auto raw = st.run("generate", [&] {
      if (!cfg.dataset.empty()) {
        auto ds = read_csv(cfg.dataset);
        if (ds.preset != cfg.preset) throw ConfigError("dataset preset does not match config preset");
        return ds;
      }
      auto g = cfg.generator;
      g.preset = cfg.preset;
      return generate_dataset(g);
    });
    write_csv(raw, (dir / "dataset.csv").string());
    const auto data = st.run("clean+split", [&] { return prepare_data(raw); });
    const auto& d = data;
    const auto fit_end = cfg.iforest_full_data && cfg.label_source == LabelKind::iforest ? d.dataset.size()
                                                                                          : d.unsup_fit.end;
    manifest["rows"] = {{"raw", raw.size()}, {"clean", d.dataset.size()}, {"dropped", d.dropped_rows}};
    manifest["index_ranges"] = {
        {"pseudolabel_fit", {0, cfg.label_source == LabelKind::original ? 0 : fit_end}},
        {"scaler_fit_unsupervised", {d.unsup_fit.begin, d.unsup_fit.end}},
        {"scaler_fit_supervised", {d.sup[0].begin, d.sup[0].end}},
        {"train", {d.sup[0].begin, d.sup[0].end}},
        {"validation", {d.sup[1].begin, d.sup[1].end}},
        {"test", {d.sup[2].begin, d.sup[2].end}}};
    write_json(dir / "encoder_unsupervised.json", to_json(d.unsup_encoder));
    write_json(dir / "encoder_supervised.json", to_json(d.sup_encoder));

    for (auto seed : cfg.seeds) {
      result.seeds.push_back(run_seed(cfg, d, seed, dir / ("seed_" + std::to_string(seed)), st));
    }

    st.run("report", [&] {
      std::vector<EvalReport> val, tl, ti;
      for (const auto& s : result.seeds) {
        val.push_back(s.validation);
        tl.push_back(s.test_vs_labels);
        ti.push_back(s.test_vs_injected);
      }
      nlohmann::json per_seed = nlohmann::json::array();
      for (const auto& s : result.seeds) {
        per_seed.push_back({{"seed", s.seed},
                            {"validation", to_json(s.validation)},
                            {"test_vs_labels", to_json(s.test_vs_labels)},
                            {"test_vs_injected", to_json(s.test_vs_injected)}});
      }
      const nlohmann::json agg{{"preset", to_string(cfg.preset)},
                               {"label_source", to_string(cfg.label_source)},
                               {"model", to_string(cfg.model)},
                               {"seeds", cfg.seeds},
                               {"validation", aggregate_reports(val)},
                               {"test_vs_labels", aggregate_reports(tl)},
                               {"test_vs_injected", aggregate_reports(ti)},
                               {"per_seed", per_seed}};
      write_json(dir / "aggregate_report.json", agg);
      const std::string name = to_string(cfg.label_source) + " " + to_string(cfg.model);
      write_text(dir / "aggregate_report.txt",
                 "Preset " + to_string(cfg.preset) + ", " + std::to_string(cfg.seeds.size()) +
                     " seed(s), mean +- std\n\nValidation (vs labels)\n" + aggregate_table(name, val) +
                     "\nTest (vs labels)\n" + aggregate_table(name, tl) + "\nTest (vs injected)\n" +
                     aggregate_table(name, ti));
    });
    manifest["status"] = "ok";
  } catch (const StageError& e) {
    manifest["status"] = "failed";
    manifest["failed_stage"] = e.stage();
    manifest["error"] = e.what();
    manifest["stages"] = st.stages;
    finalize_manifest(dir, manifest);
    throw;
  } catch (const std::exception& e) {
    manifest["status"] = "failed";
    manifest["failed_stage"] = st.current;
    manifest["error"] = e.what();
    manifest["stages"] = st.stages;
    finalize_manifest(dir, manifest);
    throw StageError(st.current.empty() ? "run" : st.current, e.what());
  }
  manifest["stages"] = st.stages;
  finalize_manifest(dir, manifest);
  result.manifest = manifest;
  return result;
}

/// Re-hashes every file listed in the manifest; returns the mismatching paths.
inline std::vector<std::string> verify_manifest(const fs::path& dir) {
  const auto m = read_json(dir / "manifest.json");
  std::vector<std::string> bad;
  for (const auto& [rel, hash] : m.at("files").items()) {
    const auto p = dir / rel;
    if (!fs::exists(p) || sha256_file(p) != hash.get<std::string>()) bad.push_back(rel);
  }
  return bad;
}

// ---------------------------------------------------------------------------
// compare

struct SeedComparison {
  std::uint64_t seed = 0;
  McNemarResult mcnemar;
  EvalReport a, b;
};

struct Comparison {
  std::vector<SeedComparison> seeds;
  std::string table;
};

/// McNemar between two runs' test predictions for every seed they share.
inline Comparison compare_runs(const fs::path& run_a, const fs::path& run_b) {
  const auto ma = read_json(run_a / "manifest.json");
  const auto mb = read_json(run_b / "manifest.json");
  for (const auto* m : {&ma, &mb}) {
    if (m->value("status", "") != "ok") throw ComparisonError("run did not complete successfully");
  }
  for (const char* key : {"preset", "label_source"}) {
    if (ma["config"][key] != mb["config"][key]) {
      throw ComparisonError(std::string("runs differ in ") + key + ": " + ma["config"][key].dump() + " vs " +
                            mb["config"][key].dump());
    }
  }
  if (ma["index_ranges"]["test"] != mb["index_ranges"]["test"] || ma["rows"] != mb["rows"]) {
    throw ComparisonError("runs do not share the same test split");
  }
  Comparison out;
  std::vector<std::pair<std::string, EvalReport>> rows;
  std::ostringstream tables;
  const std::string na = ma["config"]["model"].get<std::string>();
  const std::string nb = mb["config"]["model"].get<std::string>();
  for (const auto& s : ma["seeds"]) {
    const auto seed = s.get<std::uint64_t>();
    const auto sub = "seed_" + std::to_string(seed);
    if (!fs::exists(run_b / sub / "predictions_test.csv")) continue;
    const auto pa = run_a / sub / "predictions_test.csv";
    const auto pb = run_b / sub / "predictions_test.csv";
    const auto actual_a = read_label_column(pa, {"label"});
    const auto actual_b = read_label_column(pb, {"label"});
    const auto ra = read_label_column(pa, {"prediction"});
    const auto rb = read_label_column(pb, {"prediction"});
    if (actual_a != actual_b) throw ComparisonError("runs' test labels differ for seed " + std::to_string(seed));
    SeedComparison c;
    c.seed = seed;
    c.mcnemar = mcnemar(ra, rb, actual_a);
    c.a = compute_metrics(ra, actual_a);
    c.b = compute_metrics(rb, actual_a);
    tables << "seed " << seed << "\n"
           << metrics_table({{"A: " + na, c.a}, {"B: " + nb, c.b}}) << mcnemar_table(na + " vs " + nb, c.mcnemar)
           << '\n';
    out.seeds.push_back(c);
  }
  if (out.seeds.empty()) throw ComparisonError("runs share no seeds");
  out.table = tables.str();
  return out;
}

inline nlohmann::json to_json(const Comparison& c) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : c.seeds) {
    arr.push_back({{"seed", s.seed}, {"mcnemar", to_json(s.mcnemar)}, {"a", to_json(s.a)}, {"b", to_json(s.b)}});
  }
  return arr;
}

}  // namespace pseudolab
