#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pseudolab/common.hpp"
#include "pseudolab/datagen.hpp"

namespace pseudolab {

enum class ColumnKind { numeric_scaled, cyclic_sin, cyclic_cos, onehot, raw_year };

inline std::string to_string(ColumnKind k) {
  switch (k) {
    case ColumnKind::numeric_scaled: return "numeric_scaled";
    case ColumnKind::cyclic_sin: return "cyclic_sin";
    case ColumnKind::cyclic_cos: return "cyclic_cos";
    case ColumnKind::onehot: return "onehot";
    case ColumnKind::raw_year: return "raw_year";
  }
  return "numeric_scaled";
}

inline ColumnKind parse_column_kind(const std::string& s) {
  for (auto k : {ColumnKind::numeric_scaled, ColumnKind::cyclic_sin, ColumnKind::cyclic_cos,
                 ColumnKind::onehot, ColumnKind::raw_year}) {
    if (to_string(k) == s) return k;
  }
  throw SchemaError("unknown column kind '" + s + "'");
}

/// Min-max parameters for the scaled columns, keyed by column name.
struct ScalerParams {
  std::vector<std::string> columns;
  std::vector<double> min;
  std::vector<double> max;

  bool operator==(const ScalerParams&) const = default;
};

/// Dense row-major design matrix with per-column metadata.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  std::vector<std::string> column_names;
  std::vector<ColumnKind> column_kinds;
  ScalerParams scaler;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t r, std::vector<std::string> names, std::vector<ColumnKind> kinds)
      : rows(r), cols(names.size()), values(r * names.size(), 0.0),
        column_names(std::move(names)), column_kinds(std::move(kinds)) {}

  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  [[nodiscard]] double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  [[nodiscard]] std::span<const double> row(std::size_t r) const {
    return {values.data() + r * cols, cols};
  }

  [[nodiscard]] std::size_t column_index(const std::string& name) const {
    const auto it = std::find(column_names.begin(), column_names.end(), name);
    if (it == column_names.end()) throw SchemaError("no column named '" + name + "'");
    return static_cast<std::size_t>(it - column_names.begin());
  }

  [[nodiscard]] FeatureMatrix slice_rows(std::size_t begin, std::size_t end) const {
    if (begin > end || end > rows) throw ArgumentError("row slice out of range");
    FeatureMatrix out = *this;
    out.rows = end - begin;
    out.values.assign(values.begin() + static_cast<std::ptrdiff_t>(begin * cols),
                      values.begin() + static_cast<std::ptrdiff_t>(end * cols));
    return out;
  }
};

// ---------------------------------------------------------------------------
// Cyclical encoding

struct CyclicPair {
  double sin_component;
  double cos_component;
};

inline CyclicPair encode_cyclical(double x, double period) {
  if (!(period > 0.0)) throw ArgumentError("cyclical period must be positive");
  const double angle = 2.0 * std::numbers::pi * x / period;
  return {std::sin(angle), std::cos(angle)};
}

struct CyclicField {
  const char* name;
  double period;
};

/// Field order of the expanded timestamp. Day uses period 31 for every month.
inline constexpr std::array<CyclicField, 6> kCyclicFields{{{"month", 12.0},
                                                           {"day", 31.0},
                                                           {"day_of_week", 7.0},
                                                           {"hour", 24.0},
                                                           {"minute", 60.0},
                                                           {"second", 60.0}}};

struct TimestampFeatures {
  std::array<double, 12> cyclic{};  // (sin, cos) per entry of kCyclicFields
  double year = 0.0;
};

inline TimestampFeatures expand_timestamp(const DateTime& t) {
  if (!t.valid()) throw ArgumentError("invalid datetime " + t.iso());
  const std::array<int, 6> raw{t.month, t.day, t.day_of_week(), t.hour, t.minute, t.second};
  TimestampFeatures f;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto p = encode_cyclical(raw[i], kCyclicFields[i].period);
    f.cyclic[2 * i] = p.sin_component;
    f.cyclic[2 * i + 1] = p.cos_component;
  }
  f.year = t.year;
  return f;
}

// ---------------------------------------------------------------------------
// Scaling

inline bool is_scaled_kind(ColumnKind k) {
  return k == ColumnKind::numeric_scaled || k == ColumnKind::raw_year;
}

inline ScalerParams fit_scaler(const FeatureMatrix& train) {
  ScalerParams p;
  for (std::size_t c = 0; c < train.cols; ++c) {
    if (!is_scaled_kind(train.column_kinds[c])) continue;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < train.rows; ++r) {
      lo = std::min(lo, train.at(r, c));
      hi = std::max(hi, train.at(r, c));
    }
    if (train.rows == 0) lo = hi = 0.0;
    p.columns.push_back(train.column_names[c]);
    p.min.push_back(lo);
    p.max.push_back(hi);
  }
  return p;
}

/// (x - min) / (max - min); constant training columns map to 0. Values outside
/// the training range are not clipped.
inline double scale_value(double x, double lo, double hi) {
  if (hi == lo) return 0.0;
  return (x - lo) / (hi - lo);
}

inline FeatureMatrix apply_scaler(FeatureMatrix data, const ScalerParams& params) {
  std::vector<std::string> scaled;
  for (std::size_t c = 0; c < data.cols; ++c) {
    if (is_scaled_kind(data.column_kinds[c])) scaled.push_back(data.column_names[c]);
  }
  if (scaled != params.columns) {
    throw SchemaError("scaler columns do not match the matrix's numeric columns");
  }
  std::size_t j = 0;
  for (std::size_t c = 0; c < data.cols; ++c) {
    if (!is_scaled_kind(data.column_kinds[c])) continue;
    for (std::size_t r = 0; r < data.rows; ++r) {
      data.at(r, c) = scale_value(data.at(r, c), params.min[j], params.max[j]);
    }
    ++j;
  }
  data.scaler = params;
  return data;
}

// ---------------------------------------------------------------------------
// One-hot encoding

struct Vocabulary {
  std::string name;
  std::vector<std::string> categories;
  bool unknown_slot = true;

  [[nodiscard]] std::size_t width() const { return categories.size() + (unknown_slot ? 1 : 0); }
  bool operator==(const Vocabulary&) const = default;
};

inline std::vector<double> one_hot(const std::string& value, const Vocabulary& vocab) {
  if (vocab.categories.empty()) throw ConfigError("empty vocabulary for '" + vocab.name + "'");
  std::vector<double> v(vocab.width(), 0.0);
  const auto it = std::find(vocab.categories.begin(), vocab.categories.end(), value);
  if (it != vocab.categories.end()) {
    v[static_cast<std::size_t>(it - vocab.categories.begin())] = 1.0;
  } else if (vocab.unknown_slot) {
    v.back() = 1.0;
  } else {
    throw ArgumentError("category '" + value + "' not in vocabulary '" + vocab.name + "'");
  }
  return v;
}

// ---------------------------------------------------------------------------
// Cleaning

inline bool is_clean_row(const BillingRecord& r) {
  return !std::isnan(r.amount_submitted) && !std::isnan(r.amount_accepted) &&
         !std::isnan(r.amount_insured) && r.amount_submitted > 0.0;
}

/// Drops rows with missing amounts or non-positive amount_submitted. Other
/// outliers are kept.
inline BillingDataset clean(const BillingDataset& data) {
  BillingDataset out;
  out.preset = data.preset;
  out.records.reserve(data.records.size());
  std::copy_if(data.records.begin(), data.records.end(), std::back_inserter(out.records),
               is_clean_row);
  return out;
}

// ---------------------------------------------------------------------------
// Record -> feature encoding

inline const std::vector<std::string>& numeric_columns() {
  static const std::vector<std::string> cols{"amount_submitted", "amount_accepted",
                                             "amount_insured",   "total_ops_accepted",
                                             "total_ops_stopped", "early_payment"};
  return cols;
}

/// Vocabularies and scaler fitted on a training partition.
struct FeatureEncoder {
  Preset preset = Preset::declaration;
  std::vector<Vocabulary> vocabularies;
  ScalerParams scaler;

  bool operator==(const FeatureEncoder&) const = default;
};

namespace detail {

inline std::string categorical_value(const BillingRecord& r, const std::string& name) {
  if (name == "payment_term") return std::to_string(r.payment_term);
  if (name == "rejection_reason") return r.rejection_reason;
  if (name == "operation_code") return r.operation_code;
  throw SchemaError("unknown categorical field '" + name + "'");
}

inline std::vector<std::string> categorical_fields(Preset p) {
  std::vector<std::string> f{"payment_term", "rejection_reason"};
  if (p == Preset::operation) f.emplace_back("operation_code");
  return f;
}

}  // namespace detail

/// Encodes records without scaling: numeric columns hold raw values.
inline FeatureMatrix encode_unscaled(const std::vector<BillingRecord>& records,
                                     const FeatureEncoder& enc) {
  std::vector<std::string> names;
  std::vector<ColumnKind> kinds;
  for (const auto& c : numeric_columns()) {
    names.push_back(c);
    kinds.push_back(ColumnKind::numeric_scaled);
  }
  names.emplace_back("year");
  kinds.push_back(ColumnKind::raw_year);
  for (const auto& f : kCyclicFields) {
    names.push_back(std::string{f.name} + "_sin");
    kinds.push_back(ColumnKind::cyclic_sin);
    names.push_back(std::string{f.name} + "_cos");
    kinds.push_back(ColumnKind::cyclic_cos);
  }
  for (const auto& v : enc.vocabularies) {
    for (const auto& cat : v.categories) {
      names.push_back(v.name + "=" + cat);
      kinds.push_back(ColumnKind::onehot);
    }
    if (v.unknown_slot) {
      names.push_back(v.name + "=<unknown>");
      kinds.push_back(ColumnKind::onehot);
    }
  }
  FeatureMatrix m(records.size(), std::move(names), std::move(kinds));
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    std::size_t c = 0;
    m.at(i, c++) = r.amount_submitted;
    m.at(i, c++) = r.amount_accepted;
    m.at(i, c++) = r.amount_insured;
    m.at(i, c++) = static_cast<double>(r.total_ops_accepted);
    m.at(i, c++) = static_cast<double>(r.total_ops_stopped);
    m.at(i, c++) = r.early_payment ? 1.0 : 0.0;
    const auto t = expand_timestamp(r.timestamp);
    m.at(i, c++) = t.year;
    for (double v : t.cyclic) m.at(i, c++) = v;
    for (const auto& vocab : enc.vocabularies) {
      for (double v : one_hot(detail::categorical_value(r, vocab.name), vocab)) m.at(i, c++) = v;
    }
  }
  return m;
}

/// Fits vocabularies (sorted categories seen in `train`, plus an unknown slot)
/// and the min-max scaler on the training rows only.
inline FeatureEncoder fit_feature_encoder(const std::vector<BillingRecord>& train, Preset preset) {
  FeatureEncoder enc;
  enc.preset = preset;
  for (const auto& field : detail::categorical_fields(preset)) {
    std::set<std::string> seen;
    for (const auto& r : train) seen.insert(detail::categorical_value(r, field));
    Vocabulary v{field, {seen.begin(), seen.end()}, true};
    if (field == "payment_term") {
      std::sort(v.categories.begin(), v.categories.end(),
                [](const auto& a, const auto& b) { return std::stoi(a) < std::stoi(b); });
    }
    if (v.categories.empty()) throw ConfigError("no training rows to build vocabulary '" + field + "'");
    enc.vocabularies.push_back(std::move(v));
  }
  enc.scaler = fit_scaler(encode_unscaled(train, enc));
  return enc;
}

inline FeatureMatrix transform(const std::vector<BillingRecord>& records, const FeatureEncoder& enc) {
  return apply_scaler(encode_unscaled(records, enc), enc.scaler);
}

// ---------------------------------------------------------------------------
// Chronological splits

struct RowRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  [[nodiscard]] std::size_t size() const { return end - begin; }
  bool operator==(const RowRange&) const = default;
};

/// Contiguous partitions with boundaries at floor(cumulative_fraction * n).
inline std::vector<RowRange> chronological_split(std::size_t n, const std::vector<double>& fractions) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw ConfigError("split fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  std::vector<RowRange> out;
  double cumulative = 0.0;
  std::size_t begin = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    cumulative += fractions[i];
    const std::size_t end = i + 1 == fractions.size()
                                ? n
                                : static_cast<std::size_t>(std::floor(cumulative * static_cast<double>(n) + 1e-9));
    out.push_back({begin, end});
    begin = end;
  }
  return out;
}

/// Parses "60/20/20" style split strings into fractions.
inline std::vector<double> parse_split(const std::string& text) {
  std::vector<double> parts;
  std::stringstream ss(text);
  std::string tok;
  double total = 0.0;
  while (std::getline(ss, tok, '/')) {
    try {
      parts.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ConfigError("bad split '" + text + "'");
    }
    total += parts.back();
  }
  if (parts.empty() || !(total > 0.0)) throw ConfigError("bad split '" + text + "'");
  for (double& p : parts) p /= total;
  return parts;
}

// ---------------------------------------------------------------------------
// Sliding windows

/// Stride-1 windows over a row-major block. Window i covers rows [i, i + W)
/// of `steps` and carries the label of its final row.
struct WindowedDataset {
  std::vector<double> steps;  // rows x n_features, the source block
  std::size_t n_features = 0;
  std::size_t window_size = 0;
  Labels labels;
  std::vector<std::size_t> source_row_index;
  bool too_short = false;

  [[nodiscard]] std::size_t size() const { return labels.size(); }

  /// Contiguous [window_size x n_features] view of window i.
  [[nodiscard]] std::span<const double> window(std::size_t i) const {
    return {steps.data() + i * n_features, window_size * n_features};
  }
  [[nodiscard]] std::span<const double> step(std::size_t i, std::size_t t) const {
    return {steps.data() + (i + t) * n_features, n_features};
  }
};

/// `row_offset` is added to source_row_index so indices can refer to a larger
/// table the block was cut from.
inline WindowedDataset make_windows(const FeatureMatrix& features, const Labels& labels,
                                    std::size_t window_size, std::size_t row_offset = 0) {
  if (window_size < 1) throw ArgumentError("window_size must be >= 1");
  if (labels.size() != features.rows) {
    throw ArgumentError("labels length " + std::to_string(labels.size()) +
                        " does not match row count " + std::to_string(features.rows));
  }
  WindowedDataset w;
  w.n_features = features.cols;
  w.window_size = window_size;
  w.steps = features.values;
  if (features.rows < window_size) {
    w.too_short = true;
    return w;
  }
  const std::size_t n = features.rows - window_size + 1;
  w.labels.reserve(n);
  w.source_row_index.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t last = i + window_size - 1;
    w.labels.push_back(labels[last]);
    w.source_row_index.push_back(last + row_offset);
  }
  return w;
}

// ---------------------------------------------------------------------------
// Serialization: CSV values plus a JSON sidecar with column metadata.

inline nlohmann::json to_json(const ScalerParams& p) {
  return {{"columns", p.columns}, {"min", p.min}, {"max", p.max}};
}

inline ScalerParams scaler_from_json(const nlohmann::json& j) {
  ScalerParams p;
  p.columns = j.at("columns").get<std::vector<std::string>>();
  p.min = j.at("min").get<std::vector<double>>();
  p.max = j.at("max").get<std::vector<double>>();
  return p;
}

inline nlohmann::json to_json(const FeatureEncoder& enc) {
  nlohmann::json vocabs = nlohmann::json::array();
  for (const auto& v : enc.vocabularies) {
    vocabs.push_back({{"name", v.name}, {"categories", v.categories}, {"unknown_slot", v.unknown_slot}});
  }
  return {{"preset", to_string(enc.preset)}, {"vocabularies", vocabs}, {"scaler", to_json(enc.scaler)}};
}

inline FeatureEncoder encoder_from_json(const nlohmann::json& j) {
  FeatureEncoder enc;
  enc.preset = parse_preset(j.at("preset").get<std::string>());
  for (const auto& v : j.at("vocabularies")) {
    enc.vocabularies.push_back({v.at("name").get<std::string>(),
                                v.at("categories").get<std::vector<std::string>>(),
                                v.at("unknown_slot").get<bool>()});
  }
  enc.scaler = scaler_from_json(j.at("scaler"));
  return enc;
}

inline nlohmann::json sidecar_json(const FeatureMatrix& m) {
  std::vector<std::string> kinds;
  for (auto k : m.column_kinds) kinds.push_back(to_string(k));
  return {{"column_names", m.column_names}, {"column_kinds", kinds}, {"scaler", to_json(m.scaler)}};
}

inline void write_feature_csv(const FeatureMatrix& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot open '" + path + "' for writing");
  for (std::size_t c = 0; c < m.cols; ++c) out << (c ? "," : "") << m.column_names[c];
  out << '\n';
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) out << (c ? "," : "") << format_double(m.at(r, c));
    out << '\n';
  }
  std::ofstream side(path + ".json", std::ios::binary);
  side << sidecar_json(m).dump(2) << '\n';
}

/// Reads a feature CSV; column kinds come from the sidecar when present and
/// default to numeric_scaled otherwise.
inline FeatureMatrix read_feature_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw IngestionError("row 1: missing header");
  FeatureMatrix m;
  for (auto f : split_csv_line(line)) m.column_names.emplace_back(f);
  m.cols = m.column_names.size();
  m.column_kinds.assign(m.cols, ColumnKind::numeric_scaled);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != m.cols) {
      throw IngestionError("row " + std::to_string(line_no) + ": expected " + std::to_string(m.cols) +
                           " fields, got " + std::to_string(f.size()));
    }
    for (std::size_t c = 0; c < m.cols; ++c) {
      m.values.push_back(detail::parse_number<double>(f[c], line_no, m.column_names[c]));
    }
    ++m.rows;
  }
  std::ifstream side(path + ".json");
  if (side) {
    const auto j = nlohmann::json::parse(side);
    const auto kinds = j.at("column_kinds").get<std::vector<std::string>>();
    if (kinds.size() != m.cols) throw SchemaError("sidecar column count does not match CSV");
    for (std::size_t c = 0; c < m.cols; ++c) m.column_kinds[c] = parse_column_kind(kinds[c]);
    m.scaler = scaler_from_json(j.at("scaler"));
  }
  return m;
}

}  // namespace pseudolab
