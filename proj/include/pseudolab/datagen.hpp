#pragma once

// Synthetic billing data with controlled anomaly injection.
//
// Two schema presets mirror a declaration-level and an operation-level billing
// extract. Baseline amounts are log-normal with a per-client location. A fixed
// budget of floor(rate * n) rows is marked as injected anomalies, split across
// four injector kinds by the configured mix.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pseudolab/common.hpp"
#include "pseudolab/datetime.hpp"

namespace pseudolab {

enum class Preset { declaration, operation };

enum class AnomalyKind { none, inflated_amount, duplicate_billing, odd_payment_term, burst_activity };

inline std::string to_string(Preset p) {
  return p == Preset::declaration ? "declaration" : "operation";
}

inline Preset parse_preset(std::string_view s) {
  if (s == "declaration") return Preset::declaration;
  if (s == "operation") return Preset::operation;
  throw ConfigError("unknown preset '" + std::string{s} + "'");
}

inline std::string to_string(AnomalyKind k) {
  switch (k) {
    case AnomalyKind::none: return "none";
    case AnomalyKind::inflated_amount: return "inflated_amount";
    case AnomalyKind::duplicate_billing: return "duplicate_billing";
    case AnomalyKind::odd_payment_term: return "odd_payment_term";
    case AnomalyKind::burst_activity: return "burst_activity";
  }
  return "none";
}

inline AnomalyKind parse_anomaly_kind(std::string_view s) {
  for (auto k : {AnomalyKind::none, AnomalyKind::inflated_amount, AnomalyKind::duplicate_billing,
                 AnomalyKind::odd_payment_term, AnomalyKind::burst_activity}) {
    if (to_string(k) == s) return k;
  }
  throw ArgumentError("unknown anomaly kind '" + std::string{s} + "'");
}

inline const std::vector<std::string>& rejection_vocabulary() {
  static const std::vector<std::string> vocab{"none", "file_rejected"};
  return vocab;
}

inline const std::vector<std::string>& operation_code_vocabulary() {
  static const std::vector<std::string> vocab{"OP-ASSESS", "OP-CONSULT", "OP-CRISIS",
                                              "OP-DIAG",   "OP-GROUP",   "OP-THERAPY"};
  return vocab;
}

/// One billing row. Amount fields use NaN to mark a missing value.
struct BillingRecord {
  std::int64_t record_id = 0;
  int client_id = 0;
  int practitioner_id = -1;    // operation preset only
  std::string operation_code;  // operation preset only
  DateTime timestamp;
  double amount_submitted = 0.0;
  double amount_accepted = 0.0;
  double amount_insured = 0.0;
  std::int64_t total_ops_accepted = 0;
  std::int64_t total_ops_stopped = 0;
  int payment_term = 1;
  bool early_payment = false;
  std::string rejection_reason = "none";
  // Sparse "confirmed fraud" flag, the stand-in for scarce original labels.
  bool original_label = false;
  // Generator bookkeeping; never used as a model input.
  bool is_injected_anomaly = false;
  AnomalyKind anomaly_kind = AnomalyKind::none;

  bool operator==(const BillingRecord&) const = default;
};

struct BillingDataset {
  Preset preset = Preset::declaration;
  std::vector<BillingRecord> records;

  [[nodiscard]] std::size_t size() const { return records.size(); }
  [[nodiscard]] std::size_t injected_count() const {
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(),
                                                  [](const auto& r) { return r.is_injected_anomaly; }));
  }
  bool operator==(const BillingDataset&) const = default;
};

struct AnomalyMix {
  double inflated_amount = 0.4;
  double duplicate_billing = 0.1;
  double odd_payment_term = 0.25;
  double burst_activity = 0.25;

  [[nodiscard]] std::array<double, 4> weights() const {
    return {inflated_amount, duplicate_billing, odd_payment_term, burst_activity};
  }
  void validate() const {
    double total = 0.0;
    for (double w : weights()) {
      if (!(w >= 0.0)) throw ConfigError("anomaly_mix weights must be non-negative");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw ConfigError("anomaly_mix weights must sum to 1, got " + std::to_string(total));
    }
  }
};

struct GeneratorConfig {
  Preset preset = Preset::declaration;
  std::size_t n_records = 10000;
  int n_clients = 202;
  int n_practitioners = 1799;
  DateTime start{2022, 3, 1, 0, 0, 0};
  DateTime end{2025, 3, 31, 23, 59, 59};
  double anomaly_rate = 0.016;
  AnomalyMix anomaly_mix;
  double original_label_rate = 0.0005;
  std::int64_t duplicate_shift_seconds = 3600;
  std::size_t burst_size = 8;
  std::uint64_t seed = 42;

  void validate() const {
    if (!(anomaly_rate >= 0.0 && anomaly_rate <= 0.5)) {
      throw ConfigError("anomaly_rate must lie in [0, 0.5]");
    }
    if (!(original_label_rate >= 0.0 && original_label_rate <= anomaly_rate + 1e-12)) {
      throw ConfigError("original_label_rate must lie in [0, anomaly_rate]");
    }
    anomaly_mix.validate();
    if (!start.valid() || !end.valid() || !(start < end)) {
      throw ConfigError("date range is empty or invalid");
    }
    if (n_clients < 1) throw ConfigError("n_clients must be >= 1");
    if (preset == Preset::operation && n_practitioners < 1) {
      throw ConfigError("n_practitioners must be >= 1");
    }
    if (burst_size < 1) throw ConfigError("burst_size must be >= 1");
    if (duplicate_shift_seconds == 0) throw ConfigError("duplicate_shift_seconds must be non-zero");
  }
};

/// floor(rate * n) with a small slack for products like 0.016 * 1000.
inline std::size_t anomaly_budget(double rate, std::size_t n) {
  return static_cast<std::size_t>(std::floor(rate * static_cast<double>(n) + 1e-9));
}

/// Splits `total` across weights by the largest-remainder rule; ties go to the
/// earlier kind.
inline std::array<std::size_t, 4> allocate_budget(std::size_t total, const std::array<double, 4>& w) {
  std::array<std::size_t, 4> out{};
  std::array<double, 4> frac{};
  std::size_t used = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const double exact = w[i] * static_cast<double>(total);
    out[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    frac[i] = exact - static_cast<double>(out[i]);
    used += out[i];
  }
  std::array<std::size_t, 4> order{0, 1, 2, 3};
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return frac[a] > frac[b]; });
  for (std::size_t j = 0; used < total; j = (j + 1) % 4) {
    if (w[order[j]] > 0.0) {
      ++out[order[j]];
      ++used;
    }
  }
  return out;
}

inline void sort_chronologically(BillingDataset& d) {
  std::stable_sort(d.records.begin(), d.records.end(), [](const auto& a, const auto& b) {
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    return a.record_id < b.record_id;
  });
}

/// Scales the submitted, accepted and insured amounts by `factor` and marks the record.
inline void apply_inflated_amount(BillingRecord& r, double factor) {
  r.amount_submitted *= factor;
  r.amount_accepted *= factor;
  r.amount_insured *= factor;
  r.is_injected_anomaly = true;
  r.anomaly_kind = AnomalyKind::inflated_amount;
}

inline constexpr int kRarePaymentTerm = 6;

inline void apply_odd_payment_term(BillingRecord& r) {
  r.payment_term = kRarePaymentTerm;
  r.early_payment = true;
  r.is_injected_anomaly = true;
  r.anomaly_kind = AnomalyKind::odd_payment_term;
}

inline BillingRecord make_duplicate(const BillingRecord& r, std::int64_t shift_seconds,
                                    std::int64_t new_id) {
  BillingRecord copy = r;
  copy.record_id = new_id;
  copy.timestamp = r.timestamp.plus_seconds(shift_seconds);
  copy.is_injected_anomaly = true;
  copy.anomaly_kind = AnomalyKind::duplicate_billing;
  copy.original_label = false;
  return copy;
}

struct InjectionSettings {
  std::int64_t duplicate_shift_seconds = 3600;
  std::size_t burst_size = 8;
  DateTime start{2022, 3, 1, 0, 0, 0};
  DateTime end{2025, 3, 31, 23, 59, 59};
};

struct InjectionResult {
  BillingDataset dataset;
  // floor(rate * n) == 0 although rate > 0.
  bool rate_below_resolution = false;
};

namespace detail {

inline double round_cents(double x) { return std::round(x * 100.0) / 100.0; }

struct ClientProfile {
  double log_location;
  std::vector<int> practitioners;
};

inline std::vector<ClientProfile> make_clients(const GeneratorConfig& cfg, std::mt19937_64& rng) {
  const double base = cfg.preset == Preset::declaration ? std::log(900.0) : std::log(120.0);
  std::normal_distribution<double> loc(base, 0.4);
  std::uniform_int_distribution<int> prac(0, std::max(0, cfg.n_practitioners - 1));
  std::vector<ClientProfile> clients(static_cast<std::size_t>(cfg.n_clients));
  for (auto& c : clients) {
    c.log_location = loc(rng);
    if (cfg.preset == Preset::operation) {
      for (int k = 0; k < 4; ++k) c.practitioners.push_back(prac(rng));
    }
  }
  return clients;
}

inline std::int64_t sample_business_time(const DateTime& start, const DateTime& end,
                                         std::mt19937_64& rng) {
  // Billing happens mostly during office hours; a thin tail covers the rest.
  static const std::array<double, 24> hour_weights{0.02, 0.02, 0.02, 0.02, 0.02, 0.05, 0.5, 2,
                                                   6,   9,   9,   8,   6,   8,   9,   9,
                                                   8,   5,   2,   1,   0.5, 0.2, 0.05, 0.02};
  std::discrete_distribution<int> hour(hour_weights.begin(), hour_weights.end());
  const auto first_day = start.date().time_since_epoch().count();
  const auto last_day = end.date().time_since_epoch().count();
  std::uniform_int_distribution<std::int64_t> day(first_day, last_day);
  std::uniform_int_distribution<int> sixty(0, 59);
  const auto lo = start.epoch_seconds();
  const auto hi = end.epoch_seconds();
  for (;;) {
    const std::int64_t s =
        day(rng) * 86400 + hour(rng) * 3600 + sixty(rng) * 60 + sixty(rng);
    if (s >= lo && s <= hi) return s;
  }
}

inline BillingRecord make_clean_record(const GeneratorConfig& cfg,
                                       const std::vector<ClientProfile>& clients,
                                       std::discrete_distribution<int>& pick_client,
                                       std::mt19937_64& rng) {
  static const std::array<double, 6> term_weights{0.05, 0.45, 0.10, 0.349, 0.05, 0.001};
  std::discrete_distribution<int> term(term_weights.begin(), term_weights.end());
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  BillingRecord r;
  r.client_id = pick_client(rng);
  const auto& client = clients[static_cast<std::size_t>(r.client_id)];
  r.timestamp = DateTime::from_epoch_seconds(sample_business_time(cfg.start, cfg.end, rng));
  std::normal_distribution<double> amount(client.log_location, 0.3);
  r.amount_submitted = std::max(0.01, round_cents(std::exp(amount(rng))));

  // One file in five is partially rejected.
  r.amount_accepted = unit(rng) < 0.80
                          ? r.amount_submitted
                          : round_cents(r.amount_submitted * (0.5 + 0.5 * unit(rng)));
  r.amount_insured = round_cents(r.amount_accepted * (0.05 + 0.25 * unit(rng)));

  const double ops_mean = cfg.preset == Preset::declaration ? r.amount_submitted / 150.0 : 0.5;
  std::poisson_distribution<std::int64_t> ops(std::max(ops_mean, 1e-3));
  const std::int64_t total_ops = 1 + ops(rng);
  if (r.amount_accepted == r.amount_submitted) {
    r.rejection_reason = "none";
    r.total_ops_accepted = total_ops;
    r.total_ops_stopped = 0;
  } else {
    const auto& vocab = rejection_vocabulary();
    std::uniform_int_distribution<std::size_t> reason(1, vocab.size() - 1);
    r.rejection_reason = vocab[reason(rng)];
    std::int64_t stopped = r.amount_accepted == 0.0
                               ? total_ops
                               : std::max<std::int64_t>(
                                     1, static_cast<std::int64_t>(std::floor(
                                            static_cast<double>(total_ops) * unit(rng) * 0.5)));
    stopped = std::min(stopped, total_ops);
    r.total_ops_stopped = stopped;
    r.total_ops_accepted = total_ops - stopped;
  }
  r.payment_term = term(rng) + 1;
  r.early_payment = unit(rng) < 0.005;
  if (cfg.preset == Preset::operation) {
    std::uniform_int_distribution<std::size_t> p(0, client.practitioners.size() - 1);
    r.practitioner_id = client.practitioners[p(rng)];
    static const std::array<double, 6> code_weights{0.15, 0.35, 0.03, 0.12, 0.10, 0.25};
    std::discrete_distribution<std::size_t> code(code_weights.begin(), code_weights.end());
    r.operation_code = operation_code_vocabulary()[code(rng)];
  }
  return r;
}

/// Applies an explicit per-kind row budget. Mutating kinds pick distinct rows;
/// duplicate and burst kinds append rows.
inline BillingDataset inject_counts(BillingDataset data, const std::array<std::size_t, 4>& counts,
                                    const InjectionSettings& settings, std::mt19937_64& rng) {
  const std::size_t n = data.records.size();
  const std::size_t n_mutations = counts[0] + counts[2];
  const std::size_t n_sources = counts[1];
  if (n_mutations + n_sources > n) {
    throw ConfigError("anomaly budget exceeds the number of clean rows");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  std::int64_t next_id = 0;
  for (const auto& r : data.records) next_id = std::max(next_id, r.record_id + 1);

  std::uniform_real_distribution<double> factor(5.0, 50.0);
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < counts[0]; ++i) {
    apply_inflated_amount(data.records[order[cursor++]], factor(rng));
  }
  for (std::size_t i = 0; i < counts[2]; ++i) {
    apply_odd_payment_term(data.records[order[cursor++]]);
  }
  std::vector<BillingRecord> inserted;
  for (std::size_t i = 0; i < counts[1]; ++i) {
    inserted.push_back(
        make_duplicate(data.records[order[cursor++]], settings.duplicate_shift_seconds, next_id++));
  }

  // Bursts: a dense run of same-client night-time rows with early payment
  // requests on the rare payment term, and elevated amounts.
  std::size_t remaining = counts[3];
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> night_hour(1, 4);
  std::uniform_int_distribution<int> gap_minutes(1, 5);
  std::uniform_int_distribution<std::size_t> pick_row(0, n == 0 ? 0 : n - 1);
  while (remaining > 0 && n > 0) {
    const std::size_t size = std::min(remaining, settings.burst_size);
    const BillingRecord& tmpl = data.records[pick_row(rng)];
    DateTime t = tmpl.timestamp;
    t.hour = night_hour(rng);
    auto s = t.epoch_seconds();
    for (std::size_t j = 0; j < size; ++j) {
      BillingRecord b = tmpl;
      b.record_id = next_id++;
      s += gap_minutes(rng) * 60;
      b.timestamp = DateTime::from_epoch_seconds(std::min(s, settings.end.epoch_seconds()));
      b.amount_submitted = round_cents(tmpl.amount_submitted * (2.0 + 2.0 * unit(rng)));
      b.amount_accepted = b.amount_submitted;
      b.rejection_reason = "none";
      b.total_ops_stopped = 0;
      b.early_payment = true;
      b.payment_term = kRarePaymentTerm;
      b.original_label = false;
      b.is_injected_anomaly = true;
      b.anomaly_kind = AnomalyKind::burst_activity;
      inserted.push_back(std::move(b));
    }
    remaining -= size;
  }
  for (auto& r : inserted) data.records.push_back(std::move(r));
  sort_chronologically(data);
  return data;
}

inline void assign_original_labels(BillingDataset& data, std::size_t count) {
  for (auto& r : data.records) {
    if (count == 0) break;
    if (r.is_injected_anomaly) {
      r.original_label = true;
      --count;
    }
  }
}

}  // namespace detail

/// Injects floor(rate * n) anomalous rows into a clean dataset. Inserted rows
/// (duplicates, bursts) are counted against the same budget, so the output may
/// be longer than the input.
inline InjectionResult inject_anomalies(const BillingDataset& clean, const AnomalyMix& mix, double rate,
                                        std::uint64_t seed, const InjectionSettings& settings = {}) {
  if (!(rate >= 0.0 && rate <= 0.5)) throw ConfigError("anomaly rate must lie in [0, 0.5]");
  mix.validate();
  for (const auto& r : clean.records) {
    if (r.is_injected_anomaly) throw ArgumentError("input already contains injected anomalies");
  }
  InjectionResult result;
  const std::size_t budget = anomaly_budget(rate, clean.size());
  result.rate_below_resolution = rate > 0.0 && budget == 0;
  if (budget == 0) {
    result.dataset = clean;
    return result;
  }
  std::mt19937_64 rng(mix_seed(seed, 1));
  result.dataset = detail::inject_counts(clean, allocate_budget(budget, mix.weights()), settings, rng);
  return result;
}

/// Builds exactly `n_records` chronologically sorted rows of which exactly
/// floor(anomaly_rate * n_records) are injected anomalies.
inline BillingDataset generate_dataset(const GeneratorConfig& cfg) {
  cfg.validate();
  const std::size_t budget = anomaly_budget(cfg.anomaly_rate, cfg.n_records);
  const auto counts = allocate_budget(budget, cfg.anomaly_mix.weights());
  const std::size_t inserted = counts[1] + counts[3];
  const std::size_t n_clean = cfg.n_records - inserted;

  std::mt19937_64 rng(mix_seed(cfg.seed, 0));
  const auto clients = detail::make_clients(cfg, rng);
  std::vector<double> activity(clients.size());
  std::lognormal_distribution<double> act(0.0, 1.0);
  for (auto& a : activity) a = act(rng);
  std::discrete_distribution<int> pick_client(activity.begin(), activity.end());

  BillingDataset data;
  data.preset = cfg.preset;
  data.records.reserve(cfg.n_records);
  for (std::size_t i = 0; i < n_clean; ++i) {
    data.records.push_back(detail::make_clean_record(cfg, clients, pick_client, rng));
  }
  sort_chronologically(data);
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    data.records[i].record_id = static_cast<std::int64_t>(i);
  }
  if (budget > 0) {
    InjectionSettings settings{cfg.duplicate_shift_seconds, cfg.burst_size, cfg.start, cfg.end};
    std::mt19937_64 inject_rng(mix_seed(cfg.seed, 1));
    data = detail::inject_counts(std::move(data), counts, settings, inject_rng);
  }
  detail::assign_original_labels(data, anomaly_budget(cfg.original_label_rate, cfg.n_records));
  return data;
}

// ---------------------------------------------------------------------------
// CSV

inline std::vector<std::string> csv_header(Preset preset) {
  std::vector<std::string> h{"record_id", "client_id"};
  if (preset == Preset::operation) {
    h.emplace_back("practitioner_id");
    h.emplace_back("operation_code");
  }
  for (const char* c : {"timestamp", "amount_submitted", "amount_accepted", "amount_insured",
                        "total_ops_accepted", "total_ops_stopped", "payment_term", "early_payment",
                        "rejection_reason", "original_label", "is_injected_anomaly",
                        "anomaly_kind"}) {
    h.emplace_back(c);
  }
  return h;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  for (;;) {
    const auto comma = line.find(',', pos);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(pos));
      return out;
    }
    out.push_back(line.substr(pos, comma - pos));
    pos = comma + 1;
  }
}

namespace detail {

template <typename T>
T parse_number(std::string_view field, std::size_t line, std::string_view column) {
  T value{};
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  auto res = std::from_chars(first, last, value);
  if (res.ec != std::errc{} || res.ptr != last) {
    throw IngestionError("row " + std::to_string(line) + ": cannot parse " + std::string{column} +
                         " value '" + std::string{field} + "'");
  }
  return value;
}

inline double parse_amount(std::string_view field, std::size_t line, std::string_view column) {
  if (field.empty()) return std::numeric_limits<double>::quiet_NaN();
  return parse_number<double>(field, line, column);
}

inline bool parse_flag(std::string_view field, std::size_t line, std::string_view column) {
  if (field == "0") return false;
  if (field == "1") return true;
  throw IngestionError("row " + std::to_string(line) + ": " + std::string{column} +
                       " must be 0 or 1, got '" + std::string{field} + "'");
}

}  // namespace detail

inline void write_csv(const BillingDataset& data, std::ostream& out) {
  const auto header = csv_header(data.preset);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto& r : data.records) {
    out << r.record_id << ',' << r.client_id << ',';
    if (data.preset == Preset::operation) out << r.practitioner_id << ',' << r.operation_code << ',';
    out << r.timestamp.iso() << ',' << format_double(r.amount_submitted) << ','
        << format_double(r.amount_accepted) << ',' << format_double(r.amount_insured) << ','
        << r.total_ops_accepted << ',' << r.total_ops_stopped << ',' << r.payment_term << ','
        << (r.early_payment ? 1 : 0) << ',' << r.rejection_reason << ','
        << (r.original_label ? 1 : 0) << ',' << (r.is_injected_anomaly ? 1 : 0) << ','
        << to_string(r.anomaly_kind) << '\n';
  }
}

inline void write_csv(const BillingDataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot open '" + path + "' for writing");
  write_csv(data, out);
}

inline BillingDataset read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IngestionError("row 1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  BillingDataset data;
  const auto decl = csv_header(Preset::declaration);
  const auto oper = csv_header(Preset::operation);
  const auto fields = split_csv_line(line);
  auto matches = [&](const std::vector<std::string>& h) {
    return std::equal(h.begin(), h.end(), fields.begin(), fields.end());
  };
  if (matches(decl)) {
    data.preset = Preset::declaration;
  } else if (matches(oper)) {
    data.preset = Preset::operation;
  } else {
    throw IngestionError("row 1: header does not match either billing schema (missing columns?)");
  }
  const auto& header = data.preset == Preset::declaration ? decl : oper;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) {
      throw IngestionError("row " + std::to_string(line_no) + ": expected " +
                           std::to_string(header.size()) + " fields, got " +
                           std::to_string(f.size()));
    }
    BillingRecord r;
    std::size_t c = 0;
    r.record_id = detail::parse_number<std::int64_t>(f[c++], line_no, "record_id");
    r.client_id = detail::parse_number<int>(f[c++], line_no, "client_id");
    if (data.preset == Preset::operation) {
      r.practitioner_id = detail::parse_number<int>(f[c++], line_no, "practitioner_id");
      r.operation_code = std::string{f[c++]};
    }
    try {
      r.timestamp = DateTime::parse(f[c++]);
    } catch (const ArgumentError& e) {
      throw IngestionError("row " + std::to_string(line_no) + ": " + e.what());
    }
    r.amount_submitted = detail::parse_amount(f[c++], line_no, "amount_submitted");
    r.amount_accepted = detail::parse_amount(f[c++], line_no, "amount_accepted");
    r.amount_insured = detail::parse_amount(f[c++], line_no, "amount_insured");
    r.total_ops_accepted = detail::parse_number<std::int64_t>(f[c++], line_no, "total_ops_accepted");
    r.total_ops_stopped = detail::parse_number<std::int64_t>(f[c++], line_no, "total_ops_stopped");
    r.payment_term = detail::parse_number<int>(f[c++], line_no, "payment_term");
    r.early_payment = detail::parse_flag(f[c++], line_no, "early_payment");
    r.rejection_reason = std::string{f[c++]};
    r.original_label = detail::parse_flag(f[c++], line_no, "original_label");
    r.is_injected_anomaly = detail::parse_flag(f[c++], line_no, "is_injected_anomaly");
    try {
      r.anomaly_kind = parse_anomaly_kind(f[c++]);
    } catch (const ArgumentError& e) {
      throw IngestionError("row " + std::to_string(line_no) + ": " + e.what());
    }
    data.records.push_back(std::move(r));
  }
  return data;
}

inline BillingDataset read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open '" + path + "'");
  return read_csv(in);
}

}  // namespace pseudolab
