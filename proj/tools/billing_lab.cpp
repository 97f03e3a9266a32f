// billing_lab: command-line front end for the pseudo-labeling laboratory.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pseudolab/experiment.hpp"

namespace fs = std::filesystem;
using namespace pseudolab;

namespace {

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Random seed");
  cmd->add_option("--config", c.config, "Flat JSON experiment config");
  cmd->add_option("--out", c.out, "Output path");
}

/// Relative outputs land under $PSEUDOLAB_OUTPUT_ROOT when it is set.
fs::path output_path(const std::string& out, const std::string& fallback) {
  fs::path p = out.empty() ? fs::path(fallback) : fs::path(out);
  if (p.is_relative()) {
    if (const char* root = std::getenv("PSEUDOLAB_OUTPUT_ROOT"); root != nullptr && *root != '\0') {
      p = fs::path(root) / p;
    }
  }
  return p;
}

ExperimentConfig load_config(const Common& c) {
  return c.config.empty() ? parse_experiment_config(nlohmann::json::object()) : load_experiment_config(c.config);
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

Labels read_predictions(const std::string& path) { return read_label_column(path, {"prediction", "label"}); }

Labels read_actual(const std::string& path, const std::string& column) {
  if (!column.empty()) return read_label_column(path, {column});
  return read_label_column(path, {"actual", "label", "injected", "original"});
}

std::vector<double> read_scores(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  const auto header = split_csv_line(line);
  const auto it = std::find(header.begin(), header.end(), std::string_view("score"));
  if (it == header.end()) throw IngestionError("'" + path.string() + "' has no score column");
  const auto col = static_cast<std::size_t>(it - header.begin());
  std::vector<double> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(std::stod(std::string(split_csv_line(line).at(col))));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pseudo-labeling laboratory for sequential billing anomaly detection"};
  app.require_subcommand(1);
  std::string stage = "cli";

  // generate
  Common gen_c;
  std::string gen_preset;
  std::optional<std::size_t> gen_n;
  std::optional<double> gen_rate;
  auto* gen = app.add_subcommand("generate", "Generate a synthetic billing dataset");
  add_common(gen, gen_c);
  gen->add_option("--preset", gen_preset, "declaration|operation");
  gen->add_option("--n", gen_n, "Number of clean records");
  gen->add_option("--anomaly-rate", gen_rate, "Fraction of rows to inject");

  // preprocess
  Common pre_c;
  std::string pre_in, pre_split = "60/20/20";
  std::size_t pre_window = 100;
  auto* pre = app.add_subcommand("preprocess", "Clean, encode, scale and window a raw CSV");
  add_common(pre, pre_c);
  pre->add_option("--in", pre_in, "Raw billing CSV")->required();
  pre->add_option("--split", pre_split, "Chronological split fractions, e.g. 60/20/20");
  pre->add_option("--window", pre_window, "Sliding window length");
  pre->add_option("--out-dir", pre_c.out, "Output directory (alias of --out)");

  // pseudolabel
  Common pl_c;
  std::string pl_method, pl_in, pl_preset;
  std::optional<double> pl_contamination;
  std::optional<std::size_t> pl_trees;
  double pl_fit_fraction = 0.8;
  bool pl_full = false;
  auto* pl = app.add_subcommand("pseudolabel", "Pseudo-label rows with an unsupervised detector");
  add_common(pl, pl_c);
  pl->add_option("method", pl_method, "iforest|ae")->required()->check(CLI::IsMember({"iforest", "ae"}));
  pl->add_option("--in", pl_in, "Feature CSV")->required();
  pl->add_option("--preset", pl_preset, "declaration|operation (autoencoder size)");
  pl->add_option("--contamination", pl_contamination, "Isolation Forest contamination");
  pl->add_option("--trees", pl_trees, "Isolation Forest trees");
  pl->add_option("--fit-fraction", pl_fit_fraction, "Leading fraction of rows used for fitting");
  pl->add_flag("--full-data", pl_full, "Fit on every row");

  // train
  Common tr_c;
  std::string tr_model, tr_labels, tr_preset, tr_dataset;
  auto* tr = app.add_subcommand("train", "Train one classifier for a single seed");
  add_common(tr, tr_c);
  tr->add_option("--model", tr_model, "lstm|transformer|hybrid");
  tr->add_option("--labels", tr_labels, "iforest|ae|original");
  tr->add_option("--preset", tr_preset, "declaration|operation");
  tr->add_option("--dataset", tr_dataset, "Raw CSV to use instead of generating one");

  // evaluate
  Common ev_c;
  std::vector<std::string> ev_preds;
  std::string ev_actual, ev_column;
  auto* ev = app.add_subcommand("evaluate", "Score prediction files against actual labels");
  add_common(ev, ev_c);
  ev->add_option("--preds", ev_preds, "Prediction CSVs")->required();
  ev->add_option("--actual", ev_actual, "CSV holding the reference labels")->required();
  ev->add_option("--actual-column", ev_column, "Column of --actual to use");

  // mcnemar
  Common mc_c;
  std::string mc_a, mc_b, mc_actual, mc_column;
  auto* mc = app.add_subcommand("mcnemar", "McNemar test between two prediction files");
  add_common(mc, mc_c);
  mc->add_option("--a", mc_a, "Predictions of model A")->required();
  mc->add_option("--b", mc_b, "Predictions of model B")->required();
  mc->add_option("--actual", mc_actual, "CSV holding the reference labels")->required();
  mc->add_option("--actual-column", mc_column, "Column of --actual to use");

  // agreement
  Common ag_c;
  std::string ag_if, ag_ae, ag_dataset;
  std::size_t ag_top = 100;
  auto* ag = app.add_subcommand("agreement", "Compare Isolation Forest and Autoencoder pseudo-labels");
  add_common(ag, ag_c);
  ag->add_option("--iforest", ag_if, "Isolation Forest label CSV")->required();
  ag->add_option("--ae", ag_ae, "Autoencoder label CSV")->required();
  ag->add_option("--dataset", ag_dataset, "Raw CSV for top-anomaly feature summaries");
  ag->add_option("--top", ag_top, "Rows per method in the summaries");

  // run
  Common run_c;
  std::vector<std::uint64_t> run_seeds;
  auto* run = app.add_subcommand("run", "Full pipeline over every configured seed");
  add_common(run, run_c);
  run->add_option("--seeds", run_seeds, "Seeds (overrides config)")->delimiter(',');

  // compare
  Common cmp_c;
  std::string cmp_a, cmp_b;
  auto* cmp = app.add_subcommand("compare", "McNemar comparison of two run directories");
  add_common(cmp, cmp_c);
  cmp->add_option("--a", cmp_a, "First run directory")->required();
  cmp->add_option("--b", cmp_b, "Second run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) {
      stage = "generate";
      auto cfg = load_config(gen_c);
      auto g = cfg.generator;
      g.preset = gen_preset.empty() ? cfg.preset : parse_preset(gen_preset);
      if (gen_n) g.n_records = *gen_n;
      if (gen_rate) g.anomaly_rate = *gen_rate;
      if (gen_c.seed) g.seed = *gen_c.seed;
      g.validate();
      const auto data = generate_dataset(g);
      const auto path = output_path(gen_c.out, "dataset.csv");
      ensure_parent(path);
      write_csv(data, path.string());
      std::cout << "wrote " << data.size() << " rows (" << data.injected_count() << " injected) to " << path.string()
                << '\n';
    } else if (*pre) {
      stage = "preprocess";
      const auto fractions = parse_split(pre_split);
      const auto raw = read_csv(pre_in);
      const auto data = clean(raw);
      const auto n = data.size();
      const auto ranges = chronological_split(n, fractions);
      const auto unsup_end = chronological_split(n, {1.0 - fractions.back(), fractions.back()})[0].end;
      const auto head = [&](std::size_t end) {
        return std::vector<BillingRecord>(data.records.begin(), data.records.begin() + static_cast<std::ptrdiff_t>(end));
      };
      const auto enc = fit_feature_encoder(head(ranges[0].end), data.preset);
      const auto enc_u = fit_feature_encoder(head(unsup_end), data.preset);
      const auto X = transform(data.records, enc);
      const auto X_u = transform(data.records, enc_u);
      const auto dir = output_path(pre_c.out, "preprocessed");
      fs::create_directories(dir);
      write_feature_csv(X, (dir / "features.csv").string());
      write_feature_csv(X_u, (dir / "features_unsupervised.csv").string());
      write_json(dir / "encoder.json", to_json(enc));
      write_json(dir / "encoder_unsupervised.json", to_json(enc_u));
      std::ostringstream labels;
      labels << "row_index,record_id,injected,original\n";
      for (std::size_t i = 0; i < n; ++i) {
        const auto& r = data.records[i];
        labels << i << ',' << r.record_id << ',' << (r.is_injected_anomaly ? 1 : 0) << ','
               << (r.original_label ? 1 : 0) << '\n';
      }
      write_text(dir / "labels.csv", labels.str());
      nlohmann::json splits = nlohmann::json::array();
      for (const auto& r : ranges) {
        const auto windows = r.end - r.begin >= pre_window ? r.end - r.begin - pre_window + 1 : 0;
        splits.push_back({{"begin", r.begin}, {"end", r.end}, {"windows", windows}});
      }
      write_json(dir / "splits.json", {{"rows_raw", raw.size()},
                                       {"rows_clean", n},
                                       {"window_size", pre_window},
                                       {"fractions", fractions},
                                       {"splits", splits},
                                       {"unsupervised_fit", {0, unsup_end}}});
      std::cout << "wrote " << n << " rows x " << X.cols << " features to " << dir.string() << '\n';
    } else if (*pl) {
      stage = "pseudolabel " + pl_method;
      auto cfg = load_config(pl_c);
      const auto X = read_feature_csv(pl_in);
      if (!(pl_fit_fraction > 0.0 && pl_fit_fraction <= 1.0)) throw ArgumentError("--fit-fraction must lie in (0, 1]");
      const auto fit_rows =
          pl_full ? X.rows : std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(pl_fit_fraction * X.rows)));
      const auto X_fit = X.slice_rows(0, fit_rows);
      const auto seed = pl_c.seed.value_or(42);
      PseudoLabelSet set;
      nlohmann::json model;
      if (pl_method == "iforest") {
        auto p = cfg.iforest;
        if (pl_contamination) p.contamination = *pl_contamination;
        if (pl_trees) p.n_estimators = *pl_trees;
        p.seed = seed;
        p.validate();
        const auto m = fit_iforest(X_fit, p);
        set = pseudo_label_iforest(m, X);
        model = to_json(m);
      } else {
        const auto preset = pl_preset.empty() ? cfg.preset : parse_preset(pl_preset);
        auto ac = default_ae_config(preset);
        ac.seed = seed;
        ac.max_epochs = cfg.ae_max_epochs;
        ac.threshold_percentile = cfg.ae_percentile;
        ac.loss = cfg.ae_loss;
        const auto m = fit_ae(X_fit, ac);
        set = pseudo_label_ae(m, X);
        model = to_json(m);
      }
      const auto path = output_path(pl_c.out, pl_method + "_labels.csv");
      write_pseudo_labels(path, set);
      write_json(path.string() + ".model.json", model);
      if (set.warning) std::cerr << "warning: pseudo-labeler flagged no rows\n";
      std::cout << "flagged " << set.positives() << " of " << set.labels.size() << " rows; wrote " << path.string()
                << '\n';
    } else if (*tr) {
      stage = "train";
      auto cfg = load_config(tr_c);
      if (!tr_model.empty()) cfg.model = parse_model_kind(tr_model);
      if (!tr_labels.empty()) cfg.label_source = parse_label_kind(tr_labels);
      if (!tr_preset.empty()) cfg.preset = parse_preset(tr_preset);
      if (!tr_dataset.empty()) cfg.dataset = tr_dataset;
      cfg.generator.preset = cfg.preset;
      cfg.seeds = {tr_c.seed.value_or(cfg.seeds.front())};
      const auto dir = output_path(tr_c.out, "train_" + to_string(cfg.model) + "_" + to_string(cfg.label_source));
      const auto result = run_experiment(cfg, dir);
      std::cout << read_file(dir / "aggregate_report.txt");
    } else if (*ev) {
      stage = "evaluate";
      const auto actual = read_actual(ev_actual, ev_column);
      std::vector<std::pair<std::string, EvalReport>> rows;
      nlohmann::json doc = nlohmann::json::object();
      for (const auto& p : ev_preds) {
        auto r = compute_metrics(read_predictions(p), actual);
        rows.emplace_back(fs::path(p).filename().string(), r);
        doc[p] = to_json(r);
      }
      const auto table = metrics_table(rows);
      std::cout << table;
      if (!ev_c.out.empty()) {
        const auto dir = output_path(ev_c.out, "");
        write_json(dir / "evaluation.json", doc);
        write_text(dir / "evaluation.txt", table);
      }
    } else if (*mc) {
      stage = "mcnemar";
      const auto actual = read_actual(mc_actual, mc_column);
      const auto r = mcnemar(read_predictions(mc_a), read_predictions(mc_b), actual);
      const auto table = mcnemar_table(fs::path(mc_a).filename().string() + " vs " + fs::path(mc_b).filename().string(), r);
      std::cout << table;
      if (!mc_c.out.empty()) {
        const auto path = output_path(mc_c.out, "");
        write_json(path, to_json(r));
      }
    } else if (*ag) {
      stage = "agreement";
      const auto a = read_label_column(ag_if, {"label"});
      const auto b = read_label_column(ag_ae, {"label"});
      const auto rep = agreement_report(a, b);
      nlohmann::json doc{{"agreement", to_json(rep)}};
      std::string text = agreement_table(rep);
      if (!ag_dataset.empty()) {
        const auto data = clean(read_csv(ag_dataset));
        const auto sa = read_scores(ag_if);
        const auto sb = read_scores(ag_ae);
        if (sa.size() != data.size() || sb.size() != data.size()) {
          throw ArgumentError("label files and cleaned dataset differ in row count");
        }
        const auto k = std::min(ag_top, data.size());
        const auto ta = top_anomaly_summary(sa, data.records, LabelSource::iforest, k);
        const auto tb = top_anomaly_summary(sb, data.records, LabelSource::autoencoder, k);
        doc["top_iforest"] = to_json(ta);
        doc["top_autoencoder"] = to_json(tb);
        std::ostringstream os;
        os << "\nTop " << k << " rows per method (mean)\n"
           << std::left << std::setw(20) << "Feature" << std::right << std::setw(14) << "iForest" << std::setw(14)
           << "Autoencoder" << '\n'
           << std::fixed << std::setprecision(2);
        for (std::size_t i = 0; i < ta.size(); ++i) {
          os << std::left << std::setw(20) << ta[i].feature << std::right << std::setw(14) << ta[i].mean
             << std::setw(14) << tb[i].mean << '\n';
        }
        text += os.str();
      }
      std::cout << text;
      if (!ag_c.out.empty()) write_json(output_path(ag_c.out, ""), doc);
    } else if (*run) {
      stage = "run";
      auto cfg = load_config(run_c);
      if (!run_seeds.empty()) cfg.seeds = run_seeds;
      else if (run_c.seed) cfg.seeds = {*run_c.seed};
      const auto dir = output_path(run_c.out, "run");
      run_experiment(cfg, dir);
      std::cout << read_file(dir / "aggregate_report.txt");
    } else if (*cmp) {
      stage = "compare";
      const auto c = compare_runs(cmp_a, cmp_b);
      std::cout << c.table;
      if (!cmp_c.out.empty()) {
        const auto dir = output_path(cmp_c.out, "");
        write_json(dir / "comparison.json", to_json(c));
        write_text(dir / "comparison.txt", c.table);
      }
    }
  } catch (const StageError& e) {
    std::cerr << "error [" << e.stage() << "]: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error [" << stage << "]: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
