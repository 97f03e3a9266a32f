#include <filesystem>

#include <gtest/gtest.h>

#include "pseudolab/experiment.hpp"

namespace pseudolab {
namespace {

nlohmann::json tiny(const std::string& model, const std::string& labels) {
  return {{"preset", "declaration"},
          {"label_source", labels},
          {"model", model},
          {"n_records", 800},
          {"anomaly_rate", 0.03},
          {"original_label_rate", 0.01},
          {"generator_seed", 5},
          {"iforest_trees", 20},
          {"ae_max_epochs", 3},
          {"seeds", {1, 2}},
          {"window_size", 5},
          {"max_epochs", 2},
          {"hidden", 8},
          {"lstm_layers", 1},
          {"d_model", 8},
          {"heads", 2},
          {"encoder_layers", 1},
          {"ff_hidden", 16}};
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("pseudolab_experiment_" + name);
  fs::remove_all(p);
  return p;
}

TEST(Config, ParsesFlatKeys) {
  const auto c = parse_experiment_config(tiny("hybrid", "ae"));
  EXPECT_EQ(c.model, ModelKind::hybrid);
  EXPECT_EQ(c.label_source, LabelKind::ae);
  EXPECT_EQ(c.generator.n_records, 800u);
  EXPECT_EQ(c.iforest.n_estimators, 20u);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1, 2}));
  const auto tc = resolve_train_config(c, ModelKind::transformer, 9);
  EXPECT_EQ(tc.window_size, 5u);
  EXPECT_EQ(tc.seed, 9u);
  EXPECT_EQ(tc.pos_weight, 40.0);  // untouched keys keep the table default
  EXPECT_EQ(parse_experiment_config(to_json(c)).train_overrides, c.train_overrides);
}

TEST(Config, DefaultsToFiveSeeds) {
  EXPECT_EQ(parse_experiment_config(nlohmann::json::object()).seeds.size(), 5u);
}

TEST(Config, RejectsBadInput) {
  auto j = tiny("lstm", "iforest");
  j["windw_size"] = 3;
  EXPECT_THROW(parse_experiment_config(j), ConfigError);
  j = tiny("lstm", "iforest");
  j["model"] = "gru";
  EXPECT_THROW(parse_experiment_config(j), ConfigError);
  j = tiny("lstm", "iforest");
  j["n_records"] = "many";
  EXPECT_THROW(parse_experiment_config(j), ConfigError);
  j = tiny("lstm", "iforest");
  j["anomaly_rate"] = 0.9;
  EXPECT_THROW(parse_experiment_config(j), ConfigError);
  j = tiny("lstm", "iforest");
  j["seeds"] = nlohmann::json::array();
  EXPECT_THROW(parse_experiment_config(j), ConfigError);
  EXPECT_THROW(parse_experiment_config(nlohmann::json::array()), ConfigError);
}

TEST(LabelFiles, ReadAndValidate) {
  const auto dir = scratch("labels");
  write_text(dir / "a.csv", "row_index,score,label\n0,0.1,1\n1,0.2,0\r\n");
  EXPECT_EQ(read_label_column(dir / "a.csv", {"label"}), (Labels{1, 0}));
  write_text(dir / "b.csv", "row_index,label\n0,1\n1,2\n");
  try {
    (void)read_label_column(dir / "b.csv", {"label"});
    FAIL() << "expected IngestionError";
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(read_label_column(dir / "a.csv", {"prediction"}), IngestionError);
  fs::remove_all(dir);
}

class RunTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(scratch("run"));
    result_ = new RunResult(run_experiment(parse_experiment_config(tiny("lstm", "iforest")), *dir_));
  }
  static void TearDownTestSuite() {
    fs::remove_all(*dir_);
    delete dir_;
    delete result_;
  }
  static fs::path* dir_;
  static RunResult* result_;
};
fs::path* RunTest::dir_ = nullptr;
RunResult* RunTest::result_ = nullptr;

TEST_F(RunTest, WritesPerSeedAndAggregateOutputs) {
  const auto& d = *dir_;
  for (const char* f : {"dataset.csv", "encoder_unsupervised.json", "encoder_supervised.json",
                        "aggregate_report.json", "aggregate_report.txt", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(d / f)) << f;
  }
  for (const char* s : {"seed_1", "seed_2"}) {
    for (const char* f : {"pseudo_labels.csv", "labeler.json", "lstm_model.json", "lstm_trace.csv",
                          "predictions_val.csv", "predictions_test.csv", "report.json", "report.txt"}) {
      EXPECT_TRUE(fs::exists(d / s / f)) << s << "/" << f;
    }
  }
  EXPECT_EQ(result_->seeds.size(), 2u);
  const auto agg = read_json(d / "aggregate_report.json");
  EXPECT_EQ(agg["per_seed"].size(), 2u);
  EXPECT_TRUE(agg["test_vs_injected"].contains("f1"));
  const auto header = read_file(d / "seed_1" / "predictions_test.csv").substr(0, 80);
  EXPECT_EQ(header.substr(0, header.find('\n')),
            "window_index,source_row_index,probability,prediction,label,injected");
}

TEST_F(RunTest, ManifestVerifiesAndRecordsSplitDiscipline) {
  const auto m = read_json(*dir_ / "manifest.json");
  EXPECT_EQ(m["status"], "ok");
  EXPECT_TRUE(verify_manifest(*dir_).empty());
  const auto r = m["index_ranges"];
  const auto n = m["rows"]["clean"].get<std::size_t>();
  EXPECT_EQ(r["pseudolabel_fit"][1].get<std::size_t>(), r["scaler_fit_unsupervised"][1].get<std::size_t>());
  EXPECT_EQ(r["scaler_fit_unsupervised"][1].get<std::size_t>(), r["validation"][1].get<std::size_t>());
  EXPECT_EQ(r["scaler_fit_supervised"], r["train"]);
  EXPECT_EQ(r["train"][1], r["validation"][0]);
  EXPECT_EQ(r["validation"][1], r["test"][0]);
  EXPECT_EQ(r["test"][1].get<std::size_t>(), n);
  // Test windows only reference test rows.
  const auto preds = read_file(*dir_ / "seed_1" / "predictions_test.csv");
  std::istringstream in(preds);
  std::string line;
  std::getline(in, line);
  const auto test_begin = r["test"][0].get<std::size_t>();
  while (std::getline(in, line)) {
    const auto fields = split_csv_line(line);
    EXPECT_GE(std::stoul(std::string(fields[1])), test_begin + 4);  // window of 5 ends no earlier than row begin+4
  }
  // Tampering is detected.
  const auto tampered = *dir_ / "seed_2" / "report.txt";
  const auto original = read_file(tampered);
  write_text(tampered, original + " ");
  EXPECT_EQ(verify_manifest(*dir_), (std::vector<std::string>{"seed_2/report.txt"}));
  write_text(tampered, original);
}

TEST_F(RunTest, RerunReproducesAggregateHash) {
  const auto other = scratch("rerun");
  (void)run_experiment(parse_experiment_config(tiny("lstm", "iforest")), other);
  EXPECT_EQ(sha256_file(other / "aggregate_report.json"), sha256_file(*dir_ / "aggregate_report.json"));
  EXPECT_EQ(read_json(other / "manifest.json")["files"], read_json(*dir_ / "manifest.json")["files"]);
  fs::remove_all(other);
}

TEST_F(RunTest, CompareWithSelfIsNotSignificant) {
  const auto c = compare_runs(*dir_, *dir_);
  ASSERT_EQ(c.seeds.size(), 2u);
  for (const auto& s : c.seeds) {
    EXPECT_EQ(s.mcnemar.b + s.mcnemar.c, 0u);
    EXPECT_EQ(s.mcnemar.p_value, 1.0);
  }
  EXPECT_EQ(to_json(c).size(), 2u);
}

TEST_F(RunTest, CompareMatchesDirectMcNemarOnPredictionFiles) {
  const auto other = scratch("transformer");
  (void)run_experiment(parse_experiment_config(tiny("transformer", "iforest")), other);
  const auto c = compare_runs(*dir_, other);
  for (const auto& s : c.seeds) {
    const auto sub = "seed_" + std::to_string(s.seed);
    const auto actual = read_label_column(*dir_ / sub / "predictions_test.csv", {"label"});
    const auto direct = mcnemar(read_label_column(*dir_ / sub / "predictions_test.csv", {"prediction"}),
                                read_label_column(other / sub / "predictions_test.csv", {"prediction"}), actual);
    EXPECT_EQ(s.mcnemar.b, direct.b);
    EXPECT_EQ(s.mcnemar.c, direct.c);
    EXPECT_EQ(s.mcnemar.p_value, direct.p_value);
  }
  EXPECT_NE(c.table.find("lstm vs transformer"), std::string::npos);
  fs::remove_all(other);
}

TEST_F(RunTest, CompareRejectsDifferentPreset) {
  auto j = tiny("lstm", "iforest");
  j["preset"] = "operation";
  j["seeds"] = {1};
  const auto other = scratch("operation");
  (void)run_experiment(parse_experiment_config(j), other);
  EXPECT_THROW(compare_runs(*dir_, other), ComparisonError);
  fs::remove_all(other);
}

TEST(Run, HybridWritesMetaModel) {
  const auto dir = scratch("hybrid");
  auto j = tiny("hybrid", "original");
  j["seeds"] = {3};
  const auto r = run_experiment(parse_experiment_config(j), dir);
  EXPECT_TRUE(fs::exists(dir / "seed_3" / "hybrid_model.json"));
  EXPECT_TRUE(fs::exists(dir / "seed_3" / "transformer_model.json"));
  EXPECT_FALSE(fs::exists(dir / "seed_3" / "labeler.json"));
  const auto header = read_file(dir / "seed_3" / "predictions_test.csv");
  EXPECT_EQ(header.substr(0, header.find('\n')),
            "window_index,source_row_index,lstm_probability,transformer_probability,prediction,label,injected");
  EXPECT_EQ(r.manifest["index_ranges"]["pseudolabel_fit"][1], 0);
  fs::remove_all(dir);
}

TEST(Run, FailingStageIsRecorded) {
  const auto dir = scratch("fail");
  auto j = tiny("lstm", "ae");
  j["window_size"] = 1000;  // longer than every split
  j["seeds"] = {1};
  try {
    (void)run_experiment(parse_experiment_config(j), dir);
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "seed 1 window");
  }
  const auto m = read_json(dir / "manifest.json");
  EXPECT_EQ(m["status"], "failed");
  EXPECT_EQ(m["failed_stage"], "seed 1 window");
  EXPECT_TRUE(verify_manifest(dir).empty());
  fs::remove_all(dir);
}

TEST(Run, DatasetPresetMustMatch) {
  const auto dir = scratch("dataset");
  GeneratorConfig g;
  g.preset = Preset::operation;
  g.n_records = 100;
  fs::create_directories(dir);
  write_csv(generate_dataset(g), (dir / "ops.csv").string());
  auto j = tiny("lstm", "iforest");
  j["dataset"] = (dir / "ops.csv").string();
  try {
    (void)run_experiment(parse_experiment_config(j), dir / "run");
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "generate");
  }
  fs::remove_all(dir);
}

}  // namespace
}  // namespace pseudolab
