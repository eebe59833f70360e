#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "experiment.hpp"
#include "monde/errors.hpp"

namespace monde::tools {
namespace {

using nlohmann::json;

json tiny_doc(const std::string& dir) {
  json j = json::parse(R"({
    "seed": 3,
    "dataset": {"generator": "sin-normal", "n": 400},
    "model": {"family": "umonde", "x_widths": [4], "y_widths": [4]},
    "training": {"max_epochs": 3, "batch_size": 64},
    "eval": {"metrics": ["test_ll"]}
  })");
  j["output_dir"] = dir;
  return j;
}

std::string config_error_path(const json& doc) {
  try {
    parse_config(doc);
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "<no error>";
}

std::string scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("monde_exp_" + name);
  std::filesystem::remove_all(dir);
  return dir.string();
}

TEST(Config, UnknownFieldNamesItsPath) {
  json doc = tiny_doc("x");
  doc["training"]["batch_sz"] = 10;
  EXPECT_EQ(config_error_path(doc), "training.batch_sz");
  doc = tiny_doc("x");
  doc["colour"] = "blue";
  EXPECT_EQ(config_error_path(doc), "colour");
  doc = tiny_doc("x");
  doc["eval"]["u_grid"] = {{"lo", 0.1}, {"step", 2}};
  EXPECT_EQ(config_error_path(doc), "eval.u_grid.step");
}

TEST(Config, WrongTypesAndRanges) {
  json doc = tiny_doc("x");
  doc["training"]["learning_rate"] = "fast";
  EXPECT_EQ(config_error_path(doc), "training.learning_rate");
  doc = tiny_doc("x");
  doc["eval"]["q"] = {1.5};
  EXPECT_EQ(config_error_path(doc), "eval.q");
  doc = tiny_doc("x");
  doc["dataset"]["split"] = {0.5, 0.5};
  EXPECT_EQ(config_error_path(doc), "dataset.split");
  doc = tiny_doc("x");
  doc["eval"]["metrics"] = {"test_ll", "entropy"};
  EXPECT_EQ(config_error_path(doc), "eval.metrics");
  doc = tiny_doc("x");
  doc["model"]["y_widths"] = {4, 0};
  EXPECT_EQ(config_error_path(doc), "model.y_widths");
}

TEST(Config, ExactlyOneDataSource) {
  json doc = tiny_doc("x");
  doc["dataset"]["csv"] = "data.csv";
  EXPECT_EQ(config_error_path(doc), "dataset");
  doc["dataset"].erase("csv");
  doc["dataset"].erase("generator");
  EXPECT_EQ(config_error_path(doc), "dataset");
}

TEST(Config, UnknownFamily) {
  json doc = tiny_doc("x");
  doc["model"]["family"] = "flow";
  EXPECT_THROW(parse_config(doc), UnknownFamily);
}

TEST(Config, CanonicalFormIsAFixedPoint) {
  const auto cfg = parse_config(tiny_doc("x"));
  const json canon = config_json(cfg);
  EXPECT_EQ(config_json(parse_config(canon)), canon);
  EXPECT_EQ(canon["training"]["early_stop_patience"], 30);
  EXPECT_EQ(canon["training"]["plateau_patience"], 10);
  EXPECT_EQ(canon["eval"]["x_condition"], "component-mean:0");
}

TEST(Config, HashIgnoresOutputDir) {
  const auto a = parse_config(tiny_doc("a"));
  const auto b = parse_config(tiny_doc("b"));
  EXPECT_EQ(config_hash(a), config_hash(b));
  json doc = tiny_doc("a");
  doc["seed"] = 4;
  EXPECT_NE(config_hash(parse_config(doc)), config_hash(a));
}

TEST(Config, LoadReportsBadJson) {
  const auto path = (std::filesystem::temp_directory_path() / "monde_bad_config.json").string();
  std::ofstream(path) << "{ \"seed\": ";
  EXPECT_THROW(load_config(path), ConfigError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_config("/nonexistent/config.json"), IoError);
}

TEST(Experiment, TrainThenEvalReproducesMetrics) {
  const auto dir = scratch("repro");
  const auto cfg = parse_config(tiny_doc(dir));
  const auto trained = run_experiment(cfg, cfg.eval.metrics);
  for (const char* f : {"model.json", "history.csv", "manifest.json", "metrics.json", "metrics_test_ll.json"}) {
    EXPECT_TRUE(std::filesystem::exists(std::filesystem::path(dir) / f)) << f;
  }

  auto eval_cfg = cfg;
  eval_cfg.output_dir = dir + "/eval";
  const auto evaluated = run_experiment(eval_cfg, cfg.eval.metrics, dir + "/model.json", "eval");
  const double a = trained.metrics["test_ll"]["test"]["mean"].get<double>();
  const double b = evaluated.metrics["test_ll"]["test"]["mean"].get<double>();
  EXPECT_NEAR(a, b, 1e-12);

  auto wrong = cfg;
  wrong.model.family = Family::pumonde;
  EXPECT_THROW(run_experiment(wrong, {"test_ll"}, dir + "/model.json", "eval"), FamilyMismatch);
  std::filesystem::remove_all(dir);
}

TEST(Experiment, SameSeedSameHistory) {
  const auto a = run_experiment(parse_config(tiny_doc(scratch("seed_a"))), {});
  const auto b = run_experiment(parse_config(tiny_doc(scratch("seed_b"))), {});
  EXPECT_EQ(a.history.to_csv(), b.history.to_csv());
  json doc = tiny_doc(scratch("seed_c"));
  doc["seed"] = 4;
  const auto c = run_experiment(parse_config(doc), {});
  EXPECT_NE(a.history.to_csv(), c.history.to_csv());
  for (const char* n : {"seed_a", "seed_b", "seed_c"}) std::filesystem::remove_all(scratch(n));
}

TEST(Experiment, GenerateWritesSplitColumn) {
  const auto dir = scratch("generate");
  const auto cfg = parse_config(tiny_doc(dir));
  const auto data = build_dataset(cfg);
  write_dataset(cfg, data);
  std::ifstream in(std::filesystem::path(dir) / "dataset.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "x0,y0,split");
  long rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, 400);
  std::filesystem::remove_all(dir);
}

TEST(Experiment, ConditionRowFromRawValues) {
  json doc = tiny_doc("x");
  doc["eval"]["x_condition"] = {0.0};
  const auto cfg = parse_config(doc);
  const auto data = build_dataset(cfg);
  const auto x = condition_row(cfg, data);
  EXPECT_NEAR(x[0], -data.stats.x_mean[0] / data.stats.x_sd[0], 1e-15);
  doc["eval"]["x_condition"] = {0.0, 1.0};
  const auto bad = parse_config(doc);
  EXPECT_THROW(condition_row(bad, data), ConfigError);
}

}  // namespace
}  // namespace monde::tools
