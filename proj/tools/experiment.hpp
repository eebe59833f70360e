#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "monde/data.hpp"
#include "monde/eval.hpp"
#include "monde/models.hpp"
#include "monde/training.hpp"

namespace monde::tools {

struct DatasetConfig {
  // Exactly one source: a generator or a CSV file.
  std::optional<GeneratorSpec> generator;
  std::string csv_path;
  bool csv_header = false;
  bool csv_prices = false;         // convert prices to log losses first
  std::vector<int> response_cols;  // CSV: 0-based responses; empty means the last column
  int lag = 0;                     // CSV: lagged copies of every column appended to X
  std::array<double, 3> split{0.6, 0.2, 0.2};
};

struct EvalConfig {
  std::vector<std::string> metrics{"test_ll"};
  std::vector<double> q{0.95};
  double u_lo = 0.005, u_hi = 0.995;
  int u_n = 99;
  std::vector<std::pair<int, int>> pairs;  // empty means every pair
  // Covariate condition for tail dependence and MI: "component-mean:<c>",
  // "mean", or an explicit vector in raw units.
  std::string x_condition = "component-mean:0";
  std::vector<double> x_values;
  std::optional<Box> mi_box;  // standardized units; unset means derived from model quantiles
  int mi_grid = 256;
  int permutations = 200;

  std::vector<double> u_grid() const;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "monde-out";
  DatasetConfig dataset;
  ModelSpec model;  // covariates/responses come from the dataset
  TrainConfig training;
  EvalConfig eval;
  nlohmann::json source;  // the parsed document after defaults, for hashing
};

/// Parses and validates a config document. Unknown keys and wrong types throw
/// ConfigError naming the field path; an unknown family throws UnknownFamily.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::string& path);
/// Canonical JSON of a config with every default filled in.
nlohmann::json config_json(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

/// Builds the dataset described by the config (deterministic under the seed).
Dataset build_dataset(const ExperimentConfig& cfg);
/// Model with dimensions taken from the dataset, initialized from the seed.
std::unique_ptr<DensityModel> build_model(const ExperimentConfig& cfg, const Dataset& data);

/// Standardized covariate row for the configured condition.
Eigen::RowVectorXd condition_row(const ExperimentConfig& cfg, const Dataset& data);

struct RunResult {
  std::unique_ptr<DensityModel> model;
  Dataset data;
  TrainHistory history;
  nlohmann::json metrics;
};

/// Writes manifest.json for the run into the output directory.
void write_manifest(const ExperimentConfig& cfg, const Dataset& data, const std::string& command);

/// Train (or load `model_path`) and compute the named metrics, writing every artifact.
RunResult run_experiment(const ExperimentConfig& cfg, const std::vector<std::string>& metrics,
                         const std::string& model_path = {}, const std::string& command = "train");

/// Writes the dataset (raw units when available) and its split indices.
void write_dataset(const ExperimentConfig& cfg, const Dataset& data);

/// Mean test LL per pair for several saved models plus the win table.
nlohmann::json run_pairwise(const ExperimentConfig& cfg, const std::vector<std::string>& model_paths);

}  // namespace monde::tools
