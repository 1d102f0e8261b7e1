#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdu/data.hpp"
#include "cdu/mlp.hpp"
#include "cdu/training.hpp"
#include "cdu/unlearning.hpp"

namespace cdu {

using Json = nlohmann::ordered_json;

/// Where the training data comes from. `kind` is one of synth_blobs, csv or
/// mnist; the last n_test rows become the test set.
struct DataSource {
  std::string kind = "synth_blobs";
  std::size_t n = 1000;
  std::size_t dim = 20;
  int classes = 4;
  double separation = 3.0;
  std::uint64_t seed = 0;
  std::filesystem::path path;
  std::string label_column = "label";
  std::filesystem::path images;
  std::filesystem::path labels;
  std::size_t limit = 0;  // 0: no limit
  std::size_t n_test = 200;
};

struct EvalConfig {
  std::vector<double> lambdas{10.0, 100.0, 1000.0, 10000.0};
  std::vector<double> epsilons{100.0, 200.0, 500.0, 1000.0, 2000.0, 5000.0};
  std::vector<double> sweep_lambdas{10.0, 1000.0};
  double delta = 0.1;
  std::size_t noise_reps = 3;
  double unconstrained_C = 1e12;
  /// Relearning stops once the D_u loss is at most the fixed threshold, or,
  /// when none is set, this factor times the evaluated model's D_r loss.
  double relearn_threshold_factor = 0.5;
  std::optional<double> relearn_threshold;
  std::size_t relearn_max_epochs = 50;
};

struct ExperimentConfig {
  DataSource data;
  MlpSpec model;
  TrainConfig train;
  UnlearnConfig unlearn;
  std::size_t n_u = 20;
  std::uint64_t split_seed = 0;
  EvalConfig eval;
};

/// Validates and parses a config document. Unknown keys, wrong types and
/// violated ranges raise SchemaError carrying the JSON pointer of the field.
/// `base_dir` resolves relative data paths.
ExperimentConfig parse_experiment_config(const Json& doc,
                                         const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

Json to_json(const DataSource& d);
Json to_json(const MlpSpec& s);
Json to_json(const TrainConfig& c);
Json to_json(const UnlearnConfig& c);
Json to_json(const EvalConfig& c);
Json to_json(const ExperimentConfig& c);

DataSource parse_data_source(const Json& j, const std::string& pointer,
                             const std::filesystem::path& base_dir = {});
UnlearnConfig parse_unlearn_config(const Json& j, const std::string& pointer,
                                   const UnlearnConfig& defaults = {});

/// Loads (or generates) the dataset and splits off the test rows.
TrainTest load_data(const DataSource& source);

}  // namespace cdu
