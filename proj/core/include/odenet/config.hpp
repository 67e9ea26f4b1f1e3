#pragma once

// JSON run configuration shared by the command-line tool and tests.
//
// {
//   "seed": 0,
//   "model": {"blocks": [{"width": 16, "scheme": "rk4", "n_steps": 1,
//                         "family": "piecewise_constant", "k": 1}]},
//   "train": {"epochs": 200, "batch_size": 64, "learning_rate": 0.05, ...},
//   "dataset": {"kind": "two_spirals", "n_train": 1000, "n_test": 1000, "noise": 0.0},
//   "output": {"checkpoint": "model.json", "metrics": "metrics.csv"}
// }
//
// Unknown keys are rejected. Every field except model.blocks has a default.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "odenet/dataset.hpp"
#include "odenet/model.hpp"
#include "odenet/train.hpp"

namespace odenet {

struct DatasetSpec {
  std::string kind = "two_spirals";  // synthetic kind or "idx"
  std::size_t n_train = 1000;
  std::size_t n_test = 1000;
  double noise = 0.0;
  // IDX files; paths are relative to the config file.
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;
  std::size_t train_limit = 0;
  std::size_t test_limit = 0;
  bool pool2x2 = false;
};

struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainConfig train;
  DatasetSpec dataset;
  std::string checkpoint_path = "model.json";
  std::string metrics_path = "metrics.csv";
};

/// Throws ConfigError naming the offending field.
RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Re-derive seed-dependent pieces (train seed) after a --seed override.
void set_seed(RunConfig& config, std::uint64_t seed);

struct DataSplit {
  Dataset train;
  Dataset test;
};

/// Synthetic data: train and test drawn with seeds derived from `seed`.
DataSplit load_datasets(const DatasetSpec& spec, std::uint64_t seed);

/// Test split only, for evaluation; `limit` (0 = all) truncates it.
Dataset load_eval_dataset(const DatasetSpec& spec, std::uint64_t seed, std::size_t limit);

}  // namespace odenet
