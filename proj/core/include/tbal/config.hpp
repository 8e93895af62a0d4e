#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "tbal/data.hpp"
#include "tbal/tbal.hpp"

namespace tbal {

enum class ConfigErrorKind {
  file_not_found,
  syntax,
  missing_field,
  type_mismatch,
  unknown_key,
  out_of_range,
  invalid_value,
};

std::string_view to_string(ConfigErrorKind kind);

/// Every error carries the dotted path of the offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(ConfigErrorKind kind, std::string key_path, const std::string& detail);
  ConfigErrorKind kind() const { return kind_; }
  const std::string& key_path() const { return key_path_; }

 private:
  ConfigErrorKind kind_;
  std::string key_path_;
};

/// Isotropic Gaussian mixture; without explicit means the class centers sit
/// evenly on a circle of `radius` in the first two coordinates.
struct SyntheticSpec {
  int num_classes = 4;
  int dim = 2;
  std::optional<Eigen::MatrixXd> means;
  double radius = 1.0;
  double sigma = 1.0;
  std::size_t n_unlabeled = 0;
  std::size_t n_validation = 0;
  std::size_t n_test = 0;
  std::uint64_t seed = 0;

  Eigen::MatrixXd class_means() const;
};

struct FileSpec {
  std::filesystem::path path;
  DataFormat format = DataFormat::csv;
  LoadOptions options;
  /// Keep this many rows drawn uniformly without replacement; ids are the
  /// original row numbers.
  std::optional<std::size_t> subsample;
  std::uint64_t subsample_seed = 0;
};

struct FileSources {
  FileSpec unlabeled;
  FileSpec validation;
  std::optional<FileSpec> test;
};

using DatasetSpec = std::variant<SyntheticSpec, FileSources>;

/// Candidate values per hyperparameter. Phase 1 sweeps the train-time
/// product, phase 2 the product for the configured post-hoc method.
struct HpoGrid {
  std::vector<double> train_lr;
  std::vector<std::size_t> train_batch_size;
  std::vector<int> train_epochs;
  std::vector<double> train_weight_decay;

  std::vector<double> colander_lambda;
  std::vector<double> colander_alpha;
  std::vector<double> colander_lr;
  std::vector<double> colander_weight_decay;
  std::vector<int> colander_epochs;
  std::vector<std::size_t> colander_batch_size;

  std::vector<double> temperature_lr;
  std::vector<int> temperature_epochs;

  std::vector<std::size_t> points_per_bin;

  std::size_t holdout_size = 100;  // N_hyp carved from validation
  std::size_t runs = 5;
  std::uint64_t tie_break_seed = 0;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  TbalConfig tbal;
  std::size_t repeats = 5;
  std::filesystem::path output_dir = "tbal-out";
  bool score_dumps = true;
  bool include_timing = false;
  std::optional<HpoGrid> hpo;
};

/// Strict YAML parsing: unknown keys, missing required fields, type
/// mismatches and range violations all raise ConfigError. Relative paths
/// resolve against the directory of the file.
ExperimentConfig parse_config(const std::filesystem::path& path);
ExperimentConfig parse_config_text(std::string_view text,
                                   const std::filesystem::path& base_dir = ".");

struct ExperimentData {
  Dataset unlabeled;
  Dataset validation;
  std::optional<Dataset> test;
};

ExperimentData load_experiment_data(const DatasetSpec& spec);

}  // namespace tbal
