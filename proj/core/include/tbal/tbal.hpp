#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tbal/confidence.hpp"
#include "tbal/data.hpp"
#include "tbal/model.hpp"
#include "tbal/thresholds.hpp"

namespace tbal {

struct PosthocConfig {
  ConfidenceKind method = ConfidenceKind::softmax;
  TemperatureConfig temperature;
  std::size_t points_per_bin = 25;
  /// The seed field is ignored; each round derives its own stream.
  ColanderConfig colander;
};

struct TbalConfig {
  double eps_a = 0.05;
  std::size_t train_budget = 500;  // N_t
  std::size_t seed_size = 100;     // n_s
  std::size_t query_batch = 100;   // n_b
  double nu = 0.5;
  double rho0 = 0.05;
  double c1 = 0.25;
  std::vector<double> grid = uniform_grid(200);
  GroupBy group_by = GroupBy::true_label;
  std::vector<int> hidden = {32};
  /// The seed field is ignored; each round derives its own stream.
  TrainConfig train;
  PosthocConfig posthoc;
  std::size_t active_multiplier = 2;  // C
  std::uint64_t master_seed = 0;
  /// 0 runs until the pool or the budget is exhausted.
  int max_rounds = 0;

  ThresholdConfig threshold_config() const;
  void validate() const;
};

struct RoundRecord {
  int round = 0;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::size_t n_cal = 0;
  std::size_t n_th = 0;
  ThresholdVector thresholds;
  std::vector<ClassThreshold> class_thresholds;
  std::optional<std::vector<double>> colander_t_prime;
  std::size_t n_auto = 0;
  std::size_t n_auto_wrong = 0;  // oracle-computed, reporting only
  std::optional<double> auto_error;
  double auto_coverage = 0.0;  // n_auto / initial pool size
  std::size_t n_queried = 0;
  std::size_t pool_remaining = 0;
  std::size_t n_val_next = 0;
  std::vector<std::string> warnings;
  double wall_seconds = 0.0;
};

/// Classifier, confidence function and thresholds of the last round run.
struct RoundArtifacts {
  std::shared_ptr<const MlpClassifier> classifier;
  ConfidenceModel confidence;
  ThresholdVector thresholds;
};

struct TbalReport {
  std::vector<RoundRecord> rounds;
  /// Indices refer to the unlabeled dataset.
  LabeledSet output;
  std::vector<std::uint64_t> output_ids;  // parallel to output.entries()
  std::size_t initial_pool = 0;
  std::size_t human_seed = 0;
  std::size_t human_active = 0;
  std::size_t auto_labeled = 0;
  std::size_t n_train_final = 0;
  std::optional<double> final_error;
  double final_coverage = 0.0;
  std::vector<std::string> warnings;
  std::optional<RoundArtifacts> last_round;
};

/// Margin-random querying: restrict to the min(C n_b, |pool|) smallest
/// softmax margins, then draw min(n_b, that many) uniformly.
QueryResult active_query(const Dataset& data, const MlpClassifier& classifier, const Pool& pool,
                         std::size_t batch, std::size_t multiplier, int round, SeedStream seed);

struct AutoLabelResult {
  LabeledSet labeled;
  Pool remaining;
  std::size_t wrong = 0;  // oracle count, reporting only
};

/// Labels every pool point with g(x)[y_hat] >= t[y_hat] as y_hat.
AutoLabelResult auto_label_select(const ConfidenceModel& g, const ThresholdVector& t,
                                  const Dataset& data, const Pool& pool, int round);

/// Keeps the validation points outside the auto-labeling region, with
/// their original labels.
LabeledSet filter_validation(const ConfidenceModel& g, const ThresholdVector& t,
                             const Dataset& val_data, const LabeledSet& validation);

ConfidenceModel fit_posthoc(const PosthocConfig& config,
                            std::shared_ptr<const MlpClassifier> classifier,
                            const Eigen::MatrixXd& x_cal, std::span<const int> y_cal,
                            SeedStream seed, RoundRecord* record);

/// Threshold-based auto-labeling loop. `validation` indexes `val_data`.
TbalReport run_tbal(const TbalConfig& config, const Dataset& unlabeled, const Dataset& val_data,
                    const LabeledSet& validation);

/// Uses every point of `val_data` as human-labeled validation.
TbalReport run_tbal(const TbalConfig& config, const Dataset& unlabeled, const Dataset& val_data);

LabeledSet oracle_labeled(const Dataset& data, std::span<const std::size_t> indices);

}  // namespace tbal
