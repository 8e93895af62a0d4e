#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tbal/config.hpp"
#include "tbal/tbal.hpp"
#include "tbal/verify.hpp"

namespace tbal {

/// A failure inside one of the seeded runs or HPO evaluations.
class RunError : public std::runtime_error {
 public:
  RunError(std::size_t run, const std::string& detail)
      : std::runtime_error("run " + std::to_string(run) + ": " + detail), run_(run) {}
  std::size_t run() const { return run_; }

 private:
  std::size_t run_;
};

/// Raised before any work when the output directory already holds results.
class OutputExistsError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunOptions {
  /// Empty: nothing is written.
  std::filesystem::path output_dir;
  bool force = false;
  std::size_t jobs = 1;
};

struct RunSummary {
  std::size_t run = 0;
  std::uint64_t seed = 0;
  FinalMetrics metrics;
  std::size_t human_labeled = 0;
  std::size_t rounds = 0;
  std::optional<double> test_accuracy;  // last-round classifier on the test split
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population std
  std::size_t count = 0;
};

MeanStd mean_std(const std::vector<double>& values);

struct ExperimentSummary {
  std::vector<RunSummary> runs;
  MeanStd error;  // over runs that auto-labeled something
  MeanStd coverage;
  std::optional<MeanStd> test_accuracy;
};

/// Seed of run `r`, derived from the master seed.
std::uint64_t run_seed(std::uint64_t master_seed, std::size_t run);

/// R seeded runs of the TBAL loop. With an output directory, writes per run
/// `run_<r>.rounds.jsonl`, `run_<r>.report.json`, `run_<r>.labels.csv` and
/// (optionally) `run_<r>.scores.csv`, then `summary.json`. Refuses to touch
/// a directory that already has `summary.json` unless `force` is set.
ExperimentSummary run_experiment(const ExperimentConfig& config, const ExperimentData& data,
                                 const RunOptions& options);

std::string summary_json(const ExperimentConfig& config, const ExperimentSummary& summary);

struct HpoCombo {
  std::size_t id = 0;
  int phase = 1;
  std::vector<std::pair<std::string, double>> params;
  MeanStd error;  // absent first-round error counts as 0
  MeanStd coverage;
};

enum class HpoRule { within_tolerance_max_coverage, min_error_fallback };

struct HpoPhaseResult {
  std::vector<HpoCombo> combos;
  std::size_t selected = 0;  // index into combos
  HpoRule rule = HpoRule::within_tolerance_max_coverage;
  std::size_t tied = 1;
};

struct HpoResult {
  HpoPhaseResult train_phase;
  HpoPhaseResult posthoc_phase;
  TbalConfig selected;
};

/// Selection over (mean error, mean coverage) pairs: among combos with
/// error <= eps_a the max coverage, else the min error; exact ties broken
/// uniformly by `tie_break`.
std::size_t select_combo(const std::vector<HpoCombo>& combos, double eps_a, SeedStream tie_break,
                         HpoRule* rule = nullptr, std::size_t* tied = nullptr);

/// Two additive phases of first-round-only runs evaluated on a held-out
/// slice carved from the validation data: train-time grid with softmax
/// scores, then the post-hoc grid of the configured method with the phase-1
/// winner fixed.
HpoResult hyperparameter_search(const ExperimentConfig& config, const ExperimentData& data,
                                const RunOptions& options);

std::string hpo_json(const HpoResult& result);

struct ToyGrid {
  double w_step = 0.02;
  double t_step = 0.05;
  std::vector<double> alphas = {1.0, 10.0, 100.0};
  CoverageDomain domain = CoverageDomain::predicted_side;
};

struct ToyRow {
  double w = 0.0;
  double t = 0.0;
  double alpha = 0.0;
  ToyMetrics metrics;
};

std::vector<double> step_grid(double step);
std::vector<ToyRow> toy_sweep(const ToyGrid& grid);

/// CSV: w,t,alpha,actual_err,surrogate_err,actual_cov,surrogate_cov
void write_toy_csv(std::ostream& out, const std::vector<ToyRow>& rows);

/// Writes unlabeled/validation(/test) files of a synthetic spec into `dir`.
void write_synthetic(const SyntheticSpec& spec, DataFormat format,
                     const std::filesystem::path& dir, bool force);

}  // namespace tbal
