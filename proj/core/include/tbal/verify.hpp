#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string_view>

#include <Eigen/Core>

#include "tbal/confidence.hpp"
#include "tbal/data.hpp"
#include "tbal/rng.hpp"
#include "tbal/tbal.hpp"
#include "tbal/thresholds.hpp"

namespace tbal {

struct FinalMetrics {
  std::optional<double> error;  // empty when nothing was auto-labeled
  double coverage = 0.0;
  std::size_t auto_labeled = 0;
  std::size_t auto_wrong = 0;
};

/// Auto-labeling error over the auto-labeled points only and coverage
/// N_a / N_u, checked against the hidden labels of `truth` (the dataset the
/// run labeled). Throws std::invalid_argument when the report references ids
/// that `truth` does not hold.
FinalMetrics final_metrics(const TbalReport& report, const Dataset& truth);

/// Draws one already-scored point from a distribution with known labels.
using PointSampler = std::function<ScoredPoint(Engine&)>;

/// Draws one feature vector and its true label.
struct LabeledDraw {
  Eigen::VectorXd x;
  int label = 0;
};
using LabeledSampler = std::function<LabeledDraw(Engine&)>;

struct PopulationEstimate {
  std::size_t samples = 0;
  std::size_t selected = 0;
  double coverage = 0.0;
  double coverage_se = 0.0;
  std::optional<double> error;
  double error_se = 0.0;
};

/// Plug-in Monte-Carlo estimates of P(g(x)[y_hat] >= t[y_hat]) and
/// P(y != y_hat | selected) with binomial standard errors.
PopulationEstimate mc_population_metrics(const PointSampler& sampler, const ThresholdVector& t,
                                         std::size_t samples, SeedStream seed);

PopulationEstimate mc_population_metrics(const ConfidenceModel& g, const ThresholdVector& t,
                                         const LabeledSampler& sampler, std::size_t samples,
                                         SeedStream seed);

enum class CoverageDomain {
  predicted_side,  // normalize by the length of the y_hat = 1 side
  unit_interval,   // normalize by the whole [0, 1]
};

CoverageDomain parse_coverage_domain(std::string_view name);

/// x ~ Uniform(0,1), y = 1(x >= theta_true), y_hat = 1(x >= theta_pred),
/// g_w(x) = |w - x|; only points with y_hat = 1 are eligible.
struct Toy1DWorld {
  double theta_true = 0.5;
  double theta_pred = 0.25;
  double w = 0.0;
  CoverageDomain domain = CoverageDomain::predicted_side;
};

struct ToyMetrics {
  double actual_coverage = 0.0;
  std::optional<double> actual_error;  // empty when the selected set has zero length
  double surrogate_coverage = 0.0;
  double surrogate_error = 0.0;
};

/// Exact interval lengths for the actual quantities; adaptive Gauss-Kronrod
/// quadrature for the sigmoid-weighted surrogates.
ToyMetrics toy_1d_metrics(const Toy1DWorld& world, double t, double alpha);

/// Samples the toy world: y_hat = 1 side only for predicted_side, the whole
/// interval (class-0 side never selected) for unit_interval.
PointSampler toy_sampler(const Toy1DWorld& world);

/// Thresholds matching `toy_sampler`: class 0 never auto-labeled.
ThresholdVector toy_thresholds(double t);

}  // namespace tbal
