#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "tbal/confidence.hpp"

namespace tbal {

/// Threshold meaning "auto-label nothing for this class".
inline constexpr double kNoAutoLabel = std::numeric_limits<double>::infinity();

/// Per-class auto-labeling thresholds in [0,1] or kNoAutoLabel.
struct ThresholdVector {
  std::vector<double> values;

  ThresholdVector() = default;
  explicit ThresholdVector(std::vector<double> v) : values(std::move(v)) {}
  static ThresholdVector constant(int num_classes, double value);

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t c) const { return values[c]; }
  /// Score >= threshold of the predicted class.
  bool selects(const ScoredPoint& p) const;

  friend bool operator==(const ThresholdVector&, const ThresholdVector&) = default;
};

enum class GroupBy { true_label, predicted_label };

GroupBy parse_group_by(std::string_view name);
std::string_view to_string(GroupBy group_by);

/// {1/n, 2/n, ..., 1}.
std::vector<double> uniform_grid(std::size_t points);

struct ThresholdConfig {
  std::vector<double> grid = uniform_grid(200);
  double rho0 = 0.05;
  double c1 = 0.25;
  double eps_a = 0.05;
  GroupBy group_by = GroupBy::true_label;

  void validate() const;
};

/// Fraction of points with score >= t[predicted].
double empirical_coverage(std::span<const ScoredPoint> points, const ThresholdVector& t);
/// Scalar threshold applied to every point (single-class groups).
double empirical_coverage(std::span<const ScoredPoint> points, double t);

/// Mistakes among selected points over the selected count; empty when
/// nothing is selected.
std::optional<double> empirical_error(std::span<const ScoredPoint> points,
                                      const ThresholdVector& t);
std::optional<double> empirical_error(std::span<const ScoredPoint> points, double t);

/// Same estimators evaluated through a confidence model on labeled rows.
double empirical_coverage(const ConfidenceModel& g, const ThresholdVector& t,
                          const Eigen::MatrixXd& x, std::span<const int> labels);
std::optional<double> empirical_error(const ConfidenceModel& g, const ThresholdVector& t,
                                      const Eigen::MatrixXd& x, std::span<const int> labels);

/// Binomial standard error sqrt(e (1 - e) / m).
double std_estimate(double err_hat, std::size_t selected);

struct ClassThreshold {
  int label = 0;
  std::size_t group_size = 0;
  double threshold = kNoAutoLabel;
  std::size_t selected = 0;
  std::optional<double> error;
  double std_error = 0.0;
};

struct ThresholdEstimate {
  ThresholdVector thresholds;
  std::vector<ClassThreshold> classes;
};

/// Per class y: group the threshold-estimation points (by true label unless
/// configured otherwise), keep grid values whose group coverage is >= rho0,
/// and pick the smallest one with error + c1 * std <= eps_a. Falls back to
/// kNoAutoLabel.
ThresholdEstimate estimate_thresholds(std::span<const ScoredPoint> points, int num_classes,
                                      const ThresholdConfig& config);

ThresholdEstimate estimate_thresholds(const ConfidenceModel& g, const Eigen::MatrixXd& x_th,
                                      std::span<const int> y_th, const ThresholdConfig& config);

}  // namespace tbal
