#include "tbal/thresholds.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace tbal {

ThresholdVector ThresholdVector::constant(int num_classes, double value) {
  return ThresholdVector(std::vector<double>(static_cast<std::size_t>(num_classes), value));
}

bool ThresholdVector::selects(const ScoredPoint& p) const {
  return p.score >= values.at(static_cast<std::size_t>(p.predicted));
}

GroupBy parse_group_by(std::string_view name) {
  if (name == "true_label") return GroupBy::true_label;
  if (name == "predicted_label") return GroupBy::predicted_label;
  throw std::invalid_argument("unknown group_by '" + std::string(name) + "'");
}

std::string_view to_string(GroupBy group_by) {
  return group_by == GroupBy::true_label ? "true_label" : "predicted_label";
}

std::vector<double> uniform_grid(std::size_t points) {
  std::vector<double> grid(points);
  for (std::size_t i = 0; i < points; ++i) {
    grid[i] = static_cast<double>(i + 1) / static_cast<double>(points);
  }
  return grid;
}

void ThresholdConfig::validate() const {
  if (grid.empty()) throw std::invalid_argument("threshold grid is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] >= 0.0 && grid[i] <= 1.0)) {
      throw std::invalid_argument("threshold grid values must lie in [0,1]");
    }
    if (i > 0 && !(grid[i] > grid[i - 1])) {
      throw std::invalid_argument("threshold grid must be strictly ascending");
    }
  }
  if (!(rho0 > 0.0 && rho0 <= 1.0)) throw std::invalid_argument("rho0 must lie in (0,1]");
  if (!(c1 >= 0.0)) throw std::invalid_argument("C1 must be non-negative");
  if (!(eps_a >= 0.0 && eps_a <= 1.0)) throw std::invalid_argument("eps_a must lie in [0,1]");
}

namespace {

template <typename Selects>
double coverage_impl(std::span<const ScoredPoint> points, Selects selects) {
  if (points.empty()) throw std::invalid_argument("coverage of an empty set");
  std::size_t selected = 0;
  for (const auto& p : points) selected += selects(p) ? 1 : 0;
  return static_cast<double>(selected) / static_cast<double>(points.size());
}

template <typename Selects>
std::optional<double> error_impl(std::span<const ScoredPoint> points, Selects selects) {
  if (points.empty()) throw std::invalid_argument("error of an empty set");
  std::size_t selected = 0;
  std::size_t wrong = 0;
  for (const auto& p : points) {
    if (!selects(p)) continue;
    ++selected;
    if (!p.correct()) ++wrong;
  }
  if (selected == 0) return std::nullopt;
  return static_cast<double>(wrong) / static_cast<double>(selected);
}

}  // namespace

double empirical_coverage(std::span<const ScoredPoint> points, const ThresholdVector& t) {
  return coverage_impl(points, [&](const ScoredPoint& p) { return t.selects(p); });
}

double empirical_coverage(std::span<const ScoredPoint> points, double t) {
  return coverage_impl(points, [t](const ScoredPoint& p) { return p.score >= t; });
}

std::optional<double> empirical_error(std::span<const ScoredPoint> points,
                                      const ThresholdVector& t) {
  return error_impl(points, [&](const ScoredPoint& p) { return t.selects(p); });
}

std::optional<double> empirical_error(std::span<const ScoredPoint> points, double t) {
  return error_impl(points, [t](const ScoredPoint& p) { return p.score >= t; });
}

double empirical_coverage(const ConfidenceModel& g, const ThresholdVector& t,
                          const Eigen::MatrixXd& x, std::span<const int> labels) {
  return empirical_coverage(g.score_points(x, labels), t);
}

std::optional<double> empirical_error(const ConfidenceModel& g, const ThresholdVector& t,
                                      const Eigen::MatrixXd& x, std::span<const int> labels) {
  return empirical_error(g.score_points(x, labels), t);
}

double std_estimate(double err_hat, std::size_t selected) {
  if (selected == 0) throw std::invalid_argument("standard error with zero selected points");
  if (!(err_hat >= 0.0 && err_hat <= 1.0)) throw std::invalid_argument("error outside [0,1]");
  return std::sqrt(err_hat * (1.0 - err_hat) / static_cast<double>(selected));
}

ThresholdEstimate estimate_thresholds(std::span<const ScoredPoint> points, int num_classes,
                                      const ThresholdConfig& config) {
  config.validate();
  const auto k = static_cast<std::size_t>(num_classes);
  std::vector<std::vector<ScoredPoint>> groups(k);
  for (const auto& p : points) {
    const int key = config.group_by == GroupBy::true_label ? p.true_label : p.predicted;
    groups.at(static_cast<std::size_t>(key)).push_back(p);
  }

  ThresholdEstimate out;
  out.thresholds = ThresholdVector::constant(num_classes, kNoAutoLabel);
  for (std::size_t y = 0; y < k; ++y) {
    ClassThreshold info;
    info.label = static_cast<int>(y);
    info.group_size = groups[y].size();
    if (!groups[y].empty()) {
      const std::span<const ScoredPoint> group(groups[y]);
      for (double t : config.grid) {
        if (empirical_coverage(group, t) < config.rho0) continue;
        const auto err = empirical_error(group, t);
        // coverage >= rho0 > 0 guarantees a non-empty selection
        const auto selected = static_cast<std::size_t>(std::count_if(
            group.begin(), group.end(), [t](const ScoredPoint& p) { return p.score >= t; }));
        const double sd = std_estimate(*err, selected);
        if (*err + config.c1 * sd <= config.eps_a) {
          info.threshold = t;
          info.selected = selected;
          info.error = err;
          info.std_error = sd;
          break;
        }
      }
    }
    out.thresholds.values[y] = info.threshold;
    out.classes.push_back(info);
  }
  return out;
}

ThresholdEstimate estimate_thresholds(const ConfidenceModel& g, const Eigen::MatrixXd& x_th,
                                      std::span<const int> y_th, const ThresholdConfig& config) {
  return estimate_thresholds(g.score_points(x_th, y_th), g.classifier().num_classes(), config);
}

}  // namespace tbal
