#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "instances.hpp"
#include "oracles.hpp"
#include "tbal/thresholds.hpp"

using namespace tbal;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<ScoredPoint> to_scored(const std::vector<oracle::Point>& pts) {
  std::vector<ScoredPoint> out;
  for (const auto& p : pts) out.push_back({p.true_label, p.predicted, p.score});
  return out;
}

/// One-class group: true label 0 throughout; a wrong point is predicted as 1.
std::vector<ScoredPoint> group(const std::vector<double>& scores, const std::vector<int>& correct) {
  std::vector<ScoredPoint> out;
  for (std::size_t i = 0; i < scores.size(); ++i) out.push_back({0, correct[i] ? 0 : 1, scores[i]});
  return out;
}

}  // namespace

TEST_CASE("coverage and error by hand") {
  const auto pts = group({0.9, 0.8, 0.7, 0.4}, {1, 0, 1, 0});
  CHECK(empirical_coverage(pts, 0.75) == 0.5);
  CHECK(empirical_error(pts, 0.75) == 0.5);
  CHECK(empirical_coverage(pts, ThresholdVector::constant(2, 0.0)) == 1.0);
  CHECK(empirical_coverage(pts, ThresholdVector::constant(2, kNoAutoLabel)) == 0.0);
  CHECK_FALSE(empirical_error(pts, ThresholdVector::constant(2, kNoAutoLabel)).has_value());
  const auto right = group({0.9, 0.8}, {1, 1});
  CHECK(empirical_error(right, 0.1) == 0.0);
  CHECK_THROWS_AS(empirical_coverage(std::vector<ScoredPoint>{}, 0.5), std::invalid_argument);
}

TEST_CASE("scores equal to the threshold are selected") {
  const auto pts = group({0.5, 0.49999999}, {1, 1});
  CHECK(empirical_coverage(pts, 0.5) == 0.5);
}

TEST_CASE("binomial standard error") {
  CHECK(std_estimate(0.0, 10) == 0.0);
  CHECK(std_estimate(0.5, 25) == doctest::Approx(0.1));
  CHECK(std_estimate(0.2, 100) == doctest::Approx(0.04));
  CHECK_THROWS_AS(std_estimate(0.1, 0), std::invalid_argument);
}

TEST_CASE("estimators equal brute-force enumeration") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const auto inst = testing::random_estimator_instance(rng, 50, 5);
    const auto pts = to_scored(inst.points);
    const ThresholdVector t(inst.thresholds);
    CHECK(empirical_coverage(pts, t) == oracle::coverage(inst.points, inst.thresholds));
    CHECK(empirical_error(pts, t) == oracle::error(inst.points, inst.thresholds));
  }
}

TEST_CASE("coverage never increases when a threshold is raised") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    auto inst = testing::random_estimator_instance(rng, 40, 4);
    const auto pts = to_scored(inst.points);
    const double before = empirical_coverage(pts, ThresholdVector(inst.thresholds));
    auto raised = inst.thresholds;
    const auto c = rng() % raised.size();
    raised[c] = std::isinf(raised[c]) ? raised[c] : raised[c] + 0.05 * static_cast<double>(1 + rng() % 5);
    CHECK(empirical_coverage(pts, ThresholdVector(raised)) <= before);
  }
}

TEST_CASE("the worked threshold example picks 0.75") {
  const auto pts = group({0.95, 0.9, 0.85, 0.8, 0.7, 0.6, 0.55, 0.4, 0.3, 0.2}, {1, 1, 1, 1, 0, 1, 1, 0, 0, 0});
  ThresholdConfig cfg;
  cfg.grid = {0.0, 0.25, 0.5, 0.75};
  cfg.rho0 = 0.2;
  cfg.c1 = 0.25;
  cfg.eps_a = 0.1;
  const auto est = estimate_thresholds(pts, 2, cfg);
  CHECK(est.thresholds[0] == 0.75);
  CHECK(est.classes[0].selected == 4);
  CHECK(est.classes[0].error == 0.0);
  CHECK(est.thresholds[1] == kInf);  // empty group
  CHECK(*empirical_error(pts, 0.5) == doctest::Approx(1.0 / 7.0));
}

TEST_CASE("an always-correct group takes the smallest grid value meeting the coverage floor") {
  const auto pts = group({0.2, 0.4, 0.6, 0.8, 0.95}, {1, 1, 1, 1, 1});
  ThresholdConfig cfg;
  cfg.grid = uniform_grid(10);
  cfg.rho0 = 0.05;
  const auto est = estimate_thresholds(pts, 2, cfg);
  CHECK(est.thresholds[0] == 0.1);
}

TEST_CASE("grouping switch") {
  // True class 0 contains a point predicted as 1 with a high score; grouped
  // by prediction it lands in group 1 instead.
  const std::vector<ScoredPoint> pts{{0, 0, 0.9}, {0, 0, 0.8}, {0, 1, 0.95}, {1, 1, 0.7}};
  ThresholdConfig cfg;
  cfg.grid = {0.5, 0.85, 0.92};
  cfg.rho0 = 0.1;
  cfg.eps_a = 0.0;
  cfg.c1 = 0.0;
  const auto by_truth = estimate_thresholds(pts, 2, cfg);
  CHECK(by_truth.classes[0].group_size == 3);
  CHECK(by_truth.thresholds[0] == kInf);
  cfg.group_by = GroupBy::predicted_label;
  const auto by_pred = estimate_thresholds(pts, 2, cfg);
  CHECK(by_pred.classes[0].group_size == 2);
  CHECK(by_pred.thresholds[0] == 0.5);
  CHECK(by_pred.thresholds[1] == kInf);
}

TEST_CASE("estimation matches an exhaustive scan and is safe by construction") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const auto inst = testing::random_threshold_instance(rng, 50, 20);
    for (auto by : {GroupBy::true_label, GroupBy::predicted_label}) {
      ThresholdConfig cfg;
      cfg.grid = inst.grid;
      cfg.rho0 = inst.rho0;
      cfg.c1 = inst.c1;
      cfg.eps_a = inst.eps_a;
      cfg.group_by = by;
      const auto pts = to_scored(inst.points);
      const auto est = estimate_thresholds(pts, inst.num_classes, cfg);
      for (int y = 0; y < inst.num_classes; ++y) {
        std::vector<std::pair<double, bool>> g;
        std::vector<ScoredPoint> members;
        for (const auto& p : inst.points) {
          const int key = by == GroupBy::true_label ? p.true_label : p.predicted;
          if (key != y) continue;
          g.emplace_back(p.score, p.true_label == p.predicted);
          members.push_back({p.true_label, p.predicted, p.score});
        }
        const double t = est.thresholds[static_cast<std::size_t>(y)];
        CHECK(t == oracle::min_feasible_threshold(g, inst.grid, inst.rho0, inst.c1, inst.eps_a));
        if (std::isfinite(t)) {
          const double e = *empirical_error(members, t);
          const auto m = est.classes[static_cast<std::size_t>(y)].selected;
          CHECK(e + inst.c1 * std_estimate(e, m) <= inst.eps_a);
        }
      }
    }
  }
}

TEST_CASE("zero tolerance with no safety margin only admits error-free thresholds") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    auto inst = testing::random_threshold_instance(rng, 30, 10);
    ThresholdConfig cfg;
    cfg.grid = inst.grid;
    cfg.rho0 = inst.rho0;
    cfg.c1 = 0.0;
    cfg.eps_a = 0.0;
    const auto pts = to_scored(inst.points);
    const auto est = estimate_thresholds(pts, inst.num_classes, cfg);
    for (const auto& c : est.classes) {
      if (std::isfinite(c.threshold)) CHECK(c.error == 0.0);
    }
  }
}

TEST_CASE("invalid threshold configurations") {
  ThresholdConfig cfg;
  cfg.grid = {};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.grid = {0.5, 0.5};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.grid = {0.5};
  cfg.rho0 = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.rho0 = 0.1;
  cfg.c1 = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  const auto grid = uniform_grid(200);
  CHECK(grid.front() == 0.005);
  CHECK(grid.back() == 1.0);
  CHECK(grid.size() == 200);
}
