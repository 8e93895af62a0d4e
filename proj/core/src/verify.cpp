#include "tbal/verify.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace tbal {

FinalMetrics final_metrics(const TbalReport& report, const Dataset& truth) {
  if (report.output_ids.size() != report.output.size()) {
    throw std::invalid_argument("report ids do not cover its output");
  }
  if (report.initial_pool != truth.size()) {
    throw std::invalid_argument("report pool size differs from the truth dataset");
  }
  std::unordered_map<std::uint64_t, std::size_t> row_of;
  row_of.reserve(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) row_of.emplace(truth.ids()[i], i);

  FinalMetrics m;
  const auto& entries = report.output.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto it = row_of.find(report.output_ids[i]);
    if (it == row_of.end()) {
      throw std::invalid_argument("report id " + std::to_string(report.output_ids[i]) +
                                  " not present in truth");
    }
    if (entries[i].source != LabelSource::automatic) continue;
    ++m.auto_labeled;
    if (entries[i].label != truth.oracle(it->second)) ++m.auto_wrong;
  }
  if (m.auto_labeled > 0) {
    m.error = static_cast<double>(m.auto_wrong) / static_cast<double>(m.auto_labeled);
  }
  m.coverage = truth.size() == 0 ? 0.0
                                 : static_cast<double>(m.auto_labeled) /
                                       static_cast<double>(truth.size());
  return m;
}

namespace {

PopulationEstimate summarize(std::size_t samples, std::size_t selected, std::size_t wrong) {
  PopulationEstimate est;
  est.samples = samples;
  est.selected = selected;
  const double n = static_cast<double>(samples);
  est.coverage = static_cast<double>(selected) / n;
  est.coverage_se = std::sqrt(est.coverage * (1.0 - est.coverage) / n);
  if (selected > 0) {
    const double e = static_cast<double>(wrong) / static_cast<double>(selected);
    est.error = e;
    est.error_se = std::sqrt(e * (1.0 - e) / static_cast<double>(selected));
  }
  return est;
}

}  // namespace

PopulationEstimate mc_population_metrics(const PointSampler& sampler, const ThresholdVector& t,
                                         std::size_t samples, SeedStream seed) {
  if (samples < 1) throw std::invalid_argument("need at least one sample");
  auto rng = seed.engine();
  std::size_t selected = 0;
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    const auto p = sampler(rng);
    if (!t.selects(p)) continue;
    ++selected;
    if (!p.correct()) ++wrong;
  }
  return summarize(samples, selected, wrong);
}

PopulationEstimate mc_population_metrics(const ConfidenceModel& g, const ThresholdVector& t,
                                         const LabeledSampler& sampler, std::size_t samples,
                                         SeedStream seed) {
  if (samples < 1) throw std::invalid_argument("need at least one sample");
  auto rng = seed.engine();
  const auto d = g.classifier().input_dim();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(samples), d);
  std::vector<int> labels(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    auto draw = sampler(rng);
    if (draw.x.size() != d) throw std::invalid_argument("sampler dimension mismatch");
    x.row(static_cast<Eigen::Index>(i)) = draw.x.transpose();
    labels[i] = draw.label;
  }
  const auto scored = g.score_points(x, labels);
  std::size_t selected = 0;
  std::size_t wrong = 0;
  for (const auto& p : scored) {
    if (!t.selects(p)) continue;
    ++selected;
    if (!p.correct()) ++wrong;
  }
  return summarize(samples, selected, wrong);
}

CoverageDomain parse_coverage_domain(std::string_view name) {
  if (name == "predicted_side") return CoverageDomain::predicted_side;
  if (name == "unit_interval") return CoverageDomain::unit_interval;
  throw std::invalid_argument("unknown coverage domain '" + std::string(name) + "'");
}

namespace {

struct Interval {
  double lo;
  double hi;
  double length() const { return std::max(0.0, hi - lo); }
};

Interval intersect(Interval a, Interval b) {
  return {std::max(a.lo, b.lo), std::min(a.hi, b.hi)};
}

/// Integrates f over [lo, hi], splitting at every breakpoint inside.
template <typename F>
double integrate(F f, double lo, double hi, std::vector<double> breaks) {
  if (!(hi > lo)) return 0.0;
  breaks.push_back(lo);
  breaks.push_back(hi);
  std::sort(breaks.begin(), breaks.end());
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
    const double a = std::max(lo, breaks[i]);
    const double b = std::min(hi, breaks[i + 1]);
    if (!(b > a)) continue;
    double err = 0.0;
    total += boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 20, 1e-12,
                                                                          &err);
  }
  return total;
}

}  // namespace

ToyMetrics toy_1d_metrics(const Toy1DWorld& world, double t, double alpha) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("toy threshold must lie in [0,1]");
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  const Interval side{world.theta_pred, 1.0};
  const Interval wrong_region{world.theta_pred, world.theta_true};
  const double norm = world.domain == CoverageDomain::predicted_side ? side.length() : 1.0;

  // S = side \ (w - t, w + t); at t = 0 the two pieces meet at w.
  const Interval left = intersect(side, {-1.0, world.w - t});
  const Interval right = intersect(side, {world.w + t, 2.0});
  const double selected = left.length() + right.length();
  const double selected_wrong =
      intersect(left, wrong_region).length() + intersect(right, wrong_region).length();

  ToyMetrics m;
  m.actual_coverage = selected / norm;
  if (selected > 0.0) m.actual_error = selected_wrong / selected;

  const auto weight = [&](double x) { return sigmoid(alpha, std::abs(world.w - x) - t); };
  const std::vector<double> breaks{world.w - t, world.w, world.w + t, world.theta_true};
  const double mass = integrate(weight, side.lo, side.hi, breaks);
  const double wrong_mass = integrate(weight, wrong_region.lo, wrong_region.hi, breaks);
  m.surrogate_coverage = mass / norm;
  m.surrogate_error = wrong_mass / mass;
  return m;
}

PointSampler toy_sampler(const Toy1DWorld& world) {
  return [world](Engine& rng) {
    const double lo = world.domain == CoverageDomain::predicted_side ? world.theta_pred : 0.0;
    std::uniform_real_distribution<double> u(lo, 1.0);
    const double x = u(rng);
    return ScoredPoint{x >= world.theta_true ? 1 : 0, x >= world.theta_pred ? 1 : 0,
                       std::abs(world.w - x)};
  };
}

ThresholdVector toy_thresholds(double t) { return ThresholdVector({kNoAutoLabel, t}); }

}  // namespace tbal
