#include "tbal/confidence.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>

namespace tbal {

ConfidenceKind parse_confidence_kind(std::string_view name) {
  if (name == "softmax") return ConfidenceKind::softmax;
  if (name == "temperature") return ConfidenceKind::temperature;
  if (name == "top_label_hb") return ConfidenceKind::top_label_hb;
  if (name == "colander") return ConfidenceKind::colander;
  throw std::invalid_argument("unknown confidence method '" + std::string(name) + "'");
}

std::string_view to_string(ConfidenceKind kind) {
  switch (kind) {
    case ConfidenceKind::softmax: return "softmax";
    case ConfidenceKind::temperature: return "temperature";
    case ConfidenceKind::top_label_hb: return "top_label_hb";
    case ConfidenceKind::colander: return "colander";
  }
  return "unknown";
}

namespace {

Eigen::MatrixXd uniform_matrix(Eigen::Index rows, Eigen::Index cols, Engine& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
  std::uniform_real_distribution<double> u(-bound, bound);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

double logistic(double x) { return sigmoid(1.0, x); }

}  // namespace

ColanderParams ColanderParams::zeros(int num_classes, int penultimate_dim) {
  const int m = num_classes + penultimate_dim;
  return {Eigen::MatrixXd::Zero(2 * m, m), Eigen::MatrixXd::Zero(num_classes, 2 * m),
          Eigen::VectorXd::Zero(num_classes)};
}

ColanderParams ColanderParams::initialize(int num_classes, int penultimate_dim, SeedStream seed) {
  const int m = num_classes + penultimate_dim;
  auto rng = seed.engine();
  ColanderParams p;
  p.w1 = uniform_matrix(2 * m, m, rng);
  p.w2 = uniform_matrix(num_classes, 2 * m, rng);
  p.t_raw = Eigen::VectorXd::Zero(num_classes);
  return p;
}

Eigen::VectorXd ColanderParams::thresholds() const {
  return t_raw.unaryExpr([](double v) { return logistic(v); });
}

double HistogramBins::lookup(double top_score) const {
  for (std::size_t b = 0; b < upper_edges.size(); ++b) {
    if (top_score <= upper_edges[b]) return values[b];
  }
  return values.back();
}

ConfidenceModel::ConfidenceModel(std::shared_ptr<const MlpClassifier> classifier, Variant variant)
    : classifier_(std::move(classifier)), variant_(std::move(variant)) {
  if (!classifier_) throw std::invalid_argument("confidence model needs a classifier");
  const auto k = static_cast<std::size_t>(classifier_->num_classes());
  if (const auto* t = std::get_if<Temperature>(&variant_)) {
    if (!(t->temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  } else if (const auto* hb = std::get_if<TopLabelHistogram>(&variant_)) {
    if (hb->per_class.size() != k) throw std::invalid_argument("need one bin set per class");
  } else if (const auto* c = std::get_if<Colander>(&variant_)) {
    const auto m = static_cast<Eigen::Index>(k) + classifier_->penultimate_dim();
    const auto& p = c->params;
    if (p.w1.rows() != 2 * m || p.w1.cols() != m || p.w2.rows() != static_cast<Eigen::Index>(k) ||
        p.w2.cols() != 2 * m || p.t_raw.size() != static_cast<Eigen::Index>(k)) {
      throw std::invalid_argument("colander parameter shapes disagree with the classifier");
    }
  }
}

ConfidenceModel ConfidenceModel::softmax(std::shared_ptr<const MlpClassifier> classifier) {
  return ConfidenceModel(std::move(classifier), Softmax{});
}

ConfidenceKind ConfidenceModel::kind() const {
  switch (variant_.index()) {
    case 0: return ConfidenceKind::softmax;
    case 1: return ConfidenceKind::temperature;
    case 2: return ConfidenceKind::top_label_hb;
    default: return ConfidenceKind::colander;
  }
}

void ConfidenceModel::require_fitted() const {
  if (!fitted()) throw std::logic_error("confidence model used before fitting");
}

const MlpClassifier& ConfidenceModel::classifier() const {
  require_fitted();
  return *classifier_;
}

Eigen::MatrixXd ConfidenceModel::score(const Eigen::MatrixXd& x) const {
  require_fitted();
  return score(classifier_->forward(x));
}

Eigen::MatrixXd ConfidenceModel::score(const BatchForward& fwd) const {
  require_fitted();
  return std::visit(
      [&](const auto& v) -> Eigen::MatrixXd {
        using V = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<V, Softmax>) {
          return fwd.probs;
        } else if constexpr (std::is_same_v<V, Temperature>) {
          return softmax_rows(fwd.logits / v.temperature);
        } else if constexpr (std::is_same_v<V, TopLabelHistogram>) {
          Eigen::MatrixXd out = fwd.probs;
          for (Eigen::Index i = 0; i < out.rows(); ++i) {
            const int c = fwd.predicted[static_cast<std::size_t>(i)];
            const auto& bins = v.per_class[static_cast<std::size_t>(c)];
            if (bins) out(i, c) = bins->lookup(fwd.probs(i, c));
          }
          return out;
        } else {
          const Eigen::MatrixXd hidden = tanh_elementwise(fwd.concat() * v.params.w1.transpose());
          return softmax_rows(hidden * v.params.w2.transpose());
        }
      },
      variant_);
}

Eigen::VectorXd ConfidenceModel::score(std::span<const double> x) const {
  const Eigen::MatrixXd row =
      Eigen::Map<const Eigen::RowVectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  return score(row).row(0).transpose();
}

std::vector<ScoredPoint> ConfidenceModel::score_points(const Eigen::MatrixXd& x,
                                                       std::span<const int> labels) const {
  require_fitted();
  if (static_cast<std::size_t>(x.rows()) != labels.size()) {
    throw std::invalid_argument("row/label count mismatch");
  }
  const auto fwd = classifier_->forward(x);
  const auto scores = score(fwd);
  std::vector<ScoredPoint> out(labels.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int c = fwd.predicted[i];
    out[i] = {labels[i], c, scores(static_cast<Eigen::Index>(i), c)};
  }
  return out;
}

double sigmoid(double alpha, double z) {
  const double v = alpha * z;
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

double surrogate_coverage(std::span<const ScoredPoint> points, std::span<const double> thresholds,
                          double alpha) {
  if (points.empty()) throw std::invalid_argument("surrogate coverage of an empty set");
  double total = 0.0;
  for (const auto& p : points) {
    total += sigmoid(alpha, p.score - thresholds[static_cast<std::size_t>(p.predicted)]);
  }
  return total / static_cast<double>(points.size());
}

double surrogate_error(std::span<const ScoredPoint> points, std::span<const double> thresholds,
                       double alpha, double denom_epsilon) {
  if (points.empty()) throw std::invalid_argument("surrogate error of an empty set");
  double num = 0.0;
  double den = 0.0;
  for (const auto& p : points) {
    const double s = sigmoid(alpha, p.score - thresholds[static_cast<std::size_t>(p.predicted)]);
    den += s;
    if (!p.correct()) num += s;
  }
  return num / (den + denom_epsilon);
}

double temperature_nll(const Eigen::MatrixXd& logits, std::span<const int> labels,
                       double temperature) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    total += loss_vanilla(logits.row(i).transpose() / temperature,
                          labels[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<double>(logits.rows());
}

TemperatureFit fit_temperature(std::shared_ptr<const MlpClassifier> classifier,
                               const Eigen::MatrixXd& x_cal, std::span<const int> y_cal,
                               const TemperatureConfig& config) {
  if (!classifier) throw std::invalid_argument("no classifier");
  if (x_cal.rows() == 0) throw std::invalid_argument("empty calibration set");
  if (static_cast<std::size_t>(x_cal.rows()) != y_cal.size()) {
    throw std::invalid_argument("row/label count mismatch");
  }
  const Eigen::MatrixXd logits = classifier->forward(x_cal).logits;
  const auto n = static_cast<double>(logits.rows());

  double log_t = 0.0;
  double m = 0.0;
  double v = 0.0;
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;

  TemperatureFit fit;
  fit.nll_initial = temperature_nll(logits, y_cal, 1.0);
  double best_nll = fit.nll_initial;
  double best_log_t = 0.0;

  for (int step = 1; step <= config.max_epochs; ++step) {
    const double t = std::exp(log_t);
    double grad = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      const Eigen::VectorXd scaled = logits.row(i).transpose() / t;
      Eigen::VectorXd p = softmax(scaled);
      p[y_cal[static_cast<std::size_t>(i)]] -= 1.0;
      grad -= p.dot(scaled);
    }
    grad /= n;
    m = kBeta1 * m + (1 - kBeta1) * grad;
    v = kBeta2 * v + (1 - kBeta2) * grad * grad;
    const double m_hat = m / (1 - std::pow(kBeta1, step));
    const double v_hat = v / (1 - std::pow(kBeta2, step));
    log_t -= config.learning_rate * m_hat / (std::sqrt(v_hat) + kEps);

    const double nll = temperature_nll(logits, y_cal, std::exp(log_t));
    if (nll < best_nll) {
      best_nll = nll;
      best_log_t = log_t;
    }
  }
  fit.temperature = std::exp(best_log_t);
  fit.nll_final = best_nll;
  fit.model = ConfidenceModel(std::move(classifier), ConfidenceModel::Temperature{fit.temperature});
  return fit;
}

HistogramBins build_histogram_bins(std::vector<std::pair<double, bool>> scored,
                                   std::size_t points_per_bin) {
  if (scored.empty()) throw std::invalid_argument("no points to bin");
  if (points_per_bin < 1) throw std::invalid_argument("points_per_bin must be >= 1");
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  const std::size_t n = scored.size();
  const std::size_t num_bins = std::max<std::size_t>(1, n / points_per_bin);

  HistogramBins bins;
  for (std::size_t b = 0; b < num_bins; ++b) {
    const std::size_t lo = b * n / num_bins;
    const std::size_t hi = (b + 1) * n / num_bins;
    double correct = 0.0;
    for (std::size_t i = lo; i < hi; ++i) correct += scored[i].second ? 1.0 : 0.0;
    bins.values.push_back(correct / static_cast<double>(hi - lo));
    bins.upper_edges.push_back(b + 1 == num_bins
                                   ? std::numeric_limits<double>::infinity()
                                   : 0.5 * (scored[hi - 1].first + scored[hi].first));
  }
  return bins;
}

HistogramFit fit_top_label_hb(std::shared_ptr<const MlpClassifier> classifier,
                              const Eigen::MatrixXd& x_cal, std::span<const int> y_cal,
                              std::size_t points_per_bin) {
  if (!classifier) throw std::invalid_argument("no classifier");
  if (x_cal.rows() == 0) throw std::invalid_argument("empty calibration set");
  if (static_cast<std::size_t>(x_cal.rows()) < points_per_bin) {
    throw std::invalid_argument("calibration set smaller than points_per_bin");
  }
  if (static_cast<std::size_t>(x_cal.rows()) != y_cal.size()) {
    throw std::invalid_argument("row/label count mismatch");
  }
  const auto k = static_cast<std::size_t>(classifier->num_classes());
  const auto fwd = classifier->forward(x_cal);
  std::vector<std::vector<std::pair<double, bool>>> by_class(k);
  for (std::size_t i = 0; i < y_cal.size(); ++i) {
    const int c = fwd.predicted[i];
    by_class[static_cast<std::size_t>(c)].emplace_back(fwd.probs(static_cast<Eigen::Index>(i), c),
                                                       c == y_cal[i]);
  }
  HistogramFit fit;
  ConfidenceModel::TopLabelHistogram hb;
  hb.per_class.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    if (by_class[c].empty()) {
      fit.fallback_classes.push_back(static_cast<int>(c));
      continue;
    }
    hb.per_class[c] = build_histogram_bins(std::move(by_class[c]), points_per_bin);
  }
  fit.model = ConfidenceModel(std::move(classifier), std::move(hb));
  return fit;
}

void ColanderConfig::validate() const {
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be non-negative");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
  if (!(denom_epsilon > 0.0)) throw std::invalid_argument("denom_epsilon must be positive");
}

ColanderData ColanderData::build(const MlpClassifier& classifier, const Eigen::MatrixXd& x,
                                 std::span<const int> labels) {
  if (static_cast<std::size_t>(x.rows()) != labels.size()) {
    throw std::invalid_argument("row/label count mismatch");
  }
  const auto fwd = classifier.forward(x);
  ColanderData d;
  d.z = fwd.concat();
  d.predicted = fwd.predicted;
  d.wrong.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) d.wrong[i] = fwd.predicted[i] != labels[i];
  return d;
}

ColanderData ColanderData::rows(std::span<const std::size_t> indices) const {
  ColanderData out;
  out.z.resize(static_cast<Eigen::Index>(indices.size()), z.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    out.z.row(static_cast<Eigen::Index>(r)) = z.row(static_cast<Eigen::Index>(indices[r]));
    out.predicted.push_back(predicted[indices[r]]);
    out.wrong.push_back(wrong[indices[r]]);
  }
  return out;
}

namespace {

struct ColanderForward {
  Eigen::MatrixXd hidden;  // tanh(z W1^T)
  Eigen::MatrixXd g;       // softmax(hidden W2^T)
};

ColanderForward colander_forward(const ColanderParams& params, const ColanderData& data) {
  ColanderForward f;
  f.hidden = tanh_elementwise(data.z * params.w1.transpose());
  f.g = softmax_rows(f.hidden * params.w2.transpose());
  return f;
}

}  // namespace

Eigen::VectorXd colander_scores(const ColanderParams& params, const ColanderData& data) {
  const auto f = colander_forward(params, data);
  Eigen::VectorXd out(static_cast<Eigen::Index>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    out[static_cast<Eigen::Index>(i)] = f.g(static_cast<Eigen::Index>(i), data.predicted[i]);
  }
  return out;
}

double colander_objective(const ColanderParams& params, const ColanderData& data, double lambda,
                          double alpha, double denom_epsilon, ColanderParams* grad) {
  const auto n = data.size();
  if (n == 0) throw std::invalid_argument("colander objective on an empty set");
  const auto f = colander_forward(params, data);
  const Eigen::VectorXd t = params.thresholds();

  Eigen::VectorXd s(static_cast<Eigen::Index>(n));
  double sum_s = 0.0;
  double sum_ws = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const int c = data.predicted[i];
    s[r] = sigmoid(alpha, f.g(r, c) - t[c]);
    sum_s += s[r];
    if (data.wrong[i]) sum_ws += s[r];
  }
  const double denom = sum_s + denom_epsilon;
  const double nd = static_cast<double>(n);
  const double value = -sum_s / nd + lambda * sum_ws / denom;
  if (grad == nullptr) return value;

  // q_i = d objective / d (g_i[c] - t[c])
  Eigen::MatrixXd d_logits = Eigen::MatrixXd::Zero(f.g.rows(), f.g.cols());
  Eigen::VectorXd d_t = Eigen::VectorXd::Zero(t.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const int c = data.predicted[i];
    const double w = data.wrong[i] ? 1.0 : 0.0;
    const double d_s = -1.0 / nd + lambda * (w * denom - sum_ws) / (denom * denom);
    const double q = d_s * alpha * s[r] * (1.0 - s[r]);
    d_t[c] -= q;
    const double gc = f.g(r, c);
    d_logits.row(r) = -q * gc * f.g.row(r);
    d_logits(r, c) += q * gc;
  }
  grad->w2 = d_logits.transpose() * f.hidden;
  const Eigen::MatrixXd d_pre =
      (d_logits * params.w2).array() * (1.0 - f.hidden.array().square());
  grad->w1 = d_pre.transpose() * data.z;
  grad->t_raw = d_t.array() * t.array() * (1.0 - t.array());
  return value;
}

namespace {

struct AdamSlot {
  Eigen::MatrixXd m;
  Eigen::MatrixXd v;

  explicit AdamSlot(const Eigen::MatrixXd& like)
      : m(Eigen::MatrixXd::Zero(like.rows(), like.cols())),
        v(Eigen::MatrixXd::Zero(like.rows(), like.cols())) {}

  void step(Eigen::Ref<Eigen::MatrixXd> param, const Eigen::MatrixXd& grad, double lr, int t) {
    constexpr double kBeta1 = 0.9;
    constexpr double kBeta2 = 0.999;
    constexpr double kEps = 1e-8;
    m = kBeta1 * m + (1.0 - kBeta1) * grad;
    v = kBeta2 * v + (1.0 - kBeta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(kBeta1, t);
    const double c2 = 1.0 - std::pow(kBeta2, t);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + kEps);
  }
};

}  // namespace

ColanderFit colander_fit(std::shared_ptr<const MlpClassifier> classifier,
                         const Eigen::MatrixXd& x_cal, std::span<const int> y_cal,
                         const ColanderConfig& config) {
  config.validate();
  if (!classifier) throw std::invalid_argument("no classifier");
  if (x_cal.rows() == 0) throw std::invalid_argument("empty calibration set");
  const auto data = ColanderData::build(*classifier, x_cal, y_cal);
  const int k = classifier->num_classes();

  auto params = ColanderParams::initialize(k, classifier->penultimate_dim(), config.seed.derive("init"));
  auto rng = config.seed.derive("shuffle").engine();

  AdamSlot w1_slot(params.w1);
  AdamSlot w2_slot(params.w2);
  AdamSlot t_slot(params.t_raw);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  ColanderParams grad;
  ColanderFit fit;
  int step = 0;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const auto stop = std::min(order.size(), start + config.batch_size);
      const auto batch = data.rows(std::span(order).subspan(start, stop - start));
      colander_objective(params, batch, config.lambda, config.alpha, config.denom_epsilon, &grad);
      if (config.weight_decay > 0.0) {
        grad.w1 += config.weight_decay * params.w1;
        grad.w2 += config.weight_decay * params.w2;
      }
      ++step;
      w1_slot.step(params.w1, grad.w1, config.learning_rate, step);
      w2_slot.step(params.w2, grad.w2, config.learning_rate, step);
      t_slot.step(params.t_raw, grad.t_raw, config.learning_rate, step);
    }

    const Eigen::VectorXd scores = colander_scores(params, data);
    const Eigen::VectorXd t = params.thresholds();
    std::vector<ScoredPoint> points(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      points[i] = {data.wrong[i] ? -1 : data.predicted[i], data.predicted[i],
                   scores[static_cast<Eigen::Index>(i)]};
    }
    const std::span<const double> ts(t.data(), static_cast<std::size_t>(t.size()));
    const double cov = surrogate_coverage(points, ts, config.alpha);
    const double err = surrogate_error(points, ts, config.alpha, config.denom_epsilon);
    fit.epoch_surrogate_coverage.push_back(cov);
    fit.epoch_surrogate_error.push_back(err);
    fit.epoch_objective.push_back(-cov + config.lambda * err);
  }
  fit.t_prime = params.thresholds();
  fit.model = ConfidenceModel(std::move(classifier), ConfidenceModel::Colander{std::move(params)});
  return fit;
}

void write_score_dump(std::ostream& out, std::span<const ScoredPoint> points,
                      std::span<const std::uint64_t> ids) {
  if (points.size() != ids.size()) throw std::invalid_argument("id/point count mismatch");
  out << "point_id,true_label,predicted_label,score_of_predicted,correct_flag\n";
  char buf[32];
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), p.score);
    out << ids[i] << ',' << p.true_label << ',' << p.predicted << ',';
    out.write(buf, end - buf);
    out << ',' << (p.correct() ? 1 : 0) << '\n';
  }
}

}  // namespace tbal
