#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "tbal/model.hpp"
#include "tbal/rng.hpp"

namespace tbal {

/// What threshold estimation and auto-labeling see of a point: its true
/// label, the classifier's prediction and the confidence g(x)[y_hat].
struct ScoredPoint {
  int true_label = 0;
  int predicted = 0;
  double score = 0.0;

  bool correct() const { return true_label == predicted; }
};

enum class ConfidenceKind { softmax, temperature, top_label_hb, colander };

ConfidenceKind parse_confidence_kind(std::string_view name);
std::string_view to_string(ConfidenceKind kind);

/// g(x) = softmax(W2 tanh(W1 [z1, z2])), plus the auxiliary per-class
/// thresholds optimized jointly with it.
struct ColanderParams {
  Eigen::MatrixXd w1;     // 2m x m, m = k + d2
  Eigen::MatrixXd w2;     // k x 2m
  Eigen::VectorXd t_raw;  // k, unconstrained

  static ColanderParams zeros(int num_classes, int penultimate_dim);
  static ColanderParams initialize(int num_classes, int penultimate_dim, SeedStream seed);

  /// logistic(t_raw)
  Eigen::VectorXd thresholds() const;

  friend bool operator==(const ColanderParams& a, const ColanderParams& b) {
    return a.w1 == b.w1 && a.w2 == b.w2 && a.t_raw == b.t_raw;
  }
};

/// Uniform-mass bins for one predicted class, ordered by raw top score.
struct HistogramBins {
  std::vector<double> upper_edges;  // last edge is +inf
  std::vector<double> values;       // empirical accuracy per bin

  double lookup(double top_score) const;
};

/// A confidence function g: X -> scores over k classes, bound to the
/// classifier it post-processes. Default-constructed models are unfitted.
class ConfidenceModel {
 public:
  struct Softmax {};
  struct Temperature {
    double temperature = 1.0;
  };
  /// Entry c is empty when no calibration point was predicted as c; that
  /// class then keeps its raw softmax score.
  struct TopLabelHistogram {
    std::vector<std::optional<HistogramBins>> per_class;
  };
  struct Colander {
    ColanderParams params;
  };
  using Variant = std::variant<Softmax, Temperature, TopLabelHistogram, Colander>;

  ConfidenceModel() = default;
  ConfidenceModel(std::shared_ptr<const MlpClassifier> classifier, Variant variant);

  static ConfidenceModel softmax(std::shared_ptr<const MlpClassifier> classifier);

  bool fitted() const { return classifier_ != nullptr; }
  ConfidenceKind kind() const;
  const Variant& variant() const { return variant_; }
  const MlpClassifier& classifier() const;
  std::shared_ptr<const MlpClassifier> classifier_ptr() const { return classifier_; }

  /// n x k score matrix. The top-label histogram variant patches only the
  /// predicted-class entry, so its rows need not sum to 1.
  Eigen::MatrixXd score(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd score(const BatchForward& forward) const;
  Eigen::VectorXd score(std::span<const double> x) const;

  /// Scores every row of `x`; `labels` are the true labels.
  std::vector<ScoredPoint> score_points(const Eigen::MatrixXd& x,
                                        std::span<const int> labels) const;

 private:
  void require_fitted() const;

  std::shared_ptr<const MlpClassifier> classifier_;
  Variant variant_;
};

/// 1 / (1 + exp(-alpha z)).
double sigmoid(double alpha, double z);

/// Mean over points of sigmoid(alpha, score - t[predicted]).
double surrogate_coverage(std::span<const ScoredPoint> points, std::span<const double> thresholds,
                          double alpha);

/// sum(wrong * s) / (sum(s) + denom_epsilon), s = sigmoid(alpha, score - t[predicted]).
double surrogate_error(std::span<const ScoredPoint> points, std::span<const double> thresholds,
                       double alpha, double denom_epsilon = 1e-8);

struct TemperatureConfig {
  double learning_rate = 0.01;
  int max_epochs = 500;
};

struct TemperatureFit {
  ConfidenceModel model;
  double temperature = 1.0;
  double nll_initial = 0.0;  // at T = 1
  double nll_final = 0.0;
};

/// Full-batch Adam on log T for the calibration NLL; keeps the best T seen
/// (T = 1 included).
TemperatureFit fit_temperature(std::shared_ptr<const MlpClassifier> classifier,
                               const Eigen::MatrixXd& x_cal, std::span<const int> y_cal,
                               const TemperatureConfig& config = {});

/// Mean negative log-likelihood of softmax(logits / T).
double temperature_nll(const Eigen::MatrixXd& logits, std::span<const int> labels,
                       double temperature);

struct HistogramFit {
  ConfidenceModel model;
  std::vector<int> fallback_classes;  // classes left on raw softmax
};

HistogramFit fit_top_label_hb(std::shared_ptr<const MlpClassifier> classifier,
                              const Eigen::MatrixXd& x_cal, std::span<const int> y_cal,
                              std::size_t points_per_bin);

/// Builds bins from (top score, correct) pairs of one predicted class.
HistogramBins build_histogram_bins(std::vector<std::pair<double, bool>> scored,
                                   std::size_t points_per_bin);

struct ColanderConfig {
  double lambda = 100.0;
  double alpha = 1.0;
  double learning_rate = 0.01;
  double weight_decay = 0.01;
  std::size_t batch_size = 64;
  int max_epochs = 500;
  SeedStream seed;
  double denom_epsilon = 1e-8;

  void validate() const;
};

/// Frozen-classifier view of a calibration set: concatenated
/// representations, predictions and mistake indicators.
struct ColanderData {
  Eigen::MatrixXd z;
  std::vector<int> predicted;
  std::vector<int> wrong;

  static ColanderData build(const MlpClassifier& classifier, const Eigen::MatrixXd& x,
                            std::span<const int> labels);
  std::size_t size() const { return predicted.size(); }
  ColanderData rows(std::span<const std::size_t> indices) const;
};

/// Scores g(x)[y_hat] under `params` for every row.
Eigen::VectorXd colander_scores(const ColanderParams& params, const ColanderData& data);

/// -surrogate_coverage + lambda * surrogate_error on `data`, with
/// thresholds logistic(t_raw). Fills `grad` when non-null.
double colander_objective(const ColanderParams& params, const ColanderData& data, double lambda,
                          double alpha, double denom_epsilon, ColanderParams* grad);

struct ColanderFit {
  ConfidenceModel model;
  Eigen::VectorXd t_prime;  // logged only, never used to auto-label
  std::vector<double> epoch_objective;
  std::vector<double> epoch_surrogate_coverage;
  std::vector<double> epoch_surrogate_error;
};

/// Adam (beta1 0.9, beta2 0.999, eps 1e-8) on (W1, W2, t_raw) with
/// mini-batches of the calibration set. Weight decay is an L2 term on W1
/// and W2.
ColanderFit colander_fit(std::shared_ptr<const MlpClassifier> classifier,
                         const Eigen::MatrixXd& x_cal, std::span<const int> y_cal,
                         const ColanderConfig& config);

/// CSV: point_id,true_label,predicted_label,score_of_predicted,correct_flag
void write_score_dump(std::ostream& out, std::span<const ScoredPoint> points,
                      std::span<const std::uint64_t> ids);

}  // namespace tbal
