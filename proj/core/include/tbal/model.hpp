#pragma once

#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "tbal/rng.hpp"

namespace tbal {

enum class TrainMethod { vanilla, squentropy };

TrainMethod parse_train_method(std::string_view name);
std::string_view to_string(TrainMethod method);

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out

  friend bool operator==(const DenseLayer& a, const DenseLayer& b) {
    return a.weight == b.weight && a.bias == b.bias;
  }
};

/// Last-two-layer representations: logits z1 and penultimate activations z2.
struct RepPair {
  Eigen::VectorXd logits;
  Eigen::VectorXd penultimate;

  /// [z1, z2], length k + d2.
  Eigen::VectorXd concat() const;
};

struct Prediction {
  RepPair reps;
  Eigen::VectorXd probs;
  int predicted = 0;
};

/// Row-per-point version of Prediction.
struct BatchForward {
  Eigen::MatrixXd logits;
  Eigen::MatrixXd penultimate;
  Eigen::MatrixXd probs;
  std::vector<int> predicted;

  Eigen::MatrixXd concat() const;
};

/// Fully connected net with tanh hidden layers and a linear output layer.
class MlpClassifier {
 public:
  MlpClassifier() = default;
  explicit MlpClassifier(std::vector<DenseLayer> layers);

  /// `dims` = {d, hidden..., k}; weights and biases uniform in
  /// [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  static MlpClassifier initialize(std::span<const int> dims, SeedStream seed);

  int input_dim() const;
  int num_classes() const;
  int penultimate_dim() const;
  std::vector<int> dims() const;

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  Prediction forward(std::span<const double> x) const;
  BatchForward forward(const Eigen::MatrixXd& x) const;

  /// Per-layer outputs for backprop: acts[0] = x, acts[l+1] = output of
  /// layer l (tanh for hidden layers, raw logits for the last).
  std::vector<Eigen::MatrixXd> activations(const Eigen::MatrixXd& x) const;

  friend bool operator==(const MlpClassifier&, const MlpClassifier&) = default;

 private:
  std::vector<DenseLayer> layers_;
};

/// Softmax of one logit vector, max-subtracted.
Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& logits);
/// Row-wise softmax.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

/// Elementwise tanh as 1 - 2 / (exp(2x) + 1), which vectorizes; absolute
/// error is within a few ulps of 1.
Eigen::MatrixXd tanh_elementwise(const Eigen::MatrixXd& x);
/// Lowest index wins ties.
int argmax(const Eigen::Ref<const Eigen::VectorXd>& v);

double loss_vanilla(const Eigen::Ref<const Eigen::VectorXd>& logits, int label);
/// Cross-entropy plus the mean squared logit over the k-1 incorrect classes.
double loss_squentropy(const Eigen::Ref<const Eigen::VectorXd>& logits, int label);
double loss(TrainMethod method, const Eigen::Ref<const Eigen::VectorXd>& logits, int label);
/// d loss / d logits.
Eigen::VectorXd loss_gradient(TrainMethod method, const Eigen::Ref<const Eigen::VectorXd>& logits,
                              int label);

/// Mean loss over the rows of `x`; fills `grads` (same shapes as the layers)
/// when non-null.
double loss_and_gradients(const MlpClassifier& model, const Eigen::MatrixXd& x,
                          std::span<const int> labels, TrainMethod method,
                          std::vector<DenseLayer>* grads);

struct TrainConfig {
  TrainMethod method = TrainMethod::vanilla;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t batch_size = 32;
  int max_epochs = 50;
  SeedStream seed;

  void validate() const;
};

struct TrainTrace {
  std::vector<double> epoch_loss;  // mean training loss after each epoch
};

/// Mini-batch SGD with momentum and decoupled weight decay
/// (w <- w * (1 - lr * wd) after each step, weights only). Returns the
/// final-epoch model. `hidden` lists hidden-layer widths.
MlpClassifier train_model(const TrainConfig& config, const Eigen::MatrixXd& x,
                          std::span<const int> labels, std::span<const int> hidden,
                          int num_classes, TrainTrace* trace = nullptr);

/// top1 - top2 of a probability vector.
double margin_score(std::span<const double> probs);
double margin_score(const Eigen::Ref<const Eigen::VectorXd>& probs);

/// Writes `<path>` (manifest) and `<path>.weights` (little-endian f32 blob,
/// per layer: weight row-major then bias).
void save_checkpoint(const std::filesystem::path& path, const MlpClassifier& model);
MlpClassifier load_checkpoint(const std::filesystem::path& path);

}  // namespace tbal
