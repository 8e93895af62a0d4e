#include "tbal/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>

namespace tbal {

TrainMethod parse_train_method(std::string_view name) {
  if (name == "vanilla") return TrainMethod::vanilla;
  if (name == "squentropy") return TrainMethod::squentropy;
  throw std::invalid_argument("unknown train method '" + std::string(name) + "'");
}

std::string_view to_string(TrainMethod method) {
  return method == TrainMethod::vanilla ? "vanilla" : "squentropy";
}

Eigen::VectorXd RepPair::concat() const {
  Eigen::VectorXd z(logits.size() + penultimate.size());
  z << logits, penultimate;
  return z;
}

Eigen::MatrixXd BatchForward::concat() const {
  Eigen::MatrixXd z(logits.rows(), logits.cols() + penultimate.cols());
  z << logits, penultimate;
  return z;
}

MlpClassifier::MlpClassifier(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.size() < 2) throw std::invalid_argument("classifier needs at least two layers");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.bias.size() != layer.weight.rows()) {
      throw std::invalid_argument("bias length differs from layer width");
    }
    if (l > 0 && layer.weight.cols() != layers_[l - 1].weight.rows()) {
      throw std::invalid_argument("layer " + std::to_string(l) + " input width mismatch");
    }
  }
}

MlpClassifier MlpClassifier::initialize(std::span<const int> dims, SeedStream seed) {
  if (dims.size() < 3) throw std::invalid_argument("dims need input, >=1 hidden, output");
  for (int w : dims) {
    if (w < 1) throw std::invalid_argument("layer widths must be positive");
  }
  auto rng = seed.engine();
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int fan_in = dims[l];
    const int fan_out = dims[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    DenseLayer layer{Eigen::MatrixXd(fan_out, fan_in), Eigen::VectorXd(fan_out)};
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = u(rng);
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = u(rng);
    layers.push_back(std::move(layer));
  }
  return MlpClassifier(std::move(layers));
}

int MlpClassifier::input_dim() const { return static_cast<int>(layers_.front().weight.cols()); }
int MlpClassifier::num_classes() const { return static_cast<int>(layers_.back().weight.rows()); }
int MlpClassifier::penultimate_dim() const {
  return static_cast<int>(layers_.back().weight.cols());
}

std::vector<int> MlpClassifier::dims() const {
  std::vector<int> out{input_dim()};
  for (const auto& layer : layers_) out.push_back(static_cast<int>(layer.weight.rows()));
  return out;
}

std::vector<Eigen::MatrixXd> MlpClassifier::activations(const Eigen::MatrixXd& x) const {
  if (x.cols() != input_dim()) {
    throw std::invalid_argument("input has " + std::to_string(x.cols()) +
                                " features, classifier expects " + std::to_string(input_dim()));
  }
  std::vector<Eigen::MatrixXd> acts;
  acts.reserve(layers_.size() + 1);
  acts.push_back(x);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd pre = acts.back() * layers_[l].weight.transpose();
    pre.rowwise() += layers_[l].bias.transpose();
    if (l + 1 < layers_.size()) pre = tanh_elementwise(pre);
    acts.push_back(std::move(pre));
  }
  return acts;
}

BatchForward MlpClassifier::forward(const Eigen::MatrixXd& x) const {
  auto acts = activations(x);
  BatchForward out;
  out.logits = std::move(acts.back());
  out.penultimate = std::move(acts[acts.size() - 2]);
  out.probs = softmax_rows(out.logits);
  out.predicted.resize(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    out.predicted[static_cast<std::size_t>(i)] = argmax(out.logits.row(i).transpose());
  }
  return out;
}

Prediction MlpClassifier::forward(std::span<const double> x) const {
  const Eigen::MatrixXd row =
      Eigen::Map<const Eigen::RowVectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  auto batch = forward(row);
  Prediction p;
  p.reps.logits = batch.logits.row(0).transpose();
  p.reps.penultimate = batch.penultimate.row(0).transpose();
  p.probs = batch.probs.row(0).transpose();
  p.predicted = batch.predicted[0];
  return p;
}

Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& logits) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - m).exp();
  return e / e.sum();
}

Eigen::MatrixXd tanh_elementwise(const Eigen::MatrixXd& x) {
  return (1.0 - 2.0 / ((2.0 * x.array()).exp() + 1.0)).matrix();
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    out.row(i) = softmax(logits.row(i).transpose()).transpose();
  }
  return out;
}

int argmax(const Eigen::Ref<const Eigen::VectorXd>& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = static_cast<int>(i);
  }
  return best;
}

namespace {

void check_label(const Eigen::Ref<const Eigen::VectorXd>& logits, int label) {
  if (label < 0 || label >= logits.size()) throw std::out_of_range("label outside [0, k)");
}

}  // namespace

double loss_vanilla(const Eigen::Ref<const Eigen::VectorXd>& logits, int label) {
  check_label(logits, label);
  // log1p over the non-max terms keeps full relative precision when the
  // loss is tiny.
  Eigen::Index top = 0;
  const double m = logits.maxCoeff(&top);
  double rest = 0.0;
  for (Eigen::Index j = 0; j < logits.size(); ++j) {
    if (j != top) rest += std::exp(logits[j] - m);
  }
  return (m - logits[label]) + std::log1p(rest);
}

double loss_squentropy(const Eigen::Ref<const Eigen::VectorXd>& logits, int label) {
  check_label(logits, label);
  const auto k = logits.size();
  if (k < 2) throw std::invalid_argument("squentropy needs k >= 2");
  const double sq = logits.squaredNorm() - logits[label] * logits[label];
  return loss_vanilla(logits, label) + sq / static_cast<double>(k - 1);
}

double loss(TrainMethod method, const Eigen::Ref<const Eigen::VectorXd>& logits, int label) {
  return method == TrainMethod::vanilla ? loss_vanilla(logits, label)
                                        : loss_squentropy(logits, label);
}

Eigen::VectorXd loss_gradient(TrainMethod method, const Eigen::Ref<const Eigen::VectorXd>& logits,
                              int label) {
  check_label(logits, label);
  Eigen::VectorXd g = softmax(logits);
  g[label] -= 1.0;
  if (method == TrainMethod::squentropy) {
    const auto k = logits.size();
    if (k < 2) throw std::invalid_argument("squentropy needs k >= 2");
    const double scale = 2.0 / static_cast<double>(k - 1);
    for (Eigen::Index j = 0; j < k; ++j) {
      if (j != label) g[j] += scale * logits[j];
    }
  }
  return g;
}

double loss_and_gradients(const MlpClassifier& model, const Eigen::MatrixXd& x,
                          std::span<const int> labels, TrainMethod method,
                          std::vector<DenseLayer>* grads) {
  if (static_cast<std::size_t>(x.rows()) != labels.size()) {
    throw std::invalid_argument("row/label count mismatch");
  }
  const auto acts = model.activations(x);
  const auto& logits = acts.back();
  const auto n = static_cast<double>(x.rows());

  double total = 0.0;
  Eigen::MatrixXd delta(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    total += loss(method, logits.row(i).transpose(), y);
    delta.row(i) = loss_gradient(method, logits.row(i).transpose(), y).transpose() / n;
  }
  if (grads == nullptr) return total / n;

  const auto& layers = model.layers();
  grads->resize(layers.size());
  for (std::size_t l = layers.size(); l-- > 0;) {
    (*grads)[l].weight = delta.transpose() * acts[l];
    (*grads)[l].bias = delta.colwise().sum().transpose();
    if (l == 0) break;
    Eigen::MatrixXd back = delta * layers[l].weight;
    delta = back.array() * (1.0 - acts[l].array().square());
  }
  return total / n;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must be in [0,1)");
  if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be non-negative");
}

MlpClassifier train_model(const TrainConfig& config, const Eigen::MatrixXd& x,
                          std::span<const int> labels, std::span<const int> hidden,
                          int num_classes, TrainTrace* trace) {
  config.validate();
  if (x.rows() < 1) throw std::invalid_argument("training set is empty");
  if (static_cast<std::size_t>(x.rows()) != labels.size()) {
    throw std::invalid_argument("row/label count mismatch");
  }
  std::vector<int> dims{static_cast<int>(x.cols())};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(num_classes);

  auto model = MlpClassifier::initialize(dims, config.seed.derive("init"));
  auto rng = config.seed.derive("shuffle").engine();

  std::vector<DenseLayer> velocity;
  for (const auto& layer : model.layers()) {
    velocity.push_back({Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()),
                        Eigen::VectorXd::Zero(layer.bias.size())});
  }

  const auto n = static_cast<std::size_t>(x.rows());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<DenseLayer> grads;
  const double shrink = 1.0 - config.learning_rate * config.weight_decay;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const auto stop = std::min(n, start + config.batch_size);
      const auto batch_idx = std::span(order).subspan(start, stop - start);
      Eigen::MatrixXd xb(static_cast<Eigen::Index>(batch_idx.size()), x.cols());
      std::vector<int> yb(batch_idx.size());
      for (std::size_t r = 0; r < batch_idx.size(); ++r) {
        xb.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(batch_idx[r]));
        yb[r] = labels[batch_idx[r]];
      }
      loss_and_gradients(model, xb, yb, config.method, &grads);
      auto& layers = model.layers();
      for (std::size_t l = 0; l < layers.size(); ++l) {
        velocity[l].weight = config.momentum * velocity[l].weight + grads[l].weight;
        velocity[l].bias = config.momentum * velocity[l].bias + grads[l].bias;
        layers[l].weight -= config.learning_rate * velocity[l].weight;
        layers[l].bias -= config.learning_rate * velocity[l].bias;
        if (config.weight_decay > 0.0) layers[l].weight *= shrink;
      }
    }
    if (trace != nullptr) {
      trace->epoch_loss.push_back(loss_and_gradients(model, x, labels, config.method, nullptr));
    }
  }
  return model;
}

double margin_score(std::span<const double> probs) {
  if (probs.size() < 2) throw std::invalid_argument("margin needs k >= 2");
  double top1 = -std::numeric_limits<double>::infinity();
  double top2 = top1;
  for (double p : probs) {
    if (p > top1) {
      top2 = top1;
      top1 = p;
    } else if (p > top2) {
      top2 = p;
    }
  }
  return top1 - top2;
}

double margin_score(const Eigen::Ref<const Eigen::VectorXd>& probs) {
  const Eigen::VectorXd copy = probs;
  return margin_score(std::span<const double>(copy.data(), static_cast<std::size_t>(copy.size())));
}

namespace {

void write_f32(std::ofstream& out, double value) {
  float v = static_cast<float>(value);
  if constexpr (std::endian::native == std::endian::big) {
    auto raw = std::bit_cast<std::array<unsigned char, 4>>(v);
    std::reverse(raw.begin(), raw.end());
    v = std::bit_cast<float>(raw);
  }
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

double read_f32(std::ifstream& in) {
  float v = 0.0f;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) {
    throw std::runtime_error("checkpoint weight blob truncated");
  }
  if constexpr (std::endian::native == std::endian::big) {
    auto raw = std::bit_cast<std::array<unsigned char, 4>>(v);
    std::reverse(raw.begin(), raw.end());
    v = std::bit_cast<float>(raw);
  }
  return v;
}

std::filesystem::path blob_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".weights";
  return p;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const MlpClassifier& model) {
  std::ofstream manifest(path);
  if (!manifest) throw std::runtime_error("cannot write " + path.string());
  manifest << "tbal-mlp 1\nlayers " << model.layers().size() << "\n";
  for (const auto& layer : model.layers()) {
    manifest << "dense " << layer.weight.rows() << " " << layer.weight.cols() << "\n";
  }
  std::ofstream blob(blob_path(path), std::ios::binary);
  if (!blob) throw std::runtime_error("cannot write " + blob_path(path).string());
  for (const auto& layer : model.layers()) {
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) write_f32(blob, layer.weight(r, c));
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) write_f32(blob, layer.bias[r]);
  }
}

MlpClassifier load_checkpoint(const std::filesystem::path& path) {
  std::ifstream manifest(path);
  if (!manifest) throw std::runtime_error("cannot open " + path.string());
  std::string tag;
  int version = 0;
  std::size_t count = 0;
  if (!(manifest >> tag >> version) || tag != "tbal-mlp" || version != 1) {
    throw std::runtime_error(path.string() + ": not a tbal-mlp v1 manifest");
  }
  if (!(manifest >> tag >> count) || tag != "layers") {
    throw std::runtime_error(path.string() + ": missing layer count");
  }
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
  for (std::size_t l = 0; l < count; ++l) {
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    if (!(manifest >> tag >> rows >> cols) || tag != "dense" || rows < 1 || cols < 1) {
      throw std::runtime_error(path.string() + ": malformed layer line");
    }
    shapes.emplace_back(rows, cols);
  }
  std::ifstream blob(blob_path(path), std::ios::binary);
  if (!blob) throw std::runtime_error("cannot open " + blob_path(path).string());
  std::vector<DenseLayer> layers;
  for (const auto& [rows, cols] : shapes) {
    DenseLayer layer{Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows)};
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) layer.weight(r, c) = read_f32(blob);
    }
    for (Eigen::Index r = 0; r < rows; ++r) layer.bias[r] = read_f32(blob);
    layers.push_back(std::move(layer));
  }
  if (blob.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error(blob_path(path).string() + ": trailing bytes");
  }
  return MlpClassifier(std::move(layers));
}

}  // namespace tbal
