#include <doctest.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"
#include "tbal/model.hpp"

using namespace tbal;

namespace {

MlpClassifier random_model(std::vector<int> dims, std::uint64_t seed) {
  return MlpClassifier::initialize(dims, SeedStream(seed));
}

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = normal(rng);
  return v;
}

Eigen::VectorXd as_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("all-zero weights give uniform probabilities and predict class 0") {
  std::vector<DenseLayer> layers{{Eigen::MatrixXd::Zero(3, 2), Eigen::VectorXd::Zero(3)},
                                 {Eigen::MatrixXd::Zero(5, 3), Eigen::VectorXd::Zero(5)}};
  const MlpClassifier m(layers);
  const std::vector<double> x{0.3, -1.2};
  const auto p = m.forward(x);
  for (Eigen::Index c = 0; c < 5; ++c) CHECK(p.probs[c] == doctest::Approx(0.2));
  CHECK(p.predicted == 0);
  CHECK(p.reps.concat().size() == 5 + 3);
}

TEST_CASE("forward normalizes and agrees with the logit argmax") {
  const auto m = random_model({3, 8, 6, 4}, 1);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    const auto x = random_vector(3, rng, 3.0);
    const auto p = m.forward(x);
    CHECK(std::abs(p.probs.sum() - 1.0) <= 1e-6);
    CHECK(p.predicted == argmax(p.reps.logits));
  }
  CHECK_THROWS_AS(m.forward(std::vector<double>{1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("batch forward matches per-point forward") {
  const auto m = random_model({2, 5, 3}, 4);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(7, 2);
  const auto b = m.forward(x);
  for (Eigen::Index i = 0; i < 7; ++i) {
    const std::vector<double> xi{x(i, 0), x(i, 1)};
    const auto p = m.forward(xi);
    CHECK((b.probs.row(i).transpose() - p.probs).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((b.penultimate.row(i).transpose() - p.reps.penultimate).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(b.predicted[static_cast<std::size_t>(i)] == p.predicted);
  }
}

TEST_CASE("vectorized tanh stays within a few ulps of std::tanh") {
  Eigen::MatrixXd x(1, 9);
  x << -40.0, -5.0, -1.0, -1e-3, 0.0, 1e-9, 0.5, 3.0, 400.0;
  const auto y = tanh_elementwise(x);
  for (Eigen::Index j = 0; j < x.cols(); ++j) CHECK(std::abs(y(0, j) - std::tanh(x(0, j))) < 1e-15);
}

TEST_CASE("vanilla loss cases") {
  CHECK(loss_vanilla(Eigen::VectorXd::Zero(10), 3) == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  Eigen::VectorXd hot = Eigen::VectorXd::Zero(10);
  hot[2] = 1000.0;
  CHECK(loss_vanilla(hot, 2) == doctest::Approx(0.0));
  CHECK(loss_vanilla(hot, 0) == doctest::Approx(1000.0));

  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const auto z = random_vector(6, rng, 20.0);
    const int y = static_cast<int>(rng() % 6);
    const auto ref = static_cast<double>(oracle::cross_entropy(z, y));
    CHECK(oracle::relative_error(loss_vanilla(as_eigen(z), y), ref, 1e-12) < 1e-12);
  }
}

TEST_CASE("squentropy cases") {
  CHECK(loss_squentropy(Eigen::VectorXd::Zero(10), 0) == doctest::Approx(std::log(10.0)));
  Eigen::VectorXd z = Eigen::VectorXd::Zero(10);
  z[0] = 2.0;
  CHECK(loss_squentropy(z, 0) == doctest::Approx(loss_vanilla(z, 0)));

  // CE of (0,3,0,...,0) at class 0 plus (1/9) * 9 = 1.0 for the square term.
  std::vector<double> three(10, 0.0);
  three[1] = 3.0;
  const double ce = std::log(9.0 + std::exp(3.0));
  CHECK(static_cast<double>(oracle::squentropy(three, 0)) == doctest::Approx(ce + 1.0).epsilon(1e-14));
  CHECK(loss_squentropy(as_eigen(three), 0) == doctest::Approx(ce + 1.0).epsilon(1e-14));

  CHECK_THROWS_AS(loss_squentropy(Eigen::VectorXd::Zero(1), 0), std::invalid_argument);
}

TEST_CASE("squentropy is never below cross-entropy") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 500; ++i) {
    const auto z = as_eigen(random_vector(5, rng, 4.0));
    const int y = static_cast<int>(rng() % 5);
    CHECK(loss_squentropy(z, y) >= loss_vanilla(z, y));
  }
}

TEST_CASE("loss gradients with respect to the weights match finite differences") {
  std::mt19937_64 rng(17);
  for (auto method : {TrainMethod::vanilla, TrainMethod::squentropy}) {
    for (int trial = 0; trial < 20; ++trial) {
      auto model = random_model({3, 5, 4, 3}, 100 + static_cast<std::uint64_t>(trial));
      Eigen::MatrixXd x = Eigen::MatrixXd::Random(2, 3);
      const std::vector<int> y{static_cast<int>(rng() % 3), static_cast<int>(rng() % 3)};
      std::vector<DenseLayer> grads;
      loss_and_gradients(model, x, y, method, &grads);
      for (std::size_t l = 0; l < model.layers().size(); ++l) {
        auto& w = model.layers()[l].weight;
        const Eigen::VectorXd w0 = Eigen::Map<const Eigen::VectorXd>(w.data(), w.size());
        const auto f = [&](const Eigen::VectorXd& v) {
          Eigen::Map<Eigen::VectorXd>(w.data(), w.size()) = v;
          return loss_and_gradients(model, x, y, method, nullptr);
        };
        const auto fd = oracle::central_difference(f, w0, 1e-4);
        Eigen::Map<Eigen::VectorXd>(w.data(), w.size()) = w0;
        const Eigen::VectorXd analytic =
            Eigen::Map<const Eigen::VectorXd>(grads[l].weight.data(), grads[l].weight.size());
        CHECK(oracle::relative_error(analytic, fd) <= 1e-4);
      }
    }
  }
}

TEST_CASE("training separates the two-Gaussian world within 50 epochs") {
  const auto d = testing::separable_world(200, 9);
  TrainConfig c;
  c.learning_rate = 0.05;
  c.max_epochs = 50;
  c.seed = SeedStream(3);
  const std::vector<int> hidden{8};
  const auto x = d.all_features();
  const auto m = train_model(c, x, d.hidden_labels(), hidden, 2);
  const auto out = m.forward(x);
  int correct = 0;
  for (std::size_t i = 0; i < d.size(); ++i) correct += out.predicted[i] == d.oracle(i) ? 1 : 0;
  CHECK(correct == 200);
}

TEST_CASE("a single training point sees its loss fall over the first epochs") {
  Eigen::MatrixXd x(1, 2);
  x << 0.4, -0.7;
  const std::vector<int> y{1};
  TrainConfig c;
  c.learning_rate = 0.01;
  c.max_epochs = 5;
  c.seed = SeedStream(8);
  TrainTrace trace;
  const std::vector<int> hidden{6};
  train_model(c, x, y, hidden, 3, &trace);
  REQUIRE(trace.epoch_loss.size() == 5);
  for (std::size_t e = 1; e < 5; ++e) CHECK(trace.epoch_loss[e] < trace.epoch_loss[e - 1]);
}

TEST_CASE("training is deterministic under a fixed seed") {
  const auto d = testing::separable_world(50, 1);
  TrainConfig c;
  c.max_epochs = 5;
  c.weight_decay = 0.01;
  c.seed = SeedStream(21);
  const std::vector<int> hidden{4, 3};
  const auto x = d.all_features();
  CHECK(train_model(c, x, d.hidden_labels(), hidden, 2) == train_model(c, x, d.hidden_labels(), hidden, 2));
}

TEST_CASE("zero weight decay is plain momentum SGD") {
  Eigen::MatrixXd x(1, 2);
  x << 1.5, -0.5;
  const std::vector<int> y{0};
  TrainConfig c;
  c.learning_rate = 0.05;
  c.momentum = 0.9;
  c.weight_decay = 0.0;
  c.batch_size = 1;
  c.max_epochs = 7;
  c.seed = SeedStream(30);
  const std::vector<int> hidden{3};
  const auto trained = train_model(c, x, y, hidden, 2);

  const std::vector<int> dims{2, 3, 2};
  auto ref = MlpClassifier::initialize(dims, c.seed.derive("init"));
  std::vector<DenseLayer> velocity;
  for (const auto& l : ref.layers()) {
    velocity.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()), Eigen::VectorXd::Zero(l.bias.size())});
  }
  std::vector<DenseLayer> g;
  for (int e = 0; e < 7; ++e) {
    loss_and_gradients(ref, x, y, TrainMethod::vanilla, &g);
    for (std::size_t l = 0; l < velocity.size(); ++l) {
      velocity[l].weight = 0.9 * velocity[l].weight + g[l].weight;
      velocity[l].bias = 0.9 * velocity[l].bias + g[l].bias;
      ref.layers()[l].weight -= 0.05 * velocity[l].weight;
      ref.layers()[l].bias -= 0.05 * velocity[l].bias;
    }
  }
  CHECK(trained == ref);
}

TEST_CASE("margin score") {
  CHECK(margin_score(std::vector<double>{0.25, 0.25, 0.25, 0.25}) == 0.0);
  CHECK(margin_score(std::vector<double>{0.0, 1.0, 0.0}) == 1.0);
  CHECK(margin_score(std::vector<double>{0.5, 0.3, 0.2}) == doctest::Approx(0.2));
  CHECK_THROWS_AS(margin_score(std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("invalid training configurations are rejected") {
  TrainConfig c;
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.max_epochs = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK_THROWS_AS(MlpClassifier(std::vector<DenseLayer>{{Eigen::MatrixXd::Zero(2, 2), Eigen::VectorXd::Zero(2)}}),
                  std::invalid_argument);
}

TEST_CASE("checkpoints round-trip exactly") {
  testing::TempDir dir;
  const auto m = random_model({4, 6, 3}, 12);
  save_checkpoint(dir / "m.txt", m);
  const auto loaded = load_checkpoint(dir / "m.txt");
  CHECK(loaded.dims() == m.dims());
  save_checkpoint(dir / "again.txt", loaded);
  CHECK(slurp(dir / "m.txt.weights") == slurp(dir / "again.txt.weights"));
  CHECK(load_checkpoint(dir / "again.txt") == loaded);
  // Stored as f32, so weights agree to single precision.
  for (std::size_t l = 0; l < m.layers().size(); ++l) {
    CHECK((loaded.layers()[l].weight - m.layers()[l].weight).cwiseAbs().maxCoeff() < 1e-6);
  }
}
