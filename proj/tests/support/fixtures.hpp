#pragma once

#include <cstddef>
#include <cstdint>

#include <Eigen/Core>

#include "tbal/data.hpp"
#include "tbal/tbal.hpp"

namespace tbal::testing {

/// Two classes in 1-D at -10 and +10 with sigma 0.1: a midpoint threshold
/// classifies every point.
inline Dataset separable_world(std::size_t n, std::uint64_t seed) {
  Eigen::MatrixXd means(2, 1);
  means << -10.0, 10.0;
  return synth_gaussian_mixture(2, 1, means, 0.1, n, SeedStream(seed));
}

/// Small, fast loop configuration for the separable world.
inline TbalConfig quick_config() {
  TbalConfig c;
  c.train_budget = 20;
  c.seed_size = 20;
  c.query_batch = 10;
  c.hidden = {4};
  c.train.learning_rate = 0.1;
  c.train.batch_size = 8;
  c.train.max_epochs = 30;
  c.master_seed = 7;
  return c;
}

}  // namespace tbal::testing
