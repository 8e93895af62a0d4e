#include <doctest.h>

#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "temp_dir.hpp"
#include "tbal/experiment.hpp"

using namespace tbal;

namespace {

ExperimentConfig separable_experiment(std::size_t repeats) {
  ExperimentConfig cfg;
  cfg.tbal = testing::quick_config();
  cfg.repeats = repeats;
  return cfg;
}

ExperimentData separable_data() {
  return {testing::separable_world(200, 1), testing::separable_world(100, 2),
          testing::separable_world(50, 3)};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

HpoCombo combo(double err, double cov) {
  HpoCombo c;
  c.error.mean = err;
  c.coverage.mean = cov;
  return c;
}

}  // namespace

TEST_CASE("population mean and std") {
  const auto m = mean_std({1.0, 2.0, 3.0, 4.0});
  CHECK(m.mean == 2.5);
  CHECK(m.std == doctest::Approx(std::sqrt(1.25)));
  CHECK(m.count == 4);
  const auto one = mean_std({0.3});
  CHECK(one.std == 0.0);
  CHECK(mean_std({}).count == 0);
}

TEST_CASE("a single separable run auto-labels without mistakes") {
  const auto data = separable_data();
  const auto s = run_experiment(separable_experiment(1), data, {});
  REQUIRE(s.runs.size() == 1);
  CHECK(s.error.count == 1);
  CHECK(s.error.mean == 0.0);
  CHECK(s.error.std == 0.0);
  CHECK(s.coverage.mean > 0.5);
  REQUIRE(s.test_accuracy.has_value());
  CHECK(s.test_accuracy->mean == 1.0);
}

TEST_CASE("repeated runs use distinct seeds and reruns reproduce every file") {
  const auto data = separable_data();
  const auto cfg = separable_experiment(5);
  testing::TempDir a;
  testing::TempDir b;
  const auto sa = run_experiment(cfg, data, {a / "out", false, 2});
  const auto sb = run_experiment(cfg, data, {b / "out", false, 1});
  std::set<std::uint64_t> seeds;
  for (const auto& r : sa.runs) seeds.insert(r.seed);
  CHECK(seeds.size() == 5);
  CHECK(sa.runs[3].seed == run_seed(cfg.tbal.master_seed, 3));
  for (const auto& name : {"run_0.rounds.jsonl", "run_4.report.json", "run_2.labels.csv",
                           "run_1.scores.csv", "summary.json"}) {
    CAPTURE(name);
    REQUIRE(std::filesystem::exists(a / "out" / name));
    CHECK(slurp(a / "out" / name) == slurp(b / "out" / name));
  }
  CHECK(summary_json(cfg, sa) == summary_json(cfg, sb));
}

TEST_CASE("existing results are not overwritten without force") {
  const auto data = separable_data();
  const auto cfg = separable_experiment(1);
  testing::TempDir dir;
  run_experiment(cfg, data, {dir.path(), false, 1});
  CHECK_THROWS_AS(run_experiment(cfg, data, {dir.path(), false, 1}), OutputExistsError);
  CHECK_NOTHROW(run_experiment(cfg, data, {dir.path(), true, 1}));
}

TEST_CASE("combo selection rules") {
  const SeedStream seed(3);
  HpoRule rule;
  std::size_t tied = 0;
  // Within tolerance the higher coverage wins even with more error.
  CHECK(select_combo({combo(0.01, 0.2), combo(0.04, 0.5), combo(0.2, 0.9)}, 0.05, seed, &rule,
                     &tied) == 1);
  CHECK(rule == HpoRule::within_tolerance_max_coverage);
  CHECK(tied == 1);
  CHECK(select_combo({combo(0.08, 0.9), combo(0.06, 0.1)}, 0.05, seed, &rule) == 1);
  CHECK(rule == HpoRule::min_error_fallback);

  const std::vector<HpoCombo> ties{combo(0.0, 0.5), combo(0.1, 0.9), combo(0.01, 0.5),
                                   combo(0.02, 0.5)};
  const auto first = select_combo(ties, 0.05, seed, &rule, &tied);
  CHECK(tied == 3);
  CHECK(first != 1);
  CHECK(select_combo(ties, 0.05, seed) == first);
  std::set<std::size_t> picks;
  for (std::uint64_t s = 0; s < 64; ++s) picks.insert(select_combo(ties, 0.05, SeedStream(s)));
  CHECK(picks == std::set<std::size_t>{0, 2, 3});
  CHECK_THROWS_AS(select_combo({}, 0.05, seed), std::invalid_argument);
}

TEST_CASE("hyperparameter search runs two additive phases") {
  auto cfg = separable_experiment(2);
  cfg.hpo = HpoGrid{};
  auto& g = *cfg.hpo;
  g.train_lr = {0.1, 0.05};
  g.train_batch_size = {8};
  g.train_epochs = {30, 10};
  g.train_weight_decay = {0.0};
  g.points_per_bin = {5, 10, 20};
  g.holdout_size = 20;
  g.runs = 2;
  cfg.tbal.posthoc.method = ConfidenceKind::top_label_hb;
  const auto data = separable_data();
  testing::TempDir dir;
  const auto r = hyperparameter_search(cfg, data, {dir.path(), false, 1});
  CHECK(r.train_phase.combos.size() == 4);
  CHECK(r.posthoc_phase.combos.size() == 3);
  CHECK(r.posthoc_phase.combos.front().id == 4);
  CHECK(r.posthoc_phase.combos.front().phase == 2);
  for (const auto& c : r.train_phase.combos) CHECK(c.error.count == 2);
  // A separable world is learned by every combo, so all tie at zero error.
  CHECK(r.train_phase.rule == HpoRule::within_tolerance_max_coverage);
  const auto& winner = r.train_phase.combos[r.train_phase.selected].params;
  CHECK(r.selected.train.learning_rate == winner[0].second);
  CHECK(r.selected.posthoc.method == ConfidenceKind::top_label_hb);
  CHECK(std::filesystem::exists(dir / "hpo.json"));
  const auto again = hyperparameter_search(cfg, data, {});
  CHECK(hpo_json(again) == hpo_json(r));
}

TEST_CASE("step grids include both ends") {
  CHECK(step_grid(0.25) == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
  CHECK(step_grid(0.02).size() == 51);
  CHECK(step_grid(1.0) == std::vector<double>{0.0, 1.0});
  CHECK_THROWS_AS(step_grid(0.3), std::invalid_argument);
  CHECK_THROWS_AS(step_grid(0.0), std::invalid_argument);
}

TEST_CASE("toy sweep csv") {
  ToyGrid grid;
  grid.w_step = 0.5;
  grid.t_step = 0.5;
  grid.alphas = {1.0, 10.0};
  const auto rows = toy_sweep(grid);
  CHECK(rows.size() == 2 * 3 * 3);
  std::ostringstream out;
  write_toy_csv(out, rows);
  const auto text = out.str();
  CHECK(text.rfind("w,t,alpha,actual_err,surrogate_err,actual_cov,surrogate_cov\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 19);
}

TEST_CASE("synthetic data is written and refuses to overwrite") {
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.n_unlabeled = 30;
  spec.n_validation = 15;
  spec.n_test = 9;
  spec.sigma = 0.5;
  testing::TempDir dir;
  write_synthetic(spec, DataFormat::csv, dir.path(), false);
  const auto u = load_dataset(dir / "unlabeled.csv", DataFormat::csv, {});
  CHECK(u.size() == 30);
  CHECK(u.num_classes() == 3);
  CHECK(load_dataset(dir / "test.csv", DataFormat::csv, {}).size() == 9);
  CHECK_THROWS_AS(write_synthetic(spec, DataFormat::csv, dir.path(), false), OutputExistsError);
  write_synthetic(spec, DataFormat::rawf32, dir.path(), false);
  LoadOptions opts;
  opts.num_classes = 3;
  const auto v = load_dataset(dir / "validation.f32", DataFormat::rawf32, opts);
  CHECK(v.size() == 15);
  CHECK_THROWS_AS(write_synthetic(spec, DataFormat::idx, dir.path(), true), std::invalid_argument);
}
