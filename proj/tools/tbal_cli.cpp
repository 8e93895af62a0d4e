#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <variant>

#include "CLI11.hpp"
#include "tbal/config.hpp"
#include "tbal/experiment.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  std::size_t jobs = 1;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool needs_config) {
  auto* config = cmd->add_option("--config", f.config, "YAML experiment configuration");
  if (needs_config) config->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "master seed (overrides the config)");
  cmd->add_option("--out", f.out, "output directory (overrides the config)");
  cmd->add_flag("--force", f.force, "overwrite existing results");
  cmd->add_option("--jobs", f.jobs, "worker threads")->check(CLI::PositiveNumber);
}

tbal::ExperimentConfig load_config(const CommonFlags& f) {
  auto cfg = tbal::parse_config(f.config);
  if (f.seed) cfg.tbal.master_seed = *f.seed;
  if (!f.out.empty()) cfg.output_dir = f.out;
  return cfg;
}

tbal::RunOptions run_options(const tbal::ExperimentConfig& cfg, const CommonFlags& f) {
  return {cfg.output_dir, f.force, f.jobs};
}

void print_mean_std(const char* name, const tbal::MeanStd& m) {
  std::cout << name << ' ' << m.mean << " +- " << m.std << " (n=" << m.count << ")\n";
}

int cmd_run(const CommonFlags& f) {
  const auto cfg = load_config(f);
  const auto data = tbal::load_experiment_data(cfg.dataset);
  const auto summary = tbal::run_experiment(cfg, data, run_options(cfg, f));
  print_mean_std("error", summary.error);
  print_mean_std("coverage", summary.coverage);
  if (summary.test_accuracy) print_mean_std("test_accuracy", *summary.test_accuracy);
  std::cout << "wrote " << (cfg.output_dir / "summary.json").string() << '\n';
  return kOk;
}

int cmd_hpo(const CommonFlags& f) {
  const auto cfg = load_config(f);
  if (!cfg.hpo) {
    throw tbal::ConfigError(tbal::ConfigErrorKind::missing_field, "hpo",
                            "the hpo subcommand needs an hpo section");
  }
  const auto data = tbal::load_experiment_data(cfg.dataset);
  const auto result = tbal::hyperparameter_search(cfg, data, run_options(cfg, f));
  for (const auto* phase : {&result.train_phase, &result.posthoc_phase}) {
    const auto& c = phase->combos[phase->selected];
    std::cout << "phase " << c.phase << " selected combo " << c.id << ":";
    for (const auto& [name, value] : c.params) std::cout << ' ' << name << '=' << value;
    std::cout << " (error " << c.error.mean << ", coverage " << c.coverage.mean << ")\n";
  }
  std::cout << "wrote " << (cfg.output_dir / "hpo.json").string() << '\n';
  return kOk;
}

int cmd_toy(const CommonFlags& f, const tbal::ToyGrid& grid) {
  const auto rows = tbal::toy_sweep(grid);
  if (f.out.empty()) {
    tbal::write_toy_csv(std::cout, rows);
    return kOk;
  }
  const std::filesystem::path dir = f.out;
  const auto path = dir / "toy_check.csv";
  if (std::filesystem::exists(path) && !f.force) {
    throw tbal::OutputExistsError(path.string() + " exists; pass --force to overwrite");
  }
  std::filesystem::create_directories(dir);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  tbal::write_toy_csv(out, rows);
  std::cout << "wrote " << path.string() << '\n';
  return kOk;
}

int cmd_gen_synth(const CommonFlags& f, const std::string& format) {
  auto cfg = tbal::parse_config(f.config);
  auto* spec = std::get_if<tbal::SyntheticSpec>(&cfg.dataset);
  if (!spec) {
    throw tbal::ConfigError(tbal::ConfigErrorKind::invalid_value, "dataset",
                            "gen-synth needs a synthetic dataset");
  }
  if (f.seed) spec->seed = *f.seed;
  const std::filesystem::path dir = f.out.empty() ? cfg.output_dir : std::filesystem::path(f.out);
  tbal::write_synthetic(*spec, tbal::parse_data_format(format), dir, f.force);
  std::cout << "wrote synthetic data to " << dir.string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Threshold-based auto-labeling"};
  app.require_subcommand(1);

  CommonFlags run_flags;
  auto* run = app.add_subcommand("run", "run R seeded TBAL experiments");
  add_common(run, run_flags, true);

  CommonFlags hpo_flags;
  auto* hpo = app.add_subcommand("hpo", "two-phase first-round hyperparameter search");
  add_common(hpo, hpo_flags, true);

  CommonFlags toy_flags;
  tbal::ToyGrid grid;
  std::string domain = "predicted_side";
  auto* toy = app.add_subcommand("toy-check", "surrogate tightness sweep on the 1-D toy world");
  add_common(toy, toy_flags, false);
  toy->add_option("--w-step", grid.w_step, "step of the w grid over [0,1]");
  toy->add_option("--t-step", grid.t_step, "step of the threshold grid over [0,1]");
  toy->add_option("--alphas", grid.alphas, "sigmoid scales")->delimiter(',');
  toy->add_option("--domain", domain, "coverage normalization")
      ->check(CLI::IsMember({"predicted_side", "unit_interval"}));

  CommonFlags synth_flags;
  std::string format = "csv";
  auto* synth = app.add_subcommand("gen-synth", "write the configured synthetic dataset");
  add_common(synth, synth_flags, true);
  synth->add_option("--format", format, "output format")
      ->check(CLI::IsMember({"csv", "rawf32"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) return cmd_run(run_flags);
    if (*hpo) return cmd_hpo(hpo_flags);
    if (*toy) {
      grid.domain = tbal::parse_coverage_domain(domain);
      return cmd_toy(toy_flags, grid);
    }
    if (*synth) return cmd_gen_synth(synth_flags, format);
  } catch (const tbal::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kRuntimeError;
}
