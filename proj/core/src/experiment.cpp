#include "tbal/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <functional>
#include <numeric>
#include <ostream>
#include <thread>

#include "json.hpp"
#include "tbal/report.hpp"

namespace tbal {
namespace {

using nlohmann::ordered_json;

/// Runs fn(0..n-1) on up to `jobs` threads. Failures are rethrown for the
/// lowest failing index, so the error reported does not depend on timing.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(n, 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const RunError&) {
      throw;
    } catch (const std::exception& e) {
      throw RunError(i, e.what());
    }
  }
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void prepare_output_dir(const std::filesystem::path& dir, const std::string& marker, bool force) {
  if (std::filesystem::exists(dir / marker) && !force) {
    throw OutputExistsError((dir / marker).string() + " exists; pass --force to overwrite");
  }
  std::filesystem::create_directories(dir);
}

ordered_json optional_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  return *v;
}

ordered_json mean_std_json(const MeanStd& m) {
  return {{"mean", m.mean}, {"std", m.std}, {"count", m.count}};
}

double classifier_accuracy(const MlpClassifier& h, const Dataset& test) {
  const auto fwd = h.forward(test.all_features());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (fwd.predicted[i] == test.oracle(i)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

}  // namespace

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd m;
  m.count = values.size();
  if (values.empty()) return m;
  m.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(m.count);
  double ss = 0.0;
  for (double v : values) ss += (v - m.mean) * (v - m.mean);
  m.std = std::sqrt(ss / static_cast<double>(m.count));
  return m;
}

std::uint64_t run_seed(std::uint64_t master_seed, std::size_t run) {
  return SeedStream(master_seed).derive(run, "run").seed();
}

ExperimentSummary run_experiment(const ExperimentConfig& config, const ExperimentData& data,
                                 const RunOptions& options) {
  const bool write = !options.output_dir.empty();
  if (write) prepare_output_dir(options.output_dir, "summary.json", options.force);
  const ReportOptions report_options{config.include_timing};

  ExperimentSummary summary;
  summary.runs.resize(config.repeats);
  parallel_for(config.repeats, options.jobs, [&](std::size_t r) {
    auto cfg = config.tbal;
    cfg.master_seed = run_seed(config.tbal.master_seed, r);
    const auto report = run_tbal(cfg, data.unlabeled, data.validation);

    RunSummary& s = summary.runs[r];
    s.run = r;
    s.seed = cfg.master_seed;
    s.metrics = final_metrics(report, data.unlabeled);
    s.human_labeled = report.human_seed + report.human_active;
    s.rounds = report.rounds.size();
    if (data.test && report.last_round) {
      s.test_accuracy = classifier_accuracy(*report.last_round->classifier, *data.test);
    }
    if (!write) return;

    const auto stem = options.output_dir / ("run_" + std::to_string(r));
    {
      auto out = open_output(stem.string() + ".rounds.jsonl");
      write_rounds_jsonl(out, report, report_options);
    }
    {
      auto out = open_output(stem.string() + ".report.json");
      out << report_json(report, report_options) << '\n';
    }
    {
      auto out = open_output(stem.string() + ".labels.csv");
      write_output_labels(out, report);
    }
    if (config.score_dumps && report.last_round) {
      const auto& g = report.last_round->confidence;
      const auto points = g.score_points(data.unlabeled.all_features(),
                                         data.unlabeled.hidden_labels());
      auto out = open_output(stem.string() + ".scores.csv");
      write_score_dump(out, points, data.unlabeled.ids());
    }
  });

  std::vector<double> errors;
  std::vector<double> coverages;
  std::vector<double> accuracies;
  for (const auto& s : summary.runs) {
    if (s.metrics.error) errors.push_back(*s.metrics.error);
    coverages.push_back(s.metrics.coverage);
    if (s.test_accuracy) accuracies.push_back(*s.test_accuracy);
  }
  summary.error = mean_std(errors);
  summary.coverage = mean_std(coverages);
  if (!accuracies.empty()) summary.test_accuracy = mean_std(accuracies);

  if (write) {
    auto out = open_output(options.output_dir / "summary.json");
    out << summary_json(config, summary) << '\n';
  }
  return summary;
}

std::string summary_json(const ExperimentConfig& config, const ExperimentSummary& summary) {
  ordered_json j;
  j["master_seed"] = config.tbal.master_seed;
  j["repeats"] = config.repeats;
  j["train_method"] = to_string(config.tbal.train.method);
  j["posthoc_method"] = to_string(config.tbal.posthoc.method);
  j["eps_a"] = config.tbal.eps_a;
  j["error"] = mean_std_json(summary.error);
  j["coverage"] = mean_std_json(summary.coverage);
  if (summary.test_accuracy) j["test_accuracy"] = mean_std_json(*summary.test_accuracy);
  auto runs = ordered_json::array();
  for (const auto& s : summary.runs) {
    ordered_json r;
    r["run"] = s.run;
    r["seed"] = s.seed;
    r["error"] = optional_json(s.metrics.error);
    r["coverage"] = s.metrics.coverage;
    r["auto_labeled"] = s.metrics.auto_labeled;
    r["auto_wrong"] = s.metrics.auto_wrong;
    r["human_labeled"] = s.human_labeled;
    r["rounds"] = s.rounds;
    r["test_accuracy"] = optional_json(s.test_accuracy);
    runs.push_back(std::move(r));
  }
  j["runs"] = std::move(runs);
  return j.dump(2);
}

std::size_t select_combo(const std::vector<HpoCombo>& combos, double eps_a, SeedStream tie_break,
                         HpoRule* rule, std::size_t* tied) {
  if (combos.empty()) throw std::invalid_argument("no hyperparameter combinations to select from");
  std::vector<std::size_t> qualifying;
  for (std::size_t i = 0; i < combos.size(); ++i) {
    if (combos[i].error.mean <= eps_a) qualifying.push_back(i);
  }
  std::vector<std::size_t> best;
  if (!qualifying.empty()) {
    if (rule) *rule = HpoRule::within_tolerance_max_coverage;
    double top = -1.0;
    for (auto i : qualifying) top = std::max(top, combos[i].coverage.mean);
    for (auto i : qualifying) {
      if (combos[i].coverage.mean == top) best.push_back(i);
    }
  } else {
    if (rule) *rule = HpoRule::min_error_fallback;
    double low = combos[0].error.mean;
    for (const auto& c : combos) low = std::min(low, c.error.mean);
    for (std::size_t i = 0; i < combos.size(); ++i) {
      if (combos[i].error.mean == low) best.push_back(i);
    }
  }
  if (tied) *tied = best.size();
  if (best.size() == 1) return best.front();
  auto rng = tie_break.engine();
  std::uniform_int_distribution<std::size_t> pick(0, best.size() - 1);
  return best[pick(rng)];
}

namespace {

using ParamSetter = std::function<void(TbalConfig&, double)>;

struct ParamAxis {
  std::string name;
  std::vector<double> values;
  ParamSetter apply;
};

template <typename T>
std::vector<double> as_doubles(const std::vector<T>& v) {
  return std::vector<double>(v.begin(), v.end());
}

/// Cartesian product, last axis varying fastest.
std::vector<std::vector<std::pair<std::string, double>>> product(const std::vector<ParamAxis>& axes) {
  std::vector<std::vector<std::pair<std::string, double>>> out{{}};
  for (const auto& axis : axes) {
    if (axis.values.empty()) throw std::invalid_argument("empty grid for " + axis.name);
    std::vector<std::vector<std::pair<std::string, double>>> next;
    for (const auto& partial : out) {
      for (double v : axis.values) {
        auto combo = partial;
        combo.emplace_back(axis.name, v);
        next.push_back(std::move(combo));
      }
    }
    out = std::move(next);
  }
  return out;
}

std::vector<ParamAxis> train_axes(const HpoGrid& g) {
  return {
      {"train.learning_rate", g.train_lr,
       [](TbalConfig& c, double v) { c.train.learning_rate = v; }},
      {"train.batch_size", as_doubles(g.train_batch_size),
       [](TbalConfig& c, double v) { c.train.batch_size = static_cast<std::size_t>(v); }},
      {"train.epochs", as_doubles(g.train_epochs),
       [](TbalConfig& c, double v) { c.train.max_epochs = static_cast<int>(v); }},
      {"train.weight_decay", g.train_weight_decay,
       [](TbalConfig& c, double v) { c.train.weight_decay = v; }},
  };
}

std::vector<ParamAxis> posthoc_axes(const HpoGrid& g, ConfidenceKind method) {
  switch (method) {
    case ConfidenceKind::softmax:
      return {};
    case ConfidenceKind::temperature:
      return {
          {"temperature.learning_rate", g.temperature_lr,
           [](TbalConfig& c, double v) { c.posthoc.temperature.learning_rate = v; }},
          {"temperature.epochs", as_doubles(g.temperature_epochs),
           [](TbalConfig& c, double v) { c.posthoc.temperature.max_epochs = static_cast<int>(v); }},
      };
    case ConfidenceKind::top_label_hb:
      return {
          {"histogram.points_per_bin", as_doubles(g.points_per_bin),
           [](TbalConfig& c, double v) {
             c.posthoc.points_per_bin = static_cast<std::size_t>(v);
           }},
      };
    case ConfidenceKind::colander:
      return {
          {"colander.lambda", g.colander_lambda,
           [](TbalConfig& c, double v) { c.posthoc.colander.lambda = v; }},
          {"colander.alpha", g.colander_alpha,
           [](TbalConfig& c, double v) { c.posthoc.colander.alpha = v; }},
          {"colander.learning_rate", g.colander_lr,
           [](TbalConfig& c, double v) { c.posthoc.colander.learning_rate = v; }},
          {"colander.weight_decay", g.colander_weight_decay,
           [](TbalConfig& c, double v) { c.posthoc.colander.weight_decay = v; }},
          {"colander.epochs", as_doubles(g.colander_epochs),
           [](TbalConfig& c, double v) { c.posthoc.colander.max_epochs = static_cast<int>(v); }},
          {"colander.batch_size", as_doubles(g.colander_batch_size),
           [](TbalConfig& c, double v) {
             c.posthoc.colander.batch_size = static_cast<std::size_t>(v);
           }},
      };
  }
  throw std::logic_error("unhandled confidence method");
}

TbalConfig apply_params(TbalConfig base, const std::vector<ParamAxis>& axes,
                        const std::vector<std::pair<std::string, double>>& params) {
  for (std::size_t a = 0; a < axes.size(); ++a) axes[a].apply(base, params[a].second);
  return base;
}

struct HoldoutSplit {
  LabeledSet validation;
  Eigen::MatrixXd x;
  std::vector<int> y;
};

HoldoutSplit carve_holdout(const Dataset& val, std::size_t size, SeedStream seed) {
  if (size + 2 > val.size()) {
    throw std::invalid_argument("holdout_size leaves fewer than two validation points");
  }
  std::vector<std::size_t> order(val.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = seed.engine();
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> held(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(size));
  std::vector<std::size_t> rest(order.begin() + static_cast<std::ptrdiff_t>(size), order.end());
  std::sort(held.begin(), held.end());
  std::sort(rest.begin(), rest.end());
  HoldoutSplit out{oracle_labeled(val, rest), val.gather(held), {}};
  for (auto i : held) out.y.push_back(val.oracle(i));
  return out;
}

HpoPhaseResult run_phase(int phase, std::size_t first_id, const TbalConfig& base,
                         const std::vector<ParamAxis>& axes, const ExperimentConfig& config,
                         const ExperimentData& data, const HoldoutSplit& holdout,
                         const RunOptions& options) {
  const auto& grid = *config.hpo;
  const auto combos = product(axes);
  const std::size_t runs = grid.runs;
  std::vector<double> err(combos.size() * runs);
  std::vector<double> cov(combos.size() * runs);
  const SeedStream hpo_root = SeedStream(config.tbal.master_seed).derive("hpo");

  parallel_for(combos.size() * runs, options.jobs, [&](std::size_t task) {
    const auto c = task / runs;
    const auto r = task % runs;
    auto cfg = apply_params(base, axes, combos[c]);
    cfg.max_rounds = 1;
    cfg.master_seed = run_seed(hpo_root.seed(), r);
    const auto report = run_tbal(cfg, data.unlabeled, data.validation, holdout.validation);
    if (!report.last_round) throw std::runtime_error("first round did not complete");
    const auto& art = *report.last_round;
    cov[task] = empirical_coverage(art.confidence, art.thresholds, holdout.x, holdout.y);
    err[task] =
        empirical_error(art.confidence, art.thresholds, holdout.x, holdout.y).value_or(0.0);
  });

  HpoPhaseResult result;
  for (std::size_t c = 0; c < combos.size(); ++c) {
    HpoCombo combo;
    combo.id = first_id + c;
    combo.phase = phase;
    combo.params = combos[c];
    const auto begin = static_cast<std::ptrdiff_t>(c * runs);
    const auto end = begin + static_cast<std::ptrdiff_t>(runs);
    combo.error = mean_std(std::vector<double>(err.begin() + begin, err.begin() + end));
    combo.coverage = mean_std(std::vector<double>(cov.begin() + begin, cov.begin() + end));
    result.combos.push_back(std::move(combo));
  }
  result.selected =
      select_combo(result.combos, config.tbal.eps_a,
                   SeedStream(grid.tie_break_seed).derive(static_cast<std::uint64_t>(phase),
                                                          "tie_break"),
                   &result.rule, &result.tied);
  return result;
}

std::string_view to_string(HpoRule rule) {
  return rule == HpoRule::within_tolerance_max_coverage ? "max_coverage_within_eps_a"
                                                        : "min_error_fallback";
}

ordered_json phase_json(const HpoPhaseResult& phase) {
  ordered_json j;
  auto combos = ordered_json::array();
  for (const auto& c : phase.combos) {
    ordered_json params;
    for (const auto& [name, value] : c.params) params[name] = value;
    combos.push_back({{"id", c.id},
                      {"params", std::move(params)},
                      {"error", mean_std_json(c.error)},
                      {"coverage", mean_std_json(c.coverage)}});
  }
  j["combos"] = std::move(combos);
  j["selected_id"] = phase.combos.at(phase.selected).id;
  j["rule"] = to_string(phase.rule);
  j["tied"] = phase.tied;
  return j;
}

}  // namespace

HpoResult hyperparameter_search(const ExperimentConfig& config, const ExperimentData& data,
                                const RunOptions& options) {
  if (!config.hpo) throw std::invalid_argument("configuration has no hpo section");
  const bool write = !options.output_dir.empty();
  if (write) prepare_output_dir(options.output_dir, "hpo.json", options.force);

  const auto holdout = carve_holdout(data.validation, config.hpo->holdout_size,
                                     SeedStream(config.tbal.master_seed).derive("hpo_holdout"));

  HpoResult result;
  auto phase1_base = config.tbal;
  phase1_base.posthoc.method = ConfidenceKind::softmax;
  const auto t_axes = train_axes(*config.hpo);
  result.train_phase = run_phase(1, 0, phase1_base, t_axes, config, data, holdout, options);

  auto phase2_base = apply_params(
      config.tbal, t_axes, result.train_phase.combos[result.train_phase.selected].params);
  const auto p_axes = posthoc_axes(*config.hpo, config.tbal.posthoc.method);
  result.posthoc_phase = run_phase(2, result.train_phase.combos.size(), phase2_base, p_axes,
                                   config, data, holdout, options);
  result.selected = apply_params(
      phase2_base, p_axes, result.posthoc_phase.combos[result.posthoc_phase.selected].params);

  if (write) {
    auto out = open_output(options.output_dir / "hpo.json");
    out << hpo_json(result) << '\n';
  }
  return result;
}

std::string hpo_json(const HpoResult& result) {
  ordered_json j;
  j["train_phase"] = phase_json(result.train_phase);
  j["posthoc_phase"] = phase_json(result.posthoc_phase);
  const auto& s = result.selected;
  ordered_json sel;
  sel["train"] = {{"method", to_string(s.train.method)},
                  {"learning_rate", s.train.learning_rate},
                  {"batch_size", s.train.batch_size},
                  {"epochs", s.train.max_epochs},
                  {"weight_decay", s.train.weight_decay}};
  ordered_json posthoc;
  posthoc["method"] = to_string(s.posthoc.method);
  switch (s.posthoc.method) {
    case ConfidenceKind::softmax:
      break;
    case ConfidenceKind::temperature:
      posthoc["temperature"] = {{"learning_rate", s.posthoc.temperature.learning_rate},
                                {"epochs", s.posthoc.temperature.max_epochs}};
      break;
    case ConfidenceKind::top_label_hb:
      posthoc["points_per_bin"] = s.posthoc.points_per_bin;
      break;
    case ConfidenceKind::colander:
      posthoc["colander"] = {{"lambda", s.posthoc.colander.lambda},
                             {"alpha", s.posthoc.colander.alpha},
                             {"learning_rate", s.posthoc.colander.learning_rate},
                             {"weight_decay", s.posthoc.colander.weight_decay},
                             {"epochs", s.posthoc.colander.max_epochs},
                             {"batch_size", s.posthoc.colander.batch_size}};
      break;
  }
  sel["posthoc"] = std::move(posthoc);
  j["selected"] = std::move(sel);
  return j.dump(2);
}

std::vector<double> step_grid(double step) {
  if (!(step > 0.0 && step <= 1.0)) throw std::invalid_argument("grid step must lie in (0,1]");
  const auto n = std::llround(1.0 / step);
  if (std::abs(static_cast<double>(n) * step - 1.0) > 1e-9) {
    throw std::invalid_argument("grid step must divide 1 evenly");
  }
  std::vector<double> out;
  for (long long i = 0; i <= n; ++i) out.push_back(static_cast<double>(i) / static_cast<double>(n));
  return out;
}

std::vector<ToyRow> toy_sweep(const ToyGrid& grid) {
  std::vector<ToyRow> rows;
  const auto ws = step_grid(grid.w_step);
  const auto ts = step_grid(grid.t_step);
  for (double alpha : grid.alphas) {
    for (double w : ws) {
      for (double t : ts) {
        Toy1DWorld world;
        world.w = w;
        world.domain = grid.domain;
        rows.push_back({w, t, alpha, toy_1d_metrics(world, t, alpha)});
      }
    }
  }
  return rows;
}

void write_toy_csv(std::ostream& out, const std::vector<ToyRow>& rows) {
  out << "w,t,alpha,actual_err,surrogate_err,actual_cov,surrogate_cov\n";
  const auto old_precision = out.precision(12);
  for (const auto& r : rows) {
    out << r.w << ',' << r.t << ',' << r.alpha << ',';
    if (r.metrics.actual_error) out << *r.metrics.actual_error;
    out << ',' << r.metrics.surrogate_error << ',' << r.metrics.actual_coverage << ','
        << r.metrics.surrogate_coverage << '\n';
  }
  out.precision(old_precision);
}

void write_synthetic(const SyntheticSpec& spec, DataFormat format,
                     const std::filesystem::path& dir, bool force) {
  if (format == DataFormat::idx) throw std::invalid_argument("gen-synth writes csv or rawf32");
  const std::string ext = format == DataFormat::csv ? ".csv" : ".f32";
  if (std::filesystem::exists(dir / ("unlabeled" + ext)) && !force) {
    throw OutputExistsError((dir / ("unlabeled" + ext)).string() +
                            " exists; pass --force to overwrite");
  }
  std::filesystem::create_directories(dir);
  const auto data = load_experiment_data(spec);
  auto emit = [&](const Dataset& d, const std::string& name) {
    const auto path = dir / (name + ext);
    if (format == DataFormat::csv) {
      write_csv(path, d);
    } else {
      write_rawf32(path, d);
    }
  };
  emit(data.unlabeled, "unlabeled");
  emit(data.validation, "validation");
  if (data.test) emit(*data.test, "test");
}

}  // namespace tbal
