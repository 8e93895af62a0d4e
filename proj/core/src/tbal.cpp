#include "tbal/tbal.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <stdexcept>

namespace tbal {

ThresholdConfig TbalConfig::threshold_config() const {
  ThresholdConfig t;
  t.grid = grid;
  t.rho0 = rho0;
  t.c1 = c1;
  t.eps_a = eps_a;
  t.group_by = group_by;
  return t;
}

void TbalConfig::validate() const {
  threshold_config().validate();
  train.validate();
  if (posthoc.method == ConfidenceKind::colander) posthoc.colander.validate();
  if (seed_size < 1) throw std::invalid_argument("seed_size must be >= 1");
  if (seed_size > train_budget) throw std::invalid_argument("seed_size exceeds train_budget");
  if (query_batch < 1) throw std::invalid_argument("query_batch must be >= 1");
  if (!(nu > 0.0 && nu < 1.0)) throw std::invalid_argument("nu must lie in (0,1)");
  if (active_multiplier < 1) throw std::invalid_argument("active multiplier must be >= 1");
  if (hidden.empty()) throw std::invalid_argument("classifier needs at least one hidden layer");
  if (posthoc.points_per_bin < 1) throw std::invalid_argument("points_per_bin must be >= 1");
  if (max_rounds < 0) throw std::invalid_argument("max_rounds must be >= 0");
}

LabeledSet oracle_labeled(const Dataset& data, std::span<const std::size_t> indices) {
  LabeledSet out;
  for (auto i : indices) out.add({i, data.oracle(i), LabelSource::human, 0});
  return out;
}

QueryResult active_query(const Dataset& data, const MlpClassifier& classifier, const Pool& pool,
                         std::size_t batch, std::size_t multiplier, int round, SeedStream seed) {
  if (pool.empty()) throw std::invalid_argument("active query on an empty pool");
  const auto& active = pool.active();
  const auto probs = classifier.forward(data.gather(active)).probs;

  std::vector<std::pair<double, std::size_t>> margins(active.size());
  for (std::size_t r = 0; r < active.size(); ++r) {
    margins[r] = {margin_score(probs.row(static_cast<Eigen::Index>(r)).transpose()), active[r]};
  }
  std::sort(margins.begin(), margins.end());
  const std::size_t n_candidates = std::min(multiplier * batch, margins.size());
  std::vector<std::size_t> candidates;
  candidates.reserve(n_candidates);
  for (std::size_t r = 0; r < n_candidates; ++r) candidates.push_back(margins[r].second);

  auto rng = seed.engine();
  std::shuffle(candidates.begin(), candidates.end(), rng);
  candidates.resize(std::min(batch, candidates.size()));

  QueryResult result{LabeledSet{}, pool};
  for (auto i : candidates) result.queried.add({i, data.oracle(i), LabelSource::human, round});
  result.remaining.remove(candidates);
  return result;
}

AutoLabelResult auto_label_select(const ConfidenceModel& g, const ThresholdVector& t,
                                  const Dataset& data, const Pool& pool, int round) {
  AutoLabelResult out{LabeledSet{}, pool, 0};
  if (pool.empty()) return out;
  const auto& active = pool.active();
  std::vector<int> truth(active.size());
  for (std::size_t r = 0; r < active.size(); ++r) truth[r] = data.oracle(active[r]);
  const auto scored = g.score_points(data.gather(active), truth);

  std::vector<std::size_t> chosen;
  for (std::size_t r = 0; r < active.size(); ++r) {
    if (!t.selects(scored[r])) continue;
    chosen.push_back(active[r]);
    out.labeled.add({active[r], scored[r].predicted, LabelSource::automatic, round});
    if (!scored[r].correct()) ++out.wrong;
  }
  out.remaining.remove(chosen);
  return out;
}

LabeledSet filter_validation(const ConfidenceModel& g, const ThresholdVector& t,
                             const Dataset& val_data, const LabeledSet& validation) {
  LabeledSet kept;
  if (validation.empty()) return kept;
  const auto indices = validation.indices();
  const auto labels = validation.labels();
  const auto scored = g.score_points(val_data.gather(indices), labels);
  for (std::size_t r = 0; r < scored.size(); ++r) {
    if (!t.selects(scored[r])) kept.add(validation.entries()[r]);
  }
  return kept;
}

ConfidenceModel fit_posthoc(const PosthocConfig& config,
                            std::shared_ptr<const MlpClassifier> classifier,
                            const Eigen::MatrixXd& x_cal, std::span<const int> y_cal,
                            SeedStream seed, RoundRecord* record) {
  switch (config.method) {
    case ConfidenceKind::softmax:
      return ConfidenceModel::softmax(std::move(classifier));
    case ConfidenceKind::temperature:
      return fit_temperature(std::move(classifier), x_cal, y_cal, config.temperature).model;
    case ConfidenceKind::top_label_hb: {
      auto per_bin = config.points_per_bin;
      if (static_cast<std::size_t>(x_cal.rows()) < per_bin) {
        per_bin = static_cast<std::size_t>(x_cal.rows());
        if (record) {
          record->warnings.push_back("calibration set smaller than points_per_bin; using " +
                                     std::to_string(per_bin));
        }
      }
      auto fit = fit_top_label_hb(std::move(classifier), x_cal, y_cal, per_bin);
      if (record && !fit.fallback_classes.empty()) {
        std::string msg = "histogram binning fell back to softmax for classes";
        for (int c : fit.fallback_classes) msg += " " + std::to_string(c);
        record->warnings.push_back(msg);
      }
      return std::move(fit.model);
    }
    case ConfidenceKind::colander: {
      auto cfg = config.colander;
      cfg.seed = seed;
      auto fit = colander_fit(std::move(classifier), x_cal, y_cal, cfg);
      if (record) {
        record->colander_t_prime =
            std::vector<double>(fit.t_prime.data(), fit.t_prime.data() + fit.t_prime.size());
      }
      return std::move(fit.model);
    }
  }
  throw std::logic_error("unhandled confidence method");
}

TbalReport run_tbal(const TbalConfig& config, const Dataset& unlabeled, const Dataset& val_data,
                    const LabeledSet& validation) {
  config.validate();
  if (unlabeled.size() < config.seed_size) {
    throw std::invalid_argument("unlabeled pool smaller than seed_size");
  }
  if (validation.size() < 2) throw std::invalid_argument("validation needs at least two points");
  if (unlabeled.dim() != val_data.dim() || unlabeled.num_classes() != val_data.num_classes()) {
    throw std::invalid_argument("unlabeled and validation data disagree on d or k");
  }
  const SeedStream root(config.master_seed);
  const int k = unlabeled.num_classes();
  const auto threshold_cfg = config.threshold_config();

  TbalReport report;
  report.initial_pool = unlabeled.size();

  auto seed_query = random_query(unlabeled, Pool::full(unlabeled.size()), config.seed_size, 0,
                                 root.derive(0, "seed_query"));
  Pool pool = std::move(seed_query.remaining);
  LabeledSet train;
  LabeledSet query = seed_query.queried;
  report.output.append(seed_query.queried);
  report.human_seed = seed_query.queried.size();

  LabeledSet val = validation;
  std::size_t n_t = config.seed_size;
  int round = 0;

  while (!pool.empty() && n_t <= config.train_budget) {
    if (config.max_rounds > 0 && round >= config.max_rounds) break;
    ++round;
    const auto started = std::chrono::steady_clock::now();
    RoundRecord rec;
    rec.round = round;

    train.append(query);
    rec.n_train = train.size();
    rec.n_val = val.size();
    if (val.size() < 2) {
      report.warnings.push_back("round " + std::to_string(round) +
                                ": validation set exhausted; stopping with " +
                                std::to_string(pool.size()) + " points unlabeled");
      break;
    }

    auto train_cfg = config.train;
    train_cfg.seed = root.derive(static_cast<std::uint64_t>(round), "train");
    const auto train_idx = train.indices();
    const auto train_labels = train.labels();
    auto classifier = std::make_shared<const MlpClassifier>(train_model(
        train_cfg, unlabeled.gather(train_idx), train_labels, config.hidden, k));

    const auto split =
        random_split(val, config.nu, root.derive(static_cast<std::uint64_t>(round), "split"));
    rec.n_cal = split.calibration.size();
    rec.n_th = split.threshold.size();

    const auto cal_labels = split.calibration.labels();
    auto g = fit_posthoc(config.posthoc, classifier, val_data.gather(split.calibration.indices()),
                         cal_labels, root.derive(static_cast<std::uint64_t>(round), "posthoc"),
                         &rec);

    const auto th_labels = split.threshold.labels();
    const auto estimate = estimate_thresholds(g, val_data.gather(split.threshold.indices()),
                                              th_labels, threshold_cfg);
    rec.thresholds = estimate.thresholds;
    rec.class_thresholds = estimate.classes;

    auto autolabel = auto_label_select(g, estimate.thresholds, unlabeled, pool, round);
    pool = std::move(autolabel.remaining);
    rec.n_auto = autolabel.labeled.size();
    rec.n_auto_wrong = autolabel.wrong;
    if (rec.n_auto > 0) {
      rec.auto_error = static_cast<double>(rec.n_auto_wrong) / static_cast<double>(rec.n_auto);
    }
    rec.auto_coverage = static_cast<double>(rec.n_auto) / static_cast<double>(report.initial_pool);
    report.output.append(autolabel.labeled);
    report.auto_labeled += rec.n_auto;

    val = filter_validation(g, estimate.thresholds, val_data, val);
    rec.n_val_next = val.size();

    query = LabeledSet{};
    if (!pool.empty()) {
      auto q = active_query(unlabeled, *classifier, pool, config.query_batch,
                            config.active_multiplier, round,
                            root.derive(static_cast<std::uint64_t>(round), "active_query"));
      pool = std::move(q.remaining);
      query = std::move(q.queried);
      report.output.append(query);
      report.human_active += query.size();
    }
    rec.n_queried = query.size();
    rec.pool_remaining = pool.size();
    n_t += config.query_batch;

    report.last_round = RoundArtifacts{classifier, g, estimate.thresholds};
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    report.rounds.push_back(std::move(rec));
  }

  report.n_train_final = train.size();
  std::size_t wrong = 0;
  for (const auto& rec : report.rounds) wrong += rec.n_auto_wrong;
  if (report.auto_labeled > 0) {
    report.final_error =
        static_cast<double>(wrong) / static_cast<double>(report.auto_labeled);
  }
  report.final_coverage =
      static_cast<double>(report.auto_labeled) / static_cast<double>(report.initial_pool);
  report.output_ids.reserve(report.output.size());
  for (const auto& e : report.output.entries()) report.output_ids.push_back(unlabeled.ids()[e.index]);
  return report;
}

TbalReport run_tbal(const TbalConfig& config, const Dataset& unlabeled, const Dataset& val_data) {
  std::vector<std::size_t> all(val_data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return run_tbal(config, unlabeled, val_data, oracle_labeled(val_data, all));
}

}  // namespace tbal
