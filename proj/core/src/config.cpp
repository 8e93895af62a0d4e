#include "tbal/config.hpp"

#include <cmath>
#include <algorithm>
#include <fstream>
#include <iterator>
#include <numeric>
#include <numbers>
#include <set>
#include <sstream>
#include <type_traits>

#include <yaml-cpp/yaml.h>

namespace tbal {

std::string_view to_string(ConfigErrorKind kind) {
  switch (kind) {
    case ConfigErrorKind::file_not_found: return "file_not_found";
    case ConfigErrorKind::syntax: return "syntax";
    case ConfigErrorKind::missing_field: return "missing_field";
    case ConfigErrorKind::type_mismatch: return "type_mismatch";
    case ConfigErrorKind::unknown_key: return "unknown_key";
    case ConfigErrorKind::out_of_range: return "out_of_range";
    case ConfigErrorKind::invalid_value: return "invalid_value";
  }
  return "unknown";
}

ConfigError::ConfigError(ConfigErrorKind kind, std::string key_path, const std::string& detail)
    : std::runtime_error(std::string(to_string(kind)) + " at '" + key_path + "': " + detail),
      kind_(kind),
      key_path_(std::move(key_path)) {}

Eigen::MatrixXd SyntheticSpec::class_means() const {
  if (means) return *means;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(num_classes, dim);
  for (int c = 0; c < num_classes; ++c) {
    if (dim == 1) {
      m(c, 0) = radius * c;
      continue;
    }
    const double angle = 2.0 * std::numbers::pi * c / num_classes;
    m(c, 0) = radius * std::cos(angle);
    m(c, 1) = radius * std::sin(angle);
  }
  return m;
}

namespace {

template <typename T>
struct is_vector : std::false_type {};
template <typename T>
struct is_vector<std::vector<T>> : std::true_type {};

template <typename T>
T convert(const YAML::Node& node, const std::string& path) {
  if constexpr (is_vector<T>::value) {
    if (!node.IsSequence()) {
      throw ConfigError(ConfigErrorKind::type_mismatch, path, "expected a list");
    }
    T out;
    for (std::size_t i = 0; i < node.size(); ++i) {
      out.push_back(convert<typename T::value_type>(node[i], path + "[" + std::to_string(i) + "]"));
    }
    return out;
  } else {
    if (!node.IsScalar()) {
      throw ConfigError(ConfigErrorKind::type_mismatch, path, "expected a scalar");
    }
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (!node.Scalar().empty() && node.Scalar().front() == '-') {
        throw ConfigError(ConfigErrorKind::type_mismatch, path,
                          "expected a non-negative integer, got '" + node.Scalar() + "'");
      }
    }
    try {
      return node.as<T>();
    } catch (const YAML::BadConversion&) {
      throw ConfigError(ConfigErrorKind::type_mismatch, path,
                        "cannot read '" + node.Scalar() + "' as the expected type");
    }
  }
}

/// A mapping whose keys must all be consumed before `finish`.
class Section {
 public:
  Section(const YAML::Node& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.IsMap()) {
      throw ConfigError(ConfigErrorKind::type_mismatch, path_.empty() ? "<root>" : path_,
                        "expected a mapping");
    }
  }

  std::string key_path(std::string_view key) const {
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }

  bool has(std::string_view key) {
    seen_.emplace(key);
    return static_cast<bool>(node_[std::string(key)]);
  }

  template <typename T>
  std::optional<T> optional(std::string_view key) {
    if (!has(key)) return std::nullopt;
    return convert<T>(node_[std::string(key)], key_path(key));
  }

  template <typename T>
  T get(std::string_view key, T fallback) {
    auto v = optional<T>(key);
    return v ? std::move(*v) : std::move(fallback);
  }

  template <typename T>
  T required(std::string_view key) {
    auto v = optional<T>(key);
    if (!v) throw ConfigError(ConfigErrorKind::missing_field, key_path(key), "required");
    return std::move(*v);
  }

  std::optional<Section> section(std::string_view key) {
    if (!has(key)) return std::nullopt;
    return Section(node_[std::string(key)], key_path(key));
  }

  void finish() const {
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.count(key)) {
        throw ConfigError(ConfigErrorKind::unknown_key, key_path(key), "unknown key");
      }
    }
  }

 private:
  const YAML::Node node_;
  std::string path_;
  std::set<std::string, std::less<>> seen_;
};

void require(bool ok, const Section& s, std::string_view key, const std::string& what) {
  if (!ok) throw ConfigError(ConfigErrorKind::out_of_range, s.key_path(key), what);
}

template <typename Parse>
auto parse_named(Section& s, std::string_view key, std::string_view fallback, Parse parse) {
  const auto name = s.get<std::string>(key, std::string(fallback));
  try {
    return parse(name);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(ConfigErrorKind::invalid_value, s.key_path(key), e.what());
  }
}

std::filesystem::path existing_path(Section& s, std::string_view key,
                                    const std::filesystem::path& base_dir) {
  std::filesystem::path p = s.required<std::string>(key);
  if (p.is_relative()) p = base_dir / p;
  if (!std::filesystem::exists(p)) {
    throw ConfigError(ConfigErrorKind::file_not_found, s.key_path(key),
                      "no such file: " + p.string());
  }
  return p;
}

FileSpec parse_file_spec(Section s, const std::filesystem::path& base_dir) {
  FileSpec f;
  f.format = parse_named(s, "format", "csv", parse_data_format);
  f.path = existing_path(s, "path", base_dir);
  if (f.format == DataFormat::idx) {
    f.options.labels_path = existing_path(s, "labels", base_dir);
  } else if (s.has("labels")) {
    throw ConfigError(ConfigErrorKind::invalid_value, s.key_path("labels"),
                      "only idx datasets take a separate labels file");
  }
  if (auto k = s.optional<int>("num_classes")) {
    require(*k >= 2, s, "num_classes", "must be >= 2");
    f.options.num_classes = *k;
  }
  if (auto n = s.optional<std::size_t>("subsample")) {
    require(*n >= 1, s, "subsample", "must be >= 1");
    f.subsample = *n;
  }
  f.subsample_seed = s.get<std::uint64_t>("subsample_seed", 0);
  s.finish();
  return f;
}

SyntheticSpec parse_synthetic(Section s) {
  SyntheticSpec spec;
  spec.num_classes = s.required<int>("num_classes");
  require(spec.num_classes >= 2, s, "num_classes", "must be >= 2");
  spec.dim = s.get<int>("dim", spec.dim);
  require(spec.dim >= 1, s, "dim", "must be >= 1");
  spec.radius = s.get<double>("radius", spec.radius);
  spec.sigma = s.get<double>("sigma", spec.sigma);
  require(spec.sigma > 0.0, s, "sigma", "must be positive");
  if (auto rows = s.optional<std::vector<std::vector<double>>>("means")) {
    require(static_cast<int>(rows->size()) == spec.num_classes, s, "means",
            "needs one row per class");
    Eigen::MatrixXd m(spec.num_classes, spec.dim);
    for (int c = 0; c < spec.num_classes; ++c) {
      require(static_cast<int>((*rows)[c].size()) == spec.dim, s, "means",
              "row " + std::to_string(c) + " must have dim entries");
      for (int j = 0; j < spec.dim; ++j) m(c, j) = (*rows)[c][j];
    }
    spec.means = m;
  }
  const auto k = static_cast<std::size_t>(spec.num_classes);
  spec.n_unlabeled = s.required<std::size_t>("n_unlabeled");
  require(spec.n_unlabeled >= k, s, "n_unlabeled", "must be >= num_classes");
  spec.n_validation = s.required<std::size_t>("n_validation");
  require(spec.n_validation >= k, s, "n_validation", "must be >= num_classes");
  spec.n_test = s.get<std::size_t>("n_test", 0);
  require(spec.n_test == 0 || spec.n_test >= k, s, "n_test", "must be 0 or >= num_classes");
  spec.seed = s.get<std::uint64_t>("seed", 0);
  s.finish();
  return spec;
}

DatasetSpec parse_dataset(Section s, const std::filesystem::path& base_dir) {
  auto synthetic = s.section("synthetic");
  auto files = s.section("files");
  if (synthetic && files) {
    throw ConfigError(ConfigErrorKind::invalid_value, s.key_path("files"),
                      "give either 'synthetic' or 'files', not both");
  }
  DatasetSpec spec;
  if (synthetic) {
    spec = parse_synthetic(*synthetic);
  } else if (files) {
    FileSources src;
    auto unlabeled = files->section("unlabeled");
    if (!unlabeled) {
      throw ConfigError(ConfigErrorKind::missing_field, files->key_path("unlabeled"), "required");
    }
    src.unlabeled = parse_file_spec(*unlabeled, base_dir);
    auto validation = files->section("validation");
    if (!validation) {
      throw ConfigError(ConfigErrorKind::missing_field, files->key_path("validation"),
                        "required");
    }
    src.validation = parse_file_spec(*validation, base_dir);
    if (auto test = files->section("test")) src.test = parse_file_spec(*test, base_dir);
    files->finish();
    spec = src;
  } else {
    throw ConfigError(ConfigErrorKind::missing_field, s.key_path("synthetic"),
                      "dataset needs a 'synthetic' or 'files' section");
  }
  s.finish();
  return spec;
}

void parse_train(Section s, TrainConfig& t) {
  t.method = parse_named(s, "method", to_string(t.method), parse_train_method);
  t.learning_rate = s.get<double>("learning_rate", t.learning_rate);
  require(t.learning_rate > 0.0, s, "learning_rate", "must be positive");
  t.momentum = s.get<double>("momentum", t.momentum);
  require(t.momentum >= 0.0 && t.momentum < 1.0, s, "momentum", "must lie in [0,1)");
  t.weight_decay = s.get<double>("weight_decay", t.weight_decay);
  require(t.weight_decay >= 0.0, s, "weight_decay", "must be >= 0");
  t.batch_size = s.get<std::size_t>("batch_size", t.batch_size);
  require(t.batch_size >= 1, s, "batch_size", "must be >= 1");
  t.max_epochs = s.get<int>("epochs", t.max_epochs);
  require(t.max_epochs >= 1, s, "epochs", "must be >= 1");
  s.finish();
}

void parse_colander(Section s, ColanderConfig& c) {
  c.lambda = s.get<double>("lambda", c.lambda);
  require(c.lambda > 0.0, s, "lambda", "must be positive");
  c.alpha = s.get<double>("alpha", c.alpha);
  require(c.alpha > 0.0, s, "alpha", "must be positive");
  c.learning_rate = s.get<double>("learning_rate", c.learning_rate);
  require(c.learning_rate > 0.0, s, "learning_rate", "must be positive");
  c.weight_decay = s.get<double>("weight_decay", c.weight_decay);
  require(c.weight_decay >= 0.0, s, "weight_decay", "must be >= 0");
  c.batch_size = s.get<std::size_t>("batch_size", c.batch_size);
  require(c.batch_size >= 1, s, "batch_size", "must be >= 1");
  c.max_epochs = s.get<int>("epochs", c.max_epochs);
  require(c.max_epochs >= 1, s, "epochs", "must be >= 1");
  c.denom_epsilon = s.get<double>("denom_epsilon", c.denom_epsilon);
  require(c.denom_epsilon > 0.0, s, "denom_epsilon", "must be positive");
  s.finish();
}

void parse_posthoc(Section s, PosthocConfig& p) {
  p.method = parse_named(s, "method", to_string(p.method), parse_confidence_kind);
  p.points_per_bin = s.get<std::size_t>("points_per_bin", p.points_per_bin);
  require(p.points_per_bin >= 1, s, "points_per_bin", "must be >= 1");
  if (auto t = s.section("temperature")) {
    p.temperature.learning_rate = t->get<double>("learning_rate", p.temperature.learning_rate);
    require(p.temperature.learning_rate > 0.0, *t, "learning_rate", "must be positive");
    p.temperature.max_epochs = t->get<int>("epochs", p.temperature.max_epochs);
    require(p.temperature.max_epochs >= 1, *t, "epochs", "must be >= 1");
    t->finish();
  }
  if (auto c = s.section("colander")) parse_colander(*c, p.colander);
  s.finish();
}

void parse_tbal(Section s, TbalConfig& t) {
  t.eps_a = s.get<double>("eps_a", t.eps_a);
  require(t.eps_a >= 0.0 && t.eps_a <= 1.0, s, "eps_a", "must lie in [0,1]");
  t.train_budget = s.get<std::size_t>("train_budget", t.train_budget);
  t.seed_size = s.get<std::size_t>("seed_size", t.seed_size);
  require(t.seed_size >= 1, s, "seed_size", "must be >= 1");
  require(t.seed_size <= t.train_budget, s, "seed_size", "must not exceed train_budget");
  t.query_batch = s.get<std::size_t>("query_batch", t.query_batch);
  require(t.query_batch >= 1, s, "query_batch", "must be >= 1");
  t.nu = s.get<double>("nu", t.nu);
  require(t.nu > 0.0 && t.nu < 1.0, s, "nu", "must lie in (0,1)");
  t.rho0 = s.get<double>("rho0", t.rho0);
  require(t.rho0 > 0.0 && t.rho0 <= 1.0, s, "rho0", "must lie in (0,1]");
  t.c1 = s.get<double>("c1", t.c1);
  require(t.c1 >= 0.0, s, "c1", "must be >= 0");
  const auto grid_points = s.optional<std::size_t>("grid_points");
  const auto grid = s.optional<std::vector<double>>("grid");
  if (grid_points && grid) {
    throw ConfigError(ConfigErrorKind::invalid_value, s.key_path("grid"),
                      "give either 'grid' or 'grid_points', not both");
  }
  if (grid_points) {
    require(*grid_points >= 1, s, "grid_points", "must be >= 1");
    t.grid = uniform_grid(*grid_points);
  }
  if (grid) {
    require(!grid->empty(), s, "grid", "must be non-empty");
    for (double v : *grid) require(v >= 0.0 && v <= 1.0, s, "grid", "values must lie in [0,1]");
    require(std::adjacent_find(grid->begin(), grid->end(), std::greater_equal<>()) == grid->end(),
            s, "grid", "must be strictly ascending");
    t.grid = *grid;
  }
  t.group_by = parse_named(s, "group_by", to_string(t.group_by), parse_group_by);
  t.hidden = s.get<std::vector<int>>("hidden", t.hidden);
  require(!t.hidden.empty(), s, "hidden", "needs at least one hidden layer");
  for (int h : t.hidden) require(h >= 1, s, "hidden", "widths must be >= 1");
  t.active_multiplier = s.get<std::size_t>("active_multiplier", t.active_multiplier);
  require(t.active_multiplier >= 1, s, "active_multiplier", "must be >= 1");
  t.max_rounds = s.get<int>("max_rounds", t.max_rounds);
  require(t.max_rounds >= 0, s, "max_rounds", "must be >= 0");
  if (auto train = s.section("train")) parse_train(*train, t.train);
  if (auto posthoc = s.section("posthoc")) parse_posthoc(*posthoc, t.posthoc);
  s.finish();
}

template <typename T, typename Check>
std::vector<T> grid_of(Section& s, std::string_view key, T fixed, Check ok,
                       const std::string& what) {
  auto values = s.get<std::vector<T>>(key, {fixed});
  require(!values.empty(), s, key, "grid must be non-empty");
  for (const auto& v : values) require(ok(v), s, key, what);
  return values;
}

HpoGrid parse_hpo(Section s, const TbalConfig& t, std::size_t repeats) {
  const auto positive = [](auto v) { return v > 0; };
  const auto non_negative = [](auto v) { return v >= 0; };
  HpoGrid g;
  g.holdout_size = s.get<std::size_t>("holdout_size", g.holdout_size);
  require(g.holdout_size >= 1, s, "holdout_size", "must be >= 1");
  g.runs = s.get<std::size_t>("runs", repeats);
  require(g.runs >= 1, s, "runs", "must be >= 1");
  g.tie_break_seed = s.get<std::uint64_t>("tie_break_seed", g.tie_break_seed);

  auto train = s.section("train");
  Section empty_train(YAML::Node(YAML::NodeType::Map), s.key_path("train"));
  auto& tr = train ? *train : empty_train;
  g.train_lr = grid_of(tr, "learning_rate", t.train.learning_rate, positive, "must be positive");
  g.train_batch_size =
      grid_of(tr, "batch_size", t.train.batch_size, positive, "must be >= 1");
  g.train_epochs = grid_of(tr, "epochs", t.train.max_epochs, positive, "must be >= 1");
  g.train_weight_decay =
      grid_of(tr, "weight_decay", t.train.weight_decay, non_negative, "must be >= 0");
  tr.finish();

  const auto& c = t.posthoc.colander;
  auto colander = s.section("colander");
  Section empty_colander(YAML::Node(YAML::NodeType::Map), s.key_path("colander"));
  auto& co = colander ? *colander : empty_colander;
  g.colander_lambda = grid_of(co, "lambda", c.lambda, positive, "must be positive");
  g.colander_alpha = grid_of(co, "alpha", c.alpha, positive, "must be positive");
  g.colander_lr = grid_of(co, "learning_rate", c.learning_rate, positive, "must be positive");
  g.colander_weight_decay =
      grid_of(co, "weight_decay", c.weight_decay, non_negative, "must be >= 0");
  g.colander_epochs = grid_of(co, "epochs", c.max_epochs, positive, "must be >= 1");
  g.colander_batch_size = grid_of(co, "batch_size", c.batch_size, positive, "must be >= 1");
  co.finish();

  auto temperature = s.section("temperature");
  Section empty_temperature(YAML::Node(YAML::NodeType::Map), s.key_path("temperature"));
  auto& te = temperature ? *temperature : empty_temperature;
  g.temperature_lr = grid_of(te, "learning_rate", t.posthoc.temperature.learning_rate, positive,
                             "must be positive");
  g.temperature_epochs =
      grid_of(te, "epochs", t.posthoc.temperature.max_epochs, positive, "must be >= 1");
  te.finish();

  auto histogram = s.section("histogram");
  Section empty_histogram(YAML::Node(YAML::NodeType::Map), s.key_path("histogram"));
  auto& hi = histogram ? *histogram : empty_histogram;
  g.points_per_bin =
      grid_of(hi, "points_per_bin", t.posthoc.points_per_bin, positive, "must be >= 1");
  hi.finish();

  s.finish();
  return g;
}

ExperimentConfig parse_root(const YAML::Node& root, const std::filesystem::path& base_dir) {
  if (!root || root.IsNull()) {
    throw ConfigError(ConfigErrorKind::missing_field, "dataset", "configuration is empty");
  }
  Section s(root, "");
  ExperimentConfig cfg;
  cfg.tbal.master_seed = s.get<std::uint64_t>("seed", 0);
  cfg.repeats = s.get<std::size_t>("repeats", cfg.repeats);
  require(cfg.repeats >= 1, s, "repeats", "must be >= 1");
  if (auto out = s.optional<std::string>("output_dir")) {
    std::filesystem::path p = *out;
    cfg.output_dir = p.is_relative() ? base_dir / p : p;
  }
  cfg.score_dumps = s.get<bool>("score_dumps", cfg.score_dumps);
  cfg.include_timing = s.get<bool>("include_timing", cfg.include_timing);

  auto dataset = s.section("dataset");
  if (!dataset) throw ConfigError(ConfigErrorKind::missing_field, "dataset", "required");
  cfg.dataset = parse_dataset(*dataset, base_dir);
  if (auto t = s.section("tbal")) parse_tbal(*t, cfg.tbal);
  try {
    cfg.tbal.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(ConfigErrorKind::out_of_range, "tbal", e.what());
  }
  if (auto h = s.section("hpo")) cfg.hpo = parse_hpo(*h, cfg.tbal, cfg.repeats);
  s.finish();
  return cfg;
}

}  // namespace

ExperimentConfig parse_config_text(std::string_view text, const std::filesystem::path& base_dir) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(ConfigErrorKind::syntax, "<root>", e.what());
  }
  return parse_root(root, base_dir);
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(ConfigErrorKind::file_not_found, "<file>", path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str(), path.parent_path().empty() ? "." : path.parent_path());
}

ExperimentData load_experiment_data(const DatasetSpec& spec) {
  if (const auto* syn = std::get_if<SyntheticSpec>(&spec)) {
    const SeedStream root(syn->seed);
    const auto means = syn->class_means();
    auto draw = [&](std::size_t n, std::string_view tag) {
      return synth_gaussian_mixture(syn->num_classes, syn->dim, means, syn->sigma, n,
                                    root.derive(tag));
    };
    ExperimentData out{draw(syn->n_unlabeled, "unlabeled"), draw(syn->n_validation, "validation"),
                       std::nullopt};
    if (syn->n_test > 0) out.test = draw(syn->n_test, "test");
    return out;
  }
  const auto& files = std::get<FileSources>(spec);
  auto load = [](const FileSpec& f) {
    auto data = load_dataset(f.path, f.format, f.options);
    if (!f.subsample) return data;
    if (*f.subsample > data.size()) {
      throw std::invalid_argument(f.path.string() + ": subsample of " +
                                  std::to_string(*f.subsample) + " exceeds " +
                                  std::to_string(data.size()) + " rows");
    }
    std::vector<std::size_t> all(data.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::vector<std::size_t> kept;
    auto rng = SeedStream(f.subsample_seed).derive("subsample").engine();
    std::sample(all.begin(), all.end(), std::back_inserter(kept), *f.subsample, rng);
    return data.subset(kept);
  };
  ExperimentData out{load(files.unlabeled), load(files.validation), std::nullopt};
  if (files.test) out.test = load(*files.test);
  return out;
}

}  // namespace tbal
