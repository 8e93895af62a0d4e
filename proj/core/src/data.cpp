#include "tbal/data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace tbal {
namespace {

[[noreturn]] void fail(DataErrorKind kind, const std::string& what) {
  throw DataError(kind, what);
}

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(DataErrorKind::io, "cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

std::uint32_t read_be32(const std::vector<char>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
  if (bytes.size() < offset + 4) fail(DataErrorKind::truncated, path.string() + ": header truncated");
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
  }
  return v;
}

template <typename T>
T from_le(T value) {
  if constexpr (std::endian::native == std::endian::big) {
    auto raw = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
    std::reverse(raw.begin(), raw.end());
    return std::bit_cast<T>(raw);
  }
  return value;
}

int infer_classes(const std::vector<int>& labels, std::optional<int> given,
                  const std::string& where) {
  int max_label = -1;
  for (int y : labels) {
    if (y < 0) fail(DataErrorKind::label_out_of_range, where + ": negative label");
    max_label = std::max(max_label, y);
  }
  if (given) {
    if (max_label >= *given) {
      fail(DataErrorKind::label_out_of_range,
           where + ": label " + std::to_string(max_label) + " >= k=" + std::to_string(*given));
    }
    return *given;
  }
  return max_label + 1;
}

Dataset load_idx(const std::filesystem::path& images_path, const LoadOptions& options) {
  constexpr std::uint32_t kImageMagic = 0x00000803;
  constexpr std::uint32_t kLabelMagic = 0x00000801;

  if (options.labels_path.empty()) {
    fail(DataErrorKind::invalid_argument, "IDX input needs a labels file");
  }
  const auto images = read_file(images_path);
  if (read_be32(images, 0, images_path) != kImageMagic) {
    fail(DataErrorKind::bad_magic, images_path.string() + ": expected image magic 0x00000803");
  }
  const std::size_t n = read_be32(images, 4, images_path);
  const std::size_t rows = read_be32(images, 8, images_path);
  const std::size_t cols = read_be32(images, 12, images_path);
  const std::size_t d = rows * cols;
  if (images.size() < 16 + n * d) {
    fail(DataErrorKind::truncated, images_path.string() + ": pixel payload truncated");
  }

  const auto label_bytes = read_file(options.labels_path);
  if (read_be32(label_bytes, 0, options.labels_path) != kLabelMagic) {
    fail(DataErrorKind::bad_magic,
         options.labels_path.string() + ": expected label magic 0x00000801");
  }
  const std::size_t n_labels = read_be32(label_bytes, 4, options.labels_path);
  if (label_bytes.size() < 8 + n_labels) {
    fail(DataErrorKind::truncated, options.labels_path.string() + ": label payload truncated");
  }
  if (n_labels != n) {
    fail(DataErrorKind::row_count_mismatch,
         "IDX images hold " + std::to_string(n) + " rows but labels hold " +
             std::to_string(n_labels));
  }

  FeatureMatrix features(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const auto byte = static_cast<unsigned char>(images[16 + i * d + j]);
      features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          static_cast<float>(byte) / 255.0f;
    }
  }
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<unsigned char>(label_bytes[8 + i]);
  const int k = infer_classes(labels, options.num_classes, options.labels_path.string());
  return Dataset(std::move(features), std::move(labels), k);
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

Dataset load_csv(const std::filesystem::path& path, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) fail(DataErrorKind::io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) fail(DataErrorKind::parse, path.string() + ": missing header");
  const auto header = split_commas(line);
  if (header.size() < 2 || trim(header.back()) != "label") {
    fail(DataErrorKind::parse, path.string() + ": last header column must be `label`");
  }
  const std::size_t d = header.size() - 1;

  std::vector<float> values;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_commas(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (cells.size() != d + 1) fail(DataErrorKind::parse, where + ": wrong column count");
    for (std::size_t j = 0; j < d; ++j) {
      const auto cell = trim(cells[j]);
      float v = 0.0f;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size()) {
        fail(DataErrorKind::parse, where + ": bad feature value '" + std::string(cell) + "'");
      }
      values.push_back(v);
    }
    const auto cell = trim(cells[d]);
    long y = 0;
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), y);
    if (ec != std::errc() || ptr != cell.data() + cell.size()) {
      fail(DataErrorKind::parse, where + ": bad label '" + std::string(cell) + "'");
    }
    if (y < 0 || y > std::numeric_limits<int>::max()) {
      fail(DataErrorKind::label_out_of_range, where + ": label out of range");
    }
    labels.push_back(static_cast<int>(y));
  }
  const auto n = labels.size();
  FeatureMatrix features = Eigen::Map<FeatureMatrix>(values.data(), static_cast<Eigen::Index>(n),
                                                     static_cast<Eigen::Index>(d));
  const int k = infer_classes(labels, options.num_classes, path.string());
  return Dataset(std::move(features), std::move(labels), k);
}

std::filesystem::path sidecar(const std::filesystem::path& path, std::string_view suffix) {
  auto p = path;
  p += suffix;
  return p;
}

Dataset load_rawf32(const std::filesystem::path& path, const LoadOptions& options) {
  const auto meta_path = sidecar(path, ".meta");
  std::ifstream meta(meta_path);
  if (!meta) fail(DataErrorKind::io, "cannot open " + meta_path.string());
  std::optional<long long> n, d, k;
  std::string key;
  long long value = 0;
  while (meta >> key >> value) {
    if (key == "n") n = value;
    else if (key == "d") d = value;
    else if (key == "k") k = value;
    else fail(DataErrorKind::parse, meta_path.string() + ": unknown key " + key);
  }
  if (!meta.eof()) fail(DataErrorKind::parse, meta_path.string() + ": malformed line");
  if (!n || !d || !k || *n < 0 || *d <= 0 || *k <= 0) {
    fail(DataErrorKind::parse, meta_path.string() + ": needs positive n, d, k");
  }

  const auto bytes = read_file(path);
  const auto expected = static_cast<std::size_t>(*n * *d) * sizeof(float);
  if (bytes.size() < expected) fail(DataErrorKind::truncated, path.string() + ": payload truncated");
  if (bytes.size() > expected) {
    fail(DataErrorKind::row_count_mismatch, path.string() + ": payload larger than n*d");
  }
  FeatureMatrix features(*n, *d);
  for (Eigen::Index i = 0; i < features.size(); ++i) {
    float v = 0.0f;
    std::memcpy(&v, bytes.data() + static_cast<std::size_t>(i) * sizeof(float), sizeof(float));
    features.data()[i] = from_le(v);
  }

  const auto labels_path = sidecar(path, ".labels");
  const auto label_bytes = read_file(labels_path);
  if (label_bytes.size() % sizeof(std::uint32_t) != 0) {
    fail(DataErrorKind::truncated, labels_path.string() + ": partial label word");
  }
  if (label_bytes.size() / sizeof(std::uint32_t) != static_cast<std::size_t>(*n)) {
    fail(DataErrorKind::row_count_mismatch,
         labels_path.string() + ": label count differs from n=" + std::to_string(*n));
  }
  std::vector<int> labels(static_cast<std::size_t>(*n));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::uint32_t y = 0;
    std::memcpy(&y, label_bytes.data() + i * sizeof(y), sizeof(y));
    y = from_le(y);
    if (y >= static_cast<std::uint64_t>(*k)) {
      fail(DataErrorKind::label_out_of_range,
           labels_path.string() + ": label " + std::to_string(y) + " >= k=" + std::to_string(*k));
    }
    labels[i] = static_cast<int>(y);
  }
  if (options.num_classes && *options.num_classes != *k) {
    fail(DataErrorKind::invalid_argument, meta_path.string() + ": k disagrees with requested k");
  }
  return Dataset(std::move(features), std::move(labels), static_cast<int>(*k));
}

}  // namespace

std::string_view to_string(DataErrorKind kind) {
  switch (kind) {
    case DataErrorKind::io: return "io";
    case DataErrorKind::bad_magic: return "bad_magic";
    case DataErrorKind::truncated: return "truncated";
    case DataErrorKind::label_out_of_range: return "label_out_of_range";
    case DataErrorKind::row_count_mismatch: return "row_count_mismatch";
    case DataErrorKind::parse: return "parse";
    case DataErrorKind::invalid_argument: return "invalid_argument";
  }
  return "unknown";
}

DataError::DataError(DataErrorKind kind, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

Dataset::Dataset(FeatureMatrix features, std::vector<int> hidden_labels, int num_classes,
                 std::vector<std::uint64_t> ids)
    : features_(std::move(features)),
      hidden_labels_(std::move(hidden_labels)),
      num_classes_(num_classes),
      ids_(std::move(ids)) {
  const auto n = hidden_labels_.size();
  if (static_cast<std::size_t>(features_.rows()) != n) {
    fail(DataErrorKind::row_count_mismatch, "feature rows differ from label count");
  }
  if (num_classes_ < 1) fail(DataErrorKind::invalid_argument, "num_classes must be positive");
  for (int y : hidden_labels_) {
    if (y < 0 || y >= num_classes_) {
      fail(DataErrorKind::label_out_of_range, "label " + std::to_string(y) + " outside [0, k)");
    }
  }
  if (ids_.empty()) {
    ids_.resize(n);
    std::iota(ids_.begin(), ids_.end(), std::uint64_t{0});
  } else {
    if (ids_.size() != n) fail(DataErrorKind::row_count_mismatch, "id count differs from n");
    std::unordered_set<std::uint64_t> seen(ids_.begin(), ids_.end());
    if (seen.size() != n) fail(DataErrorKind::invalid_argument, "duplicate point ids");
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  FeatureMatrix f(static_cast<Eigen::Index>(indices.size()), features_.cols());
  std::vector<int> labels;
  std::vector<std::uint64_t> ids;
  labels.reserve(indices.size());
  ids.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto i = indices[r];
    f.row(static_cast<Eigen::Index>(r)) = features_.row(static_cast<Eigen::Index>(i));
    labels.push_back(hidden_labels_.at(i));
    ids.push_back(ids_[i]);
  }
  return Dataset(std::move(f), std::move(labels), num_classes_, std::move(ids));
}

Eigen::MatrixXd Dataset::gather(std::span<const std::size_t> indices) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(indices.size()), features_.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) =
        features_.row(static_cast<Eigen::Index>(indices[r])).cast<double>();
  }
  return out;
}

Eigen::MatrixXd Dataset::all_features() const { return features_.cast<double>(); }

Pool::Pool(std::vector<std::size_t> active) : active_(std::move(active)) {
  std::sort(active_.begin(), active_.end());
  if (std::adjacent_find(active_.begin(), active_.end()) != active_.end()) {
    throw std::invalid_argument("pool indices must be unique");
  }
}

Pool Pool::full(std::size_t n) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return Pool(std::move(all));
}

bool Pool::contains(std::size_t index) const {
  return std::binary_search(active_.begin(), active_.end(), index);
}

void Pool::remove(std::span<const std::size_t> indices) {
  std::vector<std::size_t> drop(indices.begin(), indices.end());
  std::sort(drop.begin(), drop.end());
  std::vector<std::size_t> kept;
  kept.reserve(active_.size());
  std::set_difference(active_.begin(), active_.end(), drop.begin(), drop.end(),
                      std::back_inserter(kept));
  if (kept.size() + drop.size() != active_.size()) {
    throw std::invalid_argument("pool removal of an index that is not active");
  }
  active_ = std::move(kept);
}

std::string_view to_string(LabelSource source) {
  return source == LabelSource::human ? "human" : "auto";
}

void LabeledSet::add(const LabeledEntry& entry) {
  if (!seen_.insert(entry.index).second) {
    throw std::invalid_argument("point " + std::to_string(entry.index) +
                                " already present in labeled set");
  }
  entries_.push_back(entry);
}

void LabeledSet::append(const LabeledSet& other) {
  for (const auto& e : other.entries_) add(e);
}

std::vector<std::size_t> LabeledSet::indices() const {
  std::vector<std::size_t> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.index);
  return out;
}

std::vector<int> LabeledSet::labels() const {
  std::vector<int> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.label);
  return out;
}

std::size_t LabeledSet::count(LabelSource source) const {
  return static_cast<std::size_t>(std::count_if(
      entries_.begin(), entries_.end(), [&](const auto& e) { return e.source == source; }));
}

DataFormat parse_data_format(std::string_view name) {
  if (name == "idx") return DataFormat::idx;
  if (name == "csv") return DataFormat::csv;
  if (name == "rawf32") return DataFormat::rawf32;
  throw DataError(DataErrorKind::invalid_argument, "unknown data format '" + std::string(name) + "'");
}

std::string_view to_string(DataFormat format) {
  switch (format) {
    case DataFormat::idx: return "idx";
    case DataFormat::csv: return "csv";
    case DataFormat::rawf32: return "rawf32";
  }
  return "unknown";
}

Dataset load_dataset(const std::filesystem::path& path, DataFormat format,
                     const LoadOptions& options) {
  switch (format) {
    case DataFormat::idx: return load_idx(path, options);
    case DataFormat::csv: return load_csv(path, options);
    case DataFormat::rawf32: return load_rawf32(path, options);
  }
  fail(DataErrorKind::invalid_argument, "unknown format");
}

void write_rawf32(const std::filesystem::path& path, const Dataset& data) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(DataErrorKind::io, "cannot write " + path.string());
    const auto& f = data.features();
    for (Eigen::Index i = 0; i < f.size(); ++i) {
      const float v = from_le(f.data()[i]);
      out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  }
  {
    std::ofstream out(sidecar(path, ".labels"), std::ios::binary);
    if (!out) fail(DataErrorKind::io, "cannot write labels for " + path.string());
    for (int y : data.hidden_labels()) {
      const auto v = from_le(static_cast<std::uint32_t>(y));
      out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  }
  std::ofstream meta(sidecar(path, ".meta"));
  if (!meta) fail(DataErrorKind::io, "cannot write metadata for " + path.string());
  meta << "n " << data.size() << "\nd " << data.dim() << "\nk " << data.num_classes() << "\n";
}

void write_csv(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) fail(DataErrorKind::io, "cannot write " + path.string());
  for (std::size_t j = 0; j < data.dim(); ++j) out << "x" << j << ",";
  out << "label\n";
  char buf[32];
  const auto& f = data.features();
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    for (Eigen::Index j = 0; j < f.cols(); ++j) {
      const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), f(i, j));
      out.write(buf, ptr - buf);
      out << ',';
    }
    out << data.hidden_labels()[static_cast<std::size_t>(i)] << '\n';
  }
}

Dataset synth_gaussian_mixture(int num_classes, int dim, const Eigen::MatrixXd& means,
                               double sigma, std::size_t n, SeedStream seed) {
  if (!(sigma > 0.0)) fail(DataErrorKind::invalid_argument, "sigma must be positive");
  if (num_classes < 2) fail(DataErrorKind::invalid_argument, "need at least two classes");
  if (dim < 1) fail(DataErrorKind::invalid_argument, "dimension must be positive");
  if (n < static_cast<std::size_t>(num_classes)) {
    fail(DataErrorKind::invalid_argument, "need at least one point per class");
  }
  if (means.rows() != num_classes || means.cols() != dim) {
    fail(DataErrorKind::invalid_argument, "means must be k x d");
  }

  auto rng = seed.engine();
  std::normal_distribution<double> normal(0.0, 1.0);
  FeatureMatrix features(static_cast<Eigen::Index>(n), dim);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % static_cast<std::size_t>(num_classes));
    labels[i] = c;
    for (int j = 0; j < dim; ++j) {
      features(static_cast<Eigen::Index>(i), j) =
          static_cast<float>(means(c, j) + sigma * normal(rng));
    }
  }
  return Dataset(std::move(features), std::move(labels), num_classes);
}

QueryResult random_query(const Dataset& data, const Pool& pool, std::size_t n, int round,
                         SeedStream seed) {
  if (n > pool.size()) {
    throw std::invalid_argument("query of " + std::to_string(n) + " points exceeds pool of " +
                                std::to_string(pool.size()));
  }
  auto rng = seed.engine();
  std::vector<std::size_t> order = pool.active();
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(n);

  QueryResult result{LabeledSet{}, pool};
  for (auto i : order) {
    result.queried.add({i, data.oracle(i), LabelSource::human, round});
  }
  result.remaining.remove(order);
  return result;
}

std::size_t calibration_size(std::size_t total, double nu) {
  const auto raw = static_cast<std::size_t>(std::floor(nu * static_cast<double>(total) + 0.5));
  return std::clamp<std::size_t>(raw, 1, total - 1);
}

SplitResult random_split(const LabeledSet& validation, double nu, SeedStream seed) {
  if (validation.size() < 2) throw std::invalid_argument("split needs at least two points");
  if (!(nu > 0.0 && nu < 1.0)) throw std::invalid_argument("nu must lie in (0, 1)");
  const auto n_cal = calibration_size(validation.size(), nu);
  std::vector<std::size_t> order(validation.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = seed.engine();
  std::shuffle(order.begin(), order.end(), rng);

  SplitResult out;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto& e = validation.entries()[order[r]];
    (r < n_cal ? out.calibration : out.threshold).add(e);
  }
  return out;
}

}  // namespace tbal
