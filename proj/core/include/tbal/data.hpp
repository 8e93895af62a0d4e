#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "tbal/rng.hpp"

namespace tbal {

using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class DataErrorKind {
  io,
  bad_magic,
  truncated,
  label_out_of_range,
  row_count_mismatch,
  parse,
  invalid_argument,
};

std::string_view to_string(DataErrorKind kind);

class DataError : public std::runtime_error {
 public:
  DataError(DataErrorKind kind, const std::string& what);
  DataErrorKind kind() const { return kind_; }

 private:
  DataErrorKind kind_;
};

/// Feature matrix plus the hidden ground truth that acts as the labeling
/// oracle. Immutable after construction.
class Dataset {
 public:
  Dataset() = default;
  /// ids default to 0..n-1.
  Dataset(FeatureMatrix features, std::vector<int> hidden_labels, int num_classes,
          std::vector<std::uint64_t> ids = {});

  std::size_t size() const { return hidden_labels_.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(features_.cols()); }
  int num_classes() const { return num_classes_; }

  const FeatureMatrix& features() const { return features_; }
  const std::vector<int>& hidden_labels() const { return hidden_labels_; }
  const std::vector<std::uint64_t>& ids() const { return ids_; }

  /// The noiseless oracle.
  int oracle(std::size_t index) const { return hidden_labels_.at(index); }

  /// Rows `indices` as a new dataset; ids are carried over.
  Dataset subset(std::span<const std::size_t> indices) const;

  /// Rows `indices` as a double matrix, in the given order.
  Eigen::MatrixXd gather(std::span<const std::size_t> indices) const;
  Eigen::MatrixXd all_features() const;

 private:
  FeatureMatrix features_;
  std::vector<int> hidden_labels_;
  int num_classes_ = 0;
  std::vector<std::uint64_t> ids_;
};

/// Indices of the points still awaiting a label. Kept sorted ascending.
class Pool {
 public:
  Pool() = default;
  explicit Pool(std::vector<std::size_t> active);
  static Pool full(std::size_t n);

  const std::vector<std::size_t>& active() const { return active_; }
  std::size_t size() const { return active_.size(); }
  bool empty() const { return active_.empty(); }
  bool contains(std::size_t index) const;

  /// Removes every listed index; all of them must be present.
  void remove(std::span<const std::size_t> indices);

 private:
  std::vector<std::size_t> active_;
};

enum class LabelSource { human, automatic };

std::string_view to_string(LabelSource source);

struct LabeledEntry {
  std::size_t index = 0;
  int label = 0;
  LabelSource source = LabelSource::human;
  int round = 0;

  friend bool operator==(const LabeledEntry&, const LabeledEntry&) = default;
};

class LabeledSet {
 public:
  LabeledSet() = default;

  /// Throws std::invalid_argument when `entry.index` is already present.
  void add(const LabeledEntry& entry);
  void append(const LabeledSet& other);

  const std::vector<LabeledEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  bool contains(std::size_t index) const { return seen_.contains(index); }

  std::vector<std::size_t> indices() const;
  std::vector<int> labels() const;
  std::size_t count(LabelSource source) const;

 private:
  std::vector<LabeledEntry> entries_;
  std::unordered_set<std::size_t> seen_;
};

enum class DataFormat { idx, csv, rawf32 };

DataFormat parse_data_format(std::string_view name);
std::string_view to_string(DataFormat format);

struct LoadOptions {
  /// IDX only: the companion label file.
  std::filesystem::path labels_path;
  /// When unset, inferred as max(label)+1 (rawf32 reads it from metadata).
  std::optional<int> num_classes;
};

/// IDX: images (magic 0x00000803) + labels (0x00000801), big-endian; pixel
/// bytes are scaled to [0,1].
/// CSV: header row, feature columns, final integer `label` column.
/// rawf32: `path` holds little-endian f32 row-major features, `path.meta`
/// holds "n <int>", "d <int>", "k <int>" lines and `path.labels` holds
/// little-endian u32 labels.
Dataset load_dataset(const std::filesystem::path& path, DataFormat format,
                     const LoadOptions& options = {});

void write_rawf32(const std::filesystem::path& path, const Dataset& data);
void write_csv(const std::filesystem::path& path, const Dataset& data);

/// Point i belongs to class i mod k and is drawn from N(means[c], sigma^2 I).
Dataset synth_gaussian_mixture(int num_classes, int dim, const Eigen::MatrixXd& means,
                               double sigma, std::size_t n, SeedStream seed);

struct QueryResult {
  LabeledSet queried;
  Pool remaining;
};

/// Uniform sample of `n` pool points without replacement, labeled by the
/// oracle.
QueryResult random_query(const Dataset& data, const Pool& pool, std::size_t n, int round,
                         SeedStream seed);

struct SplitResult {
  LabeledSet calibration;
  LabeledSet threshold;
};

/// Calibration size is round-half-up(nu * |val|) clamped to [1, |val|-1].
SplitResult random_split(const LabeledSet& validation, double nu, SeedStream seed);

std::size_t calibration_size(std::size_t total, double nu);

}  // namespace tbal
