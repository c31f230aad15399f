#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace ftattr {

enum class TaskKind { regression, classification };

struct Task {
  TaskKind kind = TaskKind::regression;
  int num_classes = 0;  // 0 for regression

  static Task regression() { return {TaskKind::regression, 0}; }
  static Task classification(int classes) { return {TaskKind::classification, classes}; }
  bool is_classification() const { return kind == TaskKind::classification; }
  // Width of the model output layer.
  int output_dim() const { return is_classification() ? num_classes : 1; }
  bool operator==(const Task&) const = default;
};

// Feature matrix (n x d), targets and per-row ids. Immutable once built; the
// constructor enforces the invariants.
class Dataset {
 public:
  Dataset() = default;
  Dataset(Eigen::MatrixXd features, Eigen::VectorXd targets, Task task, std::vector<std::int64_t> ids = {},
          std::vector<std::string> feature_names = {});

  std::size_t size() const { return static_cast<std::size_t>(features_.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(features_.cols()); }
  const Eigen::MatrixXd& features() const { return features_; }
  const Eigen::VectorXd& targets() const { return targets_; }
  const Task& task() const { return task_; }
  const std::vector<std::int64_t>& ids() const { return ids_; }
  const std::vector<std::string>& feature_names() const { return feature_names_; }

  Eigen::VectorXd row(std::size_t i) const { return features_.row(static_cast<Eigen::Index>(i)).transpose(); }
  double target(std::size_t i) const { return targets_(static_cast<Eigen::Index>(i)); }

  // Rows in the given order; ids carried over.
  Dataset subset(std::span<const std::size_t> rows) const;
  Dataset with_targets(Eigen::VectorXd targets) const;
  Dataset with_features(Eigen::MatrixXd features) const;

 private:
  Eigen::MatrixXd features_;
  Eigen::VectorXd targets_;
  Task task_;
  std::vector<std::int64_t> ids_;
  std::vector<std::string> feature_names_;
};

// ---- CSV ingestion ---------------------------------------------------------

struct CsvSchema {
  std::string target;
  TaskKind task = TaskKind::regression;
  std::vector<std::string> categorical;  // dummy-coded, one column per level
  std::vector<std::string> ignore;
  std::optional<std::string> id_column;  // integer ids; row order otherwise
};

// Header row required. Categorical levels are sorted lexicographically and
// fully one-hot encoded as "<column>=<level>". Classification targets are
// mapped to class indices in sorted order of their distinct values (numeric
// order when every value is numeric).
Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema);
Dataset parse_csv(std::string_view text, const CsvSchema& schema);

// Writes the feature columns, then "target", then "id", at full precision.
void write_dataset_csv(const std::filesystem::path& path, const Dataset& ds);

// ---- preprocessing ---------------------------------------------------------

struct StandardizationStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;  // population std; 0 marks a constant column
};

// Statistics come from the rows in stats_from (population variance); the same
// affine map is applied to every row. Constant columns map to zero.
std::pair<Dataset, StandardizationStats> standardize(const Dataset& ds, std::span<const std::size_t> stats_from);
StandardizationStats fit_standardization(const Eigen::MatrixXd& features, std::span<const std::size_t> rows);
Eigen::MatrixXd apply_standardization(const Eigen::MatrixXd& features, const StandardizationStats& stats);
Eigen::MatrixXd invert_standardization(const Eigen::MatrixXd& standardized, const StandardizationStats& stats);

struct SplitSpec {
  double test_fraction = 0.1;
  std::uint64_t split_seed = 0;
};

struct TrainTestSplit {
  Dataset train;
  Dataset test;
  std::vector<std::size_t> train_indices;  // ascending
  std::vector<std::size_t> test_indices;   // ascending
};

// ceil(n * (1 - f)) rows go to train, the rest to test.
TrainTestSplit split(const Dataset& ds, const SplitSpec& spec);

// ---- synthetic data --------------------------------------------------------

enum class SyntheticKind { linear_regression, two_gaussians };

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::linear_regression;
  std::size_t n = 100;
  std::size_t d = 2;
  double noise = 0.1;
  std::uint64_t seed = 0;
  // linear_regression: weights; drawn N(0, 1) when absent.
  std::optional<Eigen::VectorXd> w_star;
  // two_gaussians: class c has mean (2c - 1) * separation * 1 and covariance noise^2 I.
  double separation = 1.0;
};

struct SyntheticData {
  Dataset data;
  Eigen::VectorXd w_star;        // linear_regression only
  Eigen::MatrixXd class_means;   // two_gaussians only, one row per class
};

SyntheticData make_synthetic(const SyntheticSpec& spec);

// ---- label corruption ------------------------------------------------------

struct FlipResult {
  Dataset data;
  std::vector<std::uint8_t> flipped;  // one entry per row
};

// Flips exactly round(fraction * n) binary labels chosen uniformly at random.
FlipResult flip_labels(const Dataset& ds, double fraction, std::uint64_t seed);
// Same, but only rows listed in candidates are eligible; the count is
// round(fraction * candidates.size()).
FlipResult flip_labels_among(const Dataset& ds, std::span<const std::size_t> candidates, double fraction,
                             std::uint64_t seed);
// Flips the binary labels marked in mask.
Dataset apply_flip(const Dataset& ds, std::span<const std::uint8_t> mask);

// ---- evaluation subsets ----------------------------------------------------

struct EvalSubsets {
  std::vector<std::size_t> train_subset;  // the attributed training instances (ascending)
  std::vector<std::size_t> test_indices;  // ascending
  std::uint64_t subset_seed = 0;
};

// Draws l training and m test indices without replacement. m = 0 selects
// every test instance.
EvalSubsets choose_subsets(std::size_t n_train, std::size_t n_test, std::size_t l, std::size_t m,
                           std::uint64_t seed);

}  // namespace ftattr
