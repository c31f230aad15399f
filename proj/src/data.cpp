#include "ftattr/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "ftattr/error.hpp"
#include "ftattr/io.hpp"
#include "ftattr/rng.hpp"

namespace ftattr {

Dataset::Dataset(Eigen::MatrixXd features, Eigen::VectorXd targets, Task task, std::vector<std::int64_t> ids,
                 std::vector<std::string> feature_names)
    : features_(std::move(features)),
      targets_(std::move(targets)),
      task_(task),
      ids_(std::move(ids)),
      feature_names_(std::move(feature_names)) {
  if (features_.rows() != targets_.size()) {
    throw DimensionError("dataset: " + std::to_string(features_.rows()) + " feature rows but " +
                         std::to_string(targets_.size()) + " targets");
  }
  if (ids_.empty()) {
    ids_.resize(size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      ids_[i] = static_cast<std::int64_t>(i);
    }
  } else if (ids_.size() != size()) {
    throw DimensionError("dataset: ids length does not match row count");
  }
  if (feature_names_.empty()) {
    for (std::size_t j = 0; j < dim(); ++j) {
      feature_names_.push_back("x" + std::to_string(j));
    }
  } else if (feature_names_.size() != dim()) {
    throw DimensionError("dataset: feature name count does not match column count");
  }
  if (task_.is_classification()) {
    if (task_.num_classes < 2) {
      throw ValidationError("dataset: classification needs at least 2 classes");
    }
    for (Eigen::Index i = 0; i < targets_.size(); ++i) {
      const double y = targets_(i);
      if (y != std::floor(y) || y < 0 || y >= task_.num_classes) {
        throw ValidationError("dataset: class target out of range at row " + std::to_string(i));
      }
    }
  }
  if (!features_.allFinite() || !targets_.allFinite()) {
    throw ValidationError("dataset: non-finite value");
  }
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), features_.cols());
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  std::vector<std::int64_t> ids(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= size()) {
      throw DimensionError("dataset: subset index out of range");
    }
    const auto r = static_cast<Eigen::Index>(rows[k]);
    x.row(static_cast<Eigen::Index>(k)) = features_.row(r);
    y(static_cast<Eigen::Index>(k)) = targets_(r);
    ids[k] = ids_[rows[k]];
  }
  return Dataset(std::move(x), std::move(y), task_, std::move(ids), feature_names_);
}

Dataset Dataset::with_targets(Eigen::VectorXd targets) const {
  return Dataset(features_, std::move(targets), task_, ids_, feature_names_);
}

Dataset Dataset::with_features(Eigen::MatrixXd features) const {
  return Dataset(std::move(features), targets_, task_, ids_, feature_names_);
}

// ---- CSV -------------------------------------------------------------------

namespace {

bool parse_number(std::string_view s, double& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

enum class Role { numeric, categorical, target, id, ignored };

}  // namespace

Dataset parse_csv(std::string_view text, const CsvSchema& schema) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    try {
      rows.push_back(split_csv_line(line));
    } catch (const Error& e) {
      throw ParseError("csv line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
    line_numbers.push_back(line_no);
  }
  if (rows.empty()) {
    throw ParseError("csv: missing header row", 1);
  }
  const std::vector<std::string> header = rows.front();
  const std::size_t width = header.size();

  std::vector<Role> roles(width, Role::numeric);
  std::size_t target_col = width;
  for (std::size_t c = 0; c < width; ++c) {
    if (header[c] == schema.target) {
      roles[c] = Role::target;
      target_col = c;
    } else if (schema.id_column && header[c] == *schema.id_column) {
      roles[c] = Role::id;
    } else if (contains(schema.ignore, header[c])) {
      roles[c] = Role::ignored;
    } else if (contains(schema.categorical, header[c])) {
      roles[c] = Role::categorical;
    }
  }
  if (target_col == width) {
    throw ValidationError("csv: target column '" + schema.target + "' not in header");
  }
  for (const auto& name : schema.categorical) {
    if (!contains(header, name)) throw ValidationError("csv: categorical column '" + name + "' not in header");
  }

  const std::size_t n = rows.size() - 1;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != width) {
      throw ParseError("csv line " + std::to_string(line_numbers[r]) + ": expected " + std::to_string(width) +
                           " fields, found " + std::to_string(rows[r].size()),
                       line_numbers[r]);
    }
  }

  // Levels per categorical column.
  std::map<std::size_t, std::vector<std::string>> levels;
  for (std::size_t c = 0; c < width; ++c) {
    if (roles[c] != Role::categorical) continue;
    std::set<std::string> seen;
    for (std::size_t r = 1; r < rows.size(); ++r) seen.insert(rows[r][c]);
    levels[c] = {seen.begin(), seen.end()};
  }

  std::vector<std::string> names;
  for (std::size_t c = 0; c < width; ++c) {
    if (roles[c] == Role::numeric) {
      names.push_back(header[c]);
    } else if (roles[c] == Role::categorical) {
      for (const auto& level : levels[c]) names.push_back(header[c] + "=" + level);
    }
  }

  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(names.size()));
  std::vector<std::int64_t> ids;
  std::vector<std::string> raw_targets(n);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto i = static_cast<Eigen::Index>(r - 1);
    Eigen::Index col = 0;
    for (std::size_t c = 0; c < width; ++c) {
      const std::string& cell = rows[r][c];
      switch (roles[c]) {
        case Role::numeric: {
          double v = 0;
          if (!parse_number(cell, v)) {
            throw NonNumericError("csv line " + std::to_string(line_numbers[r]) + ": column '" + header[c] +
                                      "' has non-numeric value '" + cell + "'",
                                  line_numbers[r]);
          }
          x(i, col++) = v;
          break;
        }
        case Role::categorical:
          for (const auto& level : levels[c]) x(i, col++) = (cell == level) ? 1.0 : 0.0;
          break;
        case Role::target:
          raw_targets[r - 1] = cell;
          break;
        case Role::id: {
          double v = 0;
          if (!parse_number(cell, v) || v != std::floor(v)) {
            throw NonNumericError("csv line " + std::to_string(line_numbers[r]) + ": bad id '" + cell + "'",
                                  line_numbers[r]);
          }
          ids.push_back(static_cast<std::int64_t>(v));
          break;
        }
        case Role::ignored:
          break;
      }
    }
  }

  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  Task task = Task::regression();
  if (schema.task == TaskKind::regression) {
    for (std::size_t r = 0; r < n; ++r) {
      double v = 0;
      if (!parse_number(raw_targets[r], v)) {
        throw NonNumericError("csv line " + std::to_string(line_numbers[r + 1]) + ": non-numeric target '" +
                                  raw_targets[r] + "'",
                              line_numbers[r + 1]);
      }
      y(static_cast<Eigen::Index>(r)) = v;
    }
  } else {
    bool all_numeric = true;
    for (const auto& t : raw_targets) {
      double v = 0;
      all_numeric = all_numeric && parse_number(t, v);
    }
    std::vector<std::string> labels(raw_targets.begin(), raw_targets.end());
    if (all_numeric) {
      std::sort(labels.begin(), labels.end(), [](const std::string& a, const std::string& b) {
        double va = 0, vb = 0;
        parse_number(a, va);
        parse_number(b, vb);
        return va < vb;
      });
      labels.erase(std::unique(labels.begin(), labels.end(),
                               [](const std::string& a, const std::string& b) {
                                 double va = 0, vb = 0;
                                 parse_number(a, va);
                                 parse_number(b, vb);
                                 return va == vb;
                               }),
                   labels.end());
    } else {
      std::sort(labels.begin(), labels.end());
      labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    }
    for (std::size_t r = 0; r < n; ++r) {
      std::size_t k = 0;
      for (; k < labels.size(); ++k) {
        if (all_numeric) {
          double a = 0, b = 0;
          parse_number(labels[k], a);
          parse_number(raw_targets[r], b);
          if (a == b) break;
        } else if (labels[k] == raw_targets[r]) {
          break;
        }
      }
      y(static_cast<Eigen::Index>(r)) = static_cast<double>(k);
    }
    task = Task::classification(std::max<int>(2, static_cast<int>(labels.size())));
  }
  return Dataset(std::move(x), std::move(y), task, std::move(ids), std::move(names));
}

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  return parse_csv(read_text_file(path), schema);
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& ds) {
  std::ostringstream out;
  for (const auto& name : ds.feature_names()) out << name << ',';
  out << "target,id\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < ds.dim(); ++j) {
      out << format_double(ds.features()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) << ',';
    }
    out << format_double(ds.target(i)) << ',' << ds.ids()[i] << '\n';
  }
  write_text_file(path, out.str());
}

// ---- standardization -------------------------------------------------------

StandardizationStats fit_standardization(const Eigen::MatrixXd& features, std::span<const std::size_t> rows) {
  if (rows.empty()) {
    throw ValidationError("standardize: empty reference set");
  }
  const Eigen::Index d = features.cols();
  StandardizationStats stats{Eigen::VectorXd::Zero(d), Eigen::VectorXd::Zero(d)};
  const double count = static_cast<double>(rows.size());
  for (std::size_t r : rows) stats.mean += features.row(static_cast<Eigen::Index>(r)).transpose();
  stats.mean /= count;
  Eigen::VectorXd var = Eigen::VectorXd::Zero(d);
  for (std::size_t r : rows) {
    var += (features.row(static_cast<Eigen::Index>(r)).transpose() - stats.mean).cwiseAbs2();
  }
  var /= count;
  for (Eigen::Index j = 0; j < d; ++j) {
    const double sd = std::sqrt(var(j));
    stats.scale(j) = (sd <= 1e-12 * std::max(1.0, std::abs(stats.mean(j)))) ? 0.0 : sd;
  }
  return stats;
}

Eigen::MatrixXd apply_standardization(const Eigen::MatrixXd& features, const StandardizationStats& stats) {
  Eigen::MatrixXd out(features.rows(), features.cols());
  for (Eigen::Index j = 0; j < features.cols(); ++j) {
    if (stats.scale(j) == 0.0) {
      out.col(j).setZero();
    } else {
      out.col(j) = (features.col(j).array() - stats.mean(j)) / stats.scale(j);
    }
  }
  return out;
}

Eigen::MatrixXd invert_standardization(const Eigen::MatrixXd& standardized, const StandardizationStats& stats) {
  Eigen::MatrixXd out(standardized.rows(), standardized.cols());
  for (Eigen::Index j = 0; j < standardized.cols(); ++j) {
    out.col(j) = standardized.col(j).array() * stats.scale(j) + stats.mean(j);
  }
  return out;
}

std::pair<Dataset, StandardizationStats> standardize(const Dataset& ds, std::span<const std::size_t> stats_from) {
  StandardizationStats stats = fit_standardization(ds.features(), stats_from);
  return {ds.with_features(apply_standardization(ds.features(), stats)), std::move(stats)};
}

// ---- split -----------------------------------------------------------------

TrainTestSplit split(const Dataset& ds, const SplitSpec& spec) {
  if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0)) {
    throw ValidationError("split: test_fraction must lie in (0, 1)");
  }
  const std::size_t n = ds.size();
  // The epsilon keeps e.g. 10 * 0.9 from rounding up to 10.
  const auto n_train = static_cast<std::size_t>(std::ceil(static_cast<double>(n) * (1.0 - spec.test_fraction) - 1e-9));
  CounterRng rng(derive_key(spec.split_seed, {rng_tag::kSplit}));
  const std::vector<std::size_t> perm = random_permutation(n, rng);
  TrainTestSplit out;
  out.train_indices.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.test_indices.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  std::sort(out.train_indices.begin(), out.train_indices.end());
  std::sort(out.test_indices.begin(), out.test_indices.end());
  out.train = ds.subset(out.train_indices);
  out.test = ds.subset(out.test_indices);
  return out;
}

// ---- synthetic -------------------------------------------------------------

SyntheticData make_synthetic(const SyntheticSpec& spec) {
  if (spec.n < 4 || spec.d < 1) {
    throw ValidationError("make_synthetic: need n >= 4 and d >= 1");
  }
  const auto n = static_cast<Eigen::Index>(spec.n);
  const auto d = static_cast<Eigen::Index>(spec.d);
  CounterRng rng(derive_key(spec.seed, {rng_tag::kSynthetic}));
  SyntheticData out;
  if (spec.kind == SyntheticKind::linear_regression) {
    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < d; ++j) x(i, j) = rng.normal();
    Eigen::VectorXd w(d);
    if (spec.w_star) {
      if (spec.w_star->size() != d) throw DimensionError("make_synthetic: w_star has wrong length");
      w = *spec.w_star;
    } else {
      for (Eigen::Index j = 0; j < d; ++j) w(j) = rng.normal();
    }
    Eigen::VectorXd y = x * w;
    if (spec.noise != 0.0) {
      for (Eigen::Index i = 0; i < n; ++i) y(i) += spec.noise * rng.normal();
    }
    out.data = Dataset(std::move(x), std::move(y), Task::regression());
    out.w_star = std::move(w);
  } else {
    out.class_means.resize(2, d);
    out.class_means.row(0).setConstant(-spec.separation);
    out.class_means.row(1).setConstant(spec.separation);
    Eigen::MatrixXd x(n, d);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index c = i % 2;
      y(i) = static_cast<double>(c);
      for (Eigen::Index j = 0; j < d; ++j) x(i, j) = out.class_means(c, j) + spec.noise * rng.normal();
    }
    out.data = Dataset(std::move(x), std::move(y), Task::classification(2));
  }
  return out;
}

// ---- label flips -----------------------------------------------------------

Dataset apply_flip(const Dataset& ds, std::span<const std::uint8_t> mask) {
  if (!ds.task().is_classification() || ds.task().num_classes != 2) {
    throw UnsupportedTaskError("flip_labels: requires binary classification");
  }
  if (mask.size() != ds.size()) {
    throw DimensionError("flip_labels: mask length does not match dataset");
  }
  Eigen::VectorXd y = ds.targets();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) y(static_cast<Eigen::Index>(i)) = 1.0 - y(static_cast<Eigen::Index>(i));
  }
  return ds.with_targets(std::move(y));
}

FlipResult flip_labels_among(const Dataset& ds, std::span<const std::size_t> candidates, double fraction,
                             std::uint64_t seed) {
  if (!ds.task().is_classification() || ds.task().num_classes != 2) {
    throw UnsupportedTaskError("flip_labels: requires binary classification");
  }
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw ValidationError("flip_labels: fraction must lie in [0, 1]");
  }
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(candidates.size())));
  CounterRng rng(derive_key(seed, {rng_tag::kFlip}));
  const std::vector<std::size_t> perm = random_permutation(candidates.size(), rng);
  std::vector<std::uint8_t> mask(ds.size(), 0);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t row = candidates[perm[k]];
    if (row >= ds.size()) throw DimensionError("flip_labels: candidate index out of range");
    mask[row] = 1;
  }
  Dataset flipped = apply_flip(ds, mask);
  return {std::move(flipped), std::move(mask)};
}

FlipResult flip_labels(const Dataset& ds, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> all(ds.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return flip_labels_among(ds, all, fraction, seed);
}

// ---- subsets ---------------------------------------------------------------

EvalSubsets choose_subsets(std::size_t n_train, std::size_t n_test, std::size_t l, std::size_t m,
                           std::uint64_t seed) {
  if (l < 2 || l > n_train) {
    throw ValidationError("subsets: need 2 <= l <= n_train (l=" + std::to_string(l) + ")");
  }
  if (m > n_test) {
    throw ValidationError("subsets: m exceeds the number of test instances");
  }
  if (n_test == 0) {
    throw ValidationError("subsets: empty test split");
  }
  EvalSubsets out;
  out.subset_seed = seed;
  CounterRng train_rng(derive_key(seed, {rng_tag::kSubset, 0}));
  auto perm = random_permutation(n_train, train_rng);
  out.train_subset.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(l));
  std::sort(out.train_subset.begin(), out.train_subset.end());
  const std::size_t mm = (m == 0) ? n_test : m;
  CounterRng test_rng(derive_key(seed, {rng_tag::kSubset, 1}));
  perm = random_permutation(n_test, test_rng);
  out.test_indices.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(mm));
  std::sort(out.test_indices.begin(), out.test_indices.end());
  return out;
}

}  // namespace ftattr
