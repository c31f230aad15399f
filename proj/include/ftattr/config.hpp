#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ftattr/attributors.hpp"
#include "ftattr/data.hpp"
#include "ftattr/eval.hpp"
#include "ftattr/goldstd.hpp"
#include "ftattr/training.hpp"

namespace ftattr {

struct DatasetConfig {
  enum class Source { csv, synthetic } source = Source::synthetic;
  std::filesystem::path path;  // csv, resolved against the config file's directory
  CsvSchema schema;
  SyntheticSpec synthetic;
  bool standardize = true;  // statistics from the training split
  // Label noise on the binary classification training split.
  double flip_fraction = 0.0;
  std::uint64_t flip_seed = 0;
  bool flip_within_subset = true;  // flip only inside L
};

struct AttributorConfig {
  std::string name;    // output name, unique; defaults to method
  std::string method;  // grad_dot, grad_cos, influence, generalized_influence, trak, datainf
  double damping = kDefaultDamping;
  InfluenceConfig influence;
  GeneralizedVariant variant = GeneralizedVariant::exact_hessian_term;
  TrakConfig trak;
  DataInfConfig datainf;
};

struct RunConfig {
  std::filesystem::path source_path;  // config file, empty when built in code
  DatasetConfig dataset;
  SplitSpec split;
  std::vector<std::size_t> hidden = {128, 128};
  std::uint64_t init_seed = 0;
  TrainPlan train;          // A
  TrainPlan further_train;  // A'
  std::size_t l = 20;
  std::size_t m = 20;
  std::uint64_t subset_seed = 0;
  std::size_t seeds = 10;  // r
  Adjustment adjustment = Adjustment::mean_subtract;
  Metric metric = Metric::cosine;
  std::vector<std::size_t> seed_groups;  // empty: divisors of r
  std::size_t top_k = 5;
  std::vector<AttributorConfig> attributors;
  std::filesystem::path output = "ftattr_out";
  std::size_t workers = 1;

  // Throws ValidationError for every violated invariant, before any compute.
  void validate() const;
};

// Parses the JSON config; missing keys take the documented defaults.
RunConfig parse_config(const std::string& json_text, const std::filesystem::path& source_path = {});
RunConfig load_config(const std::filesystem::path& path);
// Canonical JSON form (sorted keys), also stored next to the outputs.
std::string config_to_json(const RunConfig& cfg);

std::vector<std::size_t> divisors(std::size_t r);

}  // namespace ftattr
