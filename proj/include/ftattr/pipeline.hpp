#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ftattr/attributors.hpp"
#include "ftattr/config.hpp"
#include "ftattr/data.hpp"
#include "ftattr/eval.hpp"
#include "ftattr/goldstd.hpp"
#include "ftattr/model.hpp"

namespace ftattr {

// Output layout below RunConfig::output.
struct OutputLayout {
  std::filesystem::path root;
  explicit OutputLayout(std::filesystem::path r) : root(std::move(r)) {}
  std::filesystem::path data() const { return root / "data"; }
  std::filesystem::path models() const { return root / "models"; }
  std::filesystem::path gold() const { return root / "gold"; }
  std::filesystem::path attributions() const { return root / "attributions"; }
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path init_model() const { return models() / "init.bin"; }
  std::filesystem::path final_model() const { return models() / "final.bin"; }
  std::filesystem::path gold_record() const { return gold() / "record.csv"; }
  std::filesystem::path gold_meta() const { return gold() / "record.json"; }
  std::filesystem::path attribution_csv(const std::string& name) const { return attributions() / (name + ".csv"); }
  std::filesystem::path attribution_meta(const std::string& name) const { return attributions() / (name + ".json"); }
};

// Deterministic data preparation shared by every command: load, split,
// standardize with training statistics, choose L and the test instances,
// then flip labels when configured.
struct PreparedData {
  Dataset train;
  Dataset test;
  EvalSubsets subsets;
  std::optional<std::vector<std::uint8_t>> flipped;  // one entry per training row
};

PreparedData prepare_data(const RunConfig& cfg);
Architecture architecture_for(const RunConfig& cfg, const Dataset& train);

// Attribution CSV with columns method,test_id,loo_id,score (ids are dataset
// ids), test-major in the order of the evaluation subsets.
void write_attributions_csv(const std::filesystem::path& path, const std::string& method,
                            const std::vector<AttributionVector>& vectors, const EvalSubsets& subsets,
                            const Dataset& train, const Dataset& test);
MethodScores read_attributions_csv(const std::filesystem::path& path, const Dataset& train, const Dataset& test);

// Runs one configured attributor for every test instance of the subsets.
std::vector<AttributionVector> run_attributor(const AttributionProblem& prob, const Dataset& test,
                                              const EvalSubsets& subsets, const AttributorConfig& a,
                                              std::size_t workers);

// Each command returns the process exit code: 0 success, 1 validation
// error, 2 numerical failure. Errors that stop a command are thrown; a
// failing attributor in cmd_attribute is recorded and the rest still run.
int cmd_train(const RunConfig& cfg, std::ostream& log);
int cmd_gold(const RunConfig& cfg, std::ostream& log);
int cmd_attribute(const RunConfig& cfg, std::ostream& log);
int cmd_report(const RunConfig& cfg, std::ostream& log);
int cmd_all(const RunConfig& cfg, std::ostream& log);

}  // namespace ftattr
