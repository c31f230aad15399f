#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ftattr/data.hpp"
#include "ftattr/model.hpp"
#include "ftattr/training.hpp"

namespace ftattr {

// Evaluation values g(z_j, theta) for every (left-out run, seed, checkpoint,
// test instance). Runs 0..l-1 leave out loo_ids[run]; run l is the FULL run
// on all of D. Only g values are stored, never parameters.
struct GoldRunRecord {
  std::vector<std::size_t> loo_ids;           // training-split indices (the set L)
  std::vector<std::size_t> test_ids;          // test-split indices
  std::vector<std::size_t> checkpoint_steps;  // shared by every run
  std::size_t num_seeds = 0;
  TrainPlan plan;
  std::vector<double> values;

  std::size_t num_loo() const { return loo_ids.size(); }
  std::size_t num_tests() const { return test_ids.size(); }
  std::size_t num_checkpoints() const { return checkpoint_steps.size(); }
  std::size_t full_run() const { return loo_ids.size(); }
  std::size_t index(std::size_t run, std::size_t seed, std::size_t checkpoint, std::size_t test) const {
    return ((run * num_seeds + seed) * num_checkpoints() + checkpoint) * num_tests() + test;
  }
  double at(std::size_t run, std::size_t seed, std::size_t checkpoint, std::size_t test) const {
    return values[index(run, seed, checkpoint, test)];
  }
  double full(std::size_t seed, std::size_t checkpoint, std::size_t test) const {
    return at(full_run(), seed, checkpoint, test);
  }
  // Record restricted to the listed seeds (renumbered 0..).
  GoldRunRecord select_seeds(const std::vector<std::size_t>& seeds) const;
  void validate() const;
};

enum class Adjustment { mean_subtract, full_subtract };
std::string to_string(Adjustment a);
Adjustment parse_adjustment(const std::string& s);

// scores[t][j] is the length-l attribution vector aligned with loo_ids.
struct GoldScores {
  Adjustment adjustment = Adjustment::mean_subtract;
  std::vector<std::size_t> loo_ids;
  std::vector<std::size_t> test_ids;
  std::vector<std::size_t> checkpoint_steps;
  std::vector<std::vector<Eigen::VectorXd>> scores;
};

// Shuffle seed used by sweep seed s: derive_key(base, {s}). The FULL run and
// every left-out run of seed s share it, so they see the same instance order.
std::uint64_t sweep_shuffle_seed(std::uint64_t base, std::size_t seed_index);

struct SweepOptions {
  std::size_t workers = 1;
  // Called after each completed run with (completed, total).
  std::function<void(std::size_t, std::size_t)> progress;
};

// (l + 1) * r further-training runs from theta_f under plan, recording the
// test losses g(z_j) = L(z_j; theta) at every checkpoint. Iterates seeds
// outer, left-out index inner (FULL first). Any diverged run aborts the whole
// sweep with an error naming it.
GoldRunRecord run_gold_sweep(const ModelState& theta_f, const Dataset& train, const Dataset& test,
                             const EvalSubsets& subsets, const TrainPlan& plan, std::size_t num_seeds,
                             const SweepOptions& options = {});

// Leave-one-out re-training from scratch: identical machinery started at theta_0.
GoldRunRecord retrain_gold(const ModelState& theta_0, const Dataset& train, const Dataset& test,
                           const EvalSubsets& subsets, const TrainPlan& plan, std::size_t num_seeds,
                           const SweepOptions& options = {});

// a_i = (1/r) sum_s [ g(D_-i, s) - (1/l) sum_i' g(D_-i', s) ]
GoldScores adjust_mean_subtract(const GoldRunRecord& rec);
// v_i = (1/r) sum_s [ g(D_-i, s) - g(D, s) ]
GoldScores adjust_full_subtract(const GoldRunRecord& rec);
GoldScores adjust(const GoldRunRecord& rec, Adjustment adjustment);

// ---- persistence -----------------------------------------------------------

// CSV columns loo_id,seed,checkpoint,test_id,g_value (loo_id "FULL" for the
// full-data run; ids are the datasets' instance ids) plus a JSON sidecar with
// the grid axes and plan.
void write_gold_record(const std::filesystem::path& csv_path, const std::filesystem::path& meta_path,
                       const GoldRunRecord& rec, const Dataset& train, const Dataset& test);
GoldRunRecord read_gold_record(const std::filesystem::path& csv_path, const std::filesystem::path& meta_path,
                               const Dataset& train, const Dataset& test);
// One CSV per checkpoint: <dir>/<prefix>_step<step>.csv with columns test_id,loo_id,score.
std::vector<std::filesystem::path> write_gold_scores(const std::filesystem::path& dir, const std::string& prefix,
                                                     const GoldScores& scores, const Dataset& train,
                                                     const Dataset& test);

}  // namespace ftattr
