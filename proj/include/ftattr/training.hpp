#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ftattr/data.hpp"
#include "ftattr/model.hpp"

namespace ftattr {

enum class OptimizerKind { sgd, adam, adamw };
enum class CheckpointUnit { epochs, steps };

std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);

struct TrainPlan {
  OptimizerKind optimizer = OptimizerKind::sgd;
  double lr = 0.01;
  std::size_t epochs = 0;
  std::size_t batch_size = 128;
  std::uint64_t shuffle_seed = 0;
  double weight_decay = 0.0;
  // 0 records only the final point.
  std::size_t checkpoint_every = 0;
  CheckpointUnit checkpoint_unit = CheckpointUnit::epochs;

  void validate() const;
  // Number of mini-batches per epoch, ceil(n / B); the last partial batch is kept.
  std::size_t batches_per_epoch(std::size_t n) const { return (n + batch_size - 1) / batch_size; }
  // Default further-training plan: same plan with the learning rate divided by 10.
  TrainPlan further_training() const;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

struct OptimizerState {
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
  std::size_t steps = 0;
};

// Instance order for one epoch: a permutation that depends only on
// (n, epoch, seed).
std::vector<std::size_t> shuffle_order(std::size_t n, std::size_t epoch, std::uint64_t seed);

// One optimizer update of params from gradient g.
// SGD: theta -= lr * (g + wd * theta). Adam: bias-corrected moments with
// coupled L2 (wd * theta added to g). AdamW: theta *= (1 - lr * wd) before
// the Adam update.
void apply_update(Eigen::VectorXd& params, const Eigen::VectorXd& g, OptimizerState& state, const TrainPlan& plan);

// Gradient of the per-batch objective: mean loss over `batch`, minus
// L(z_loo) / n when leaving out instance `loo`. Returns the objective value.
double batch_objective(const ModelState& m, const Dataset& ds, std::span<const std::size_t> batch,
                       std::optional<std::size_t> loo, Eigen::VectorXd& grad_out);

// Computes the batch objective gradient and applies one update; returns the objective.
double step(ModelState& m, const Dataset& ds, std::span<const std::size_t> batch, std::optional<std::size_t> loo,
            OptimizerState& state, const TrainPlan& plan);

using CheckpointEvaluator = std::function<std::vector<double>(const ModelState&)>;

struct Checkpoint {
  std::size_t step = 0;   // optimizer steps completed
  std::size_t epoch = 0;  // epochs completed
  std::optional<ModelState> state;
  std::vector<double> values;  // evaluator output, when one is given
};

struct Trajectory {
  std::vector<Checkpoint> checkpoints;  // strictly increasing steps
  ModelState final_state;
  std::vector<double> epoch_objective;  // mean batch objective per epoch
};

struct TrainOptions {
  CheckpointEvaluator evaluator;  // optional
  bool keep_states = false;
};

// Runs plan.epochs epochs of mini-batch updates in shuffle_order. With `loo`
// set, instance loo stays in its mini-batch and every batch objective
// subtracts L(z_loo)/n. Throws DivergedError (carrying the step) if the
// objective or parameters become non-finite.
Trajectory train(const ModelState& init, const Dataset& ds, const TrainPlan& plan,
                 std::optional<std::size_t> loo = std::nullopt, const TrainOptions& options = {});

}  // namespace ftattr
