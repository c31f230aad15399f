#include "ftattr/training.hpp"

#include <cmath>

#include "ftattr/error.hpp"
#include "ftattr/rng.hpp"

namespace ftattr {

std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd:
      return "sgd";
    case OptimizerKind::adam:
      return "adam";
    case OptimizerKind::adamw:
      return "adamw";
  }
  return "sgd";
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  if (s == "adamw") return OptimizerKind::adamw;
  throw ValidationError("unknown optimizer '" + s + "'");
}

void TrainPlan::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("train plan: lr must be > 0");
  if (batch_size < 1) throw ValidationError("train plan: batch_size must be >= 1");
  if (!(weight_decay >= 0.0)) throw ValidationError("train plan: weight_decay must be >= 0");
}

TrainPlan TrainPlan::further_training() const {
  TrainPlan p = *this;
  p.lr = lr / 10.0;
  return p;
}

std::vector<std::size_t> shuffle_order(std::size_t n, std::size_t epoch, std::uint64_t seed) {
  CounterRng rng(derive_key(seed, {rng_tag::kShuffle, static_cast<std::uint64_t>(epoch)}));
  return random_permutation(n, rng);
}

void apply_update(Eigen::VectorXd& params, const Eigen::VectorXd& g, OptimizerState& state, const TrainPlan& plan) {
  ++state.steps;
  if (plan.optimizer == OptimizerKind::sgd) {
    if (plan.weight_decay != 0.0) {
      params -= plan.lr * (g + plan.weight_decay * params);
    } else {
      params -= plan.lr * g;
    }
    return;
  }
  if (state.first_moment.size() != params.size()) {
    state.first_moment = Eigen::VectorXd::Zero(params.size());
    state.second_moment = Eigen::VectorXd::Zero(params.size());
  }
  Eigen::VectorXd eff = g;
  if (plan.optimizer == OptimizerKind::adamw) {
    params *= (1.0 - plan.lr * plan.weight_decay);
  } else if (plan.weight_decay != 0.0) {
    eff += plan.weight_decay * params;
  }
  state.first_moment = kAdamBeta1 * state.first_moment + (1.0 - kAdamBeta1) * eff;
  state.second_moment = kAdamBeta2 * state.second_moment + (1.0 - kAdamBeta2) * eff.cwiseAbs2();
  const double t = static_cast<double>(state.steps);
  const double c1 = 1.0 - std::pow(kAdamBeta1, t);
  const double c2 = 1.0 - std::pow(kAdamBeta2, t);
  params.array() -= plan.lr * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + kAdamEps);
}

double batch_objective(const ModelState& m, const Dataset& ds, std::span<const std::size_t> batch,
                       std::optional<std::size_t> loo, Eigen::VectorXd& grad_out) {
  std::vector<std::size_t> rows(batch.begin(), batch.end());
  std::vector<double> weights(batch.size(), 1.0 / static_cast<double>(batch.size()));
  if (loo) {
    rows.push_back(*loo);
    weights.push_back(-1.0 / static_cast<double>(ds.size()));
  }
  return weighted_loss_and_grad(m, ds, rows, weights, grad_out);
}

double step(ModelState& m, const Dataset& ds, std::span<const std::size_t> batch, std::optional<std::size_t> loo,
            OptimizerState& state, const TrainPlan& plan) {
  Eigen::VectorXd g;
  const double objective = batch_objective(m, ds, batch, loo, g);
  apply_update(m.mutable_params(), g, state, plan);
  return objective;
}

Trajectory train(const ModelState& init, const Dataset& ds, const TrainPlan& plan, std::optional<std::size_t> loo,
                 const TrainOptions& options) {
  plan.validate();
  if (loo && *loo >= ds.size()) {
    throw ValidationError("train: left-out index out of range");
  }
  if (ds.size() == 0 && plan.epochs > 0) {
    throw ValidationError("train: empty dataset");
  }
  const std::size_t n = ds.size();
  const std::size_t per_epoch = plan.batches_per_epoch(n);
  const std::size_t total_steps = per_epoch * plan.epochs;

  Trajectory traj;
  ModelState model = init;
  OptimizerState opt;

  auto record = [&](std::size_t step_index, std::size_t epoch) {
    Checkpoint cp;
    cp.step = step_index;
    cp.epoch = epoch;
    if (options.evaluator) cp.values = options.evaluator(model);
    if (options.keep_states) cp.state = model;
    traj.checkpoints.push_back(std::move(cp));
  };
  auto due = [&](std::size_t step_index, bool epoch_end, std::size_t epoch) {
    if (step_index == total_steps) return true;
    if (plan.checkpoint_every == 0) return false;
    if (plan.checkpoint_unit == CheckpointUnit::steps) return step_index % plan.checkpoint_every == 0;
    return epoch_end && epoch % plan.checkpoint_every == 0;
  };

  if (total_steps == 0) {
    record(0, 0);
  }
  std::size_t step_index = 0;
  for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    const std::vector<std::size_t> order = shuffle_order(n, epoch, plan.shuffle_seed);
    double objective_sum = 0.0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t begin = b * plan.batch_size;
      const std::size_t end = std::min(n, begin + plan.batch_size);
      const std::span<const std::size_t> batch(order.data() + begin, end - begin);
      const double objective = step(model, ds, batch, loo, opt, plan);
      ++step_index;
      if (!std::isfinite(objective) || !model.params().allFinite()) {
        throw DivergedError("training diverged at step " + std::to_string(step_index), step_index);
      }
      objective_sum += objective;
      const bool epoch_end = (b + 1 == per_epoch);
      if (due(step_index, epoch_end, epoch + 1)) record(step_index, epoch_end ? epoch + 1 : epoch);
    }
    traj.epoch_objective.push_back(objective_sum / static_cast<double>(per_epoch));
  }
  traj.final_state = std::move(model);
  return traj;
}

}  // namespace ftattr
