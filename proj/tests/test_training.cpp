#include <gtest/gtest.h>

#include <cmath>

#include "ftattr/error.hpp"
#include "ftattr/training.hpp"
#include "test_util.hpp"

using namespace ftattr;

TEST(TrainPlan, Validation) {
  TrainPlan p;
  EXPECT_NO_THROW(p.validate());
  p.lr = 0;
  EXPECT_THROW(p.validate(), ValidationError);
  p.lr = 0.1;
  p.batch_size = 0;
  EXPECT_THROW(p.validate(), ValidationError);
  p.batch_size = 4;
  p.weight_decay = -1;
  EXPECT_THROW(p.validate(), ValidationError);
  p.weight_decay = 0;
  EXPECT_EQ(p.batches_per_epoch(10), 3u);
  EXPECT_DOUBLE_EQ(p.further_training().lr, 0.01);
  EXPECT_EQ(parse_optimizer("adamw"), OptimizerKind::adamw);
  EXPECT_THROW(parse_optimizer("rmsprop"), ValidationError);
}

// Pinned with tests/oracles/prng_oracle.py.
TEST(ShuffleOrder, PinnedAndDeterministic) {
  EXPECT_EQ(shuffle_order(1, 0, 0), std::vector<std::size_t>{0});
  EXPECT_EQ(shuffle_order(8, 0, 0), (std::vector<std::size_t>{2, 4, 0, 1, 6, 7, 5, 3}));
  EXPECT_EQ(shuffle_order(8, 1, 0), (std::vector<std::size_t>{3, 7, 6, 1, 5, 0, 2, 4}));
  EXPECT_EQ(shuffle_order(50, 3, 9), shuffle_order(50, 3, 9));
  EXPECT_NE(shuffle_order(50, 3, 9), shuffle_order(50, 4, 9));
}

TEST(Update, SgdRules) {
  TrainPlan plan;
  plan.lr = 0.1;
  OptimizerState st;
  Eigen::VectorXd theta = Eigen::Vector2d(1.0, 1.0);
  apply_update(theta, Eigen::Vector2d::Zero(), st, plan);
  EXPECT_EQ(theta, Eigen::Vector2d(1.0, 1.0));
  apply_update(theta, Eigen::Vector2d(1.0, -2.0), st, plan);
  EXPECT_NEAR(theta(0), 0.9, 1e-15);
  EXPECT_NEAR(theta(1), 1.2, 1e-15);
}

TEST(Update, AdamFirstStepHandComputed) {
  TrainPlan plan;
  plan.optimizer = OptimizerKind::adam;
  plan.lr = 0.01;
  OptimizerState st;
  Eigen::VectorXd theta = Eigen::Vector2d(0.5, -0.5);
  const Eigen::Vector2d g(0.3, -2.0);
  apply_update(theta, g, st, plan);
  for (int k = 0; k < 2; ++k) {
    const double m = (1 - kAdamBeta1) * g(k), v = (1 - kAdamBeta2) * g(k) * g(k);
    const double mhat = m / (1 - kAdamBeta1), vhat = v / (1 - kAdamBeta2);
    const double expect = (k == 0 ? 0.5 : -0.5) - 0.01 * mhat / (std::sqrt(vhat) + kAdamEps);
    EXPECT_NEAR(theta(k), expect, 1e-15);
  }
  // First Adam step moves each coordinate by about lr against the gradient sign.
  EXPECT_NEAR(theta(0), 0.49, 1e-9);
  EXPECT_NEAR(theta(1), -0.49, 1e-9);
}

TEST(Update, AdamWDecouplesDecay) {
  TrainPlan adamw;
  adamw.optimizer = OptimizerKind::adamw;
  adamw.lr = 0.1;
  adamw.weight_decay = 0.5;
  TrainPlan adam = adamw;
  adam.optimizer = OptimizerKind::adam;
  OptimizerState s1, s2;
  Eigen::VectorXd a = Eigen::VectorXd::Constant(1, 2.0), b = a;
  apply_update(a, Eigen::VectorXd::Zero(1), s1, adamw);
  apply_update(b, Eigen::VectorXd::Zero(1), s2, adam);
  EXPECT_NEAR(a(0), 2.0 * (1 - 0.05), 1e-15);  // decay only, zero Adam step
  EXPECT_NEAR(b(0), 2.0 - 0.1, 1e-6);           // coupled L2 enters the moments
  TrainPlan sgd;
  sgd.lr = 0.1;
  sgd.weight_decay = 0.5;
  OptimizerState s3;
  Eigen::VectorXd c = Eigen::VectorXd::Constant(1, 2.0);
  apply_update(c, Eigen::VectorXd::Zero(1), s3, sgd);
  EXPECT_NEAR(c(0), 1.9, 1e-15);
}

TEST(BatchObjective, LooSubtraction) {
  const Dataset ds = testutil::regression_data(6, 2, 1);
  const ModelState m = testutil::random_model(Architecture::mlp(2, {3}, Task::regression()), 2);
  const auto all = testutil::iota(6);
  Eigen::VectorXd g;
  const double obj = batch_objective(m, ds, all, std::size_t{4}, g);
  // Single batch (B = n): mean gradient minus grad L(z_4) / n.
  const Eigen::VectorXd expect = grad(m, ds, all) / 6.0 - instance_grad(m, ds, 4) / 6.0;
  EXPECT_LT((g - expect).norm(), 1e-13);
  EXPECT_NEAR(obj, losses(m, ds, all).sum() / 6.0 - loss(m, ds.row(4), ds.target(4)) / 6.0, 1e-13);
  // Equivalently the weighted gradient of R(D_-i) over n.
  std::vector<double> w(6, 1.0 / 6.0);
  w[4] = 0.0;
  EXPECT_LT((g - grad(m, ds, all, w)).norm(), 1e-13);
  // A batch that does not contain the left-out instance still subtracts it.
  const std::vector<std::size_t> batch = {0, 1};
  batch_objective(m, ds, batch, std::size_t{4}, g);
  const Eigen::VectorXd expect2 = grad(m, ds, batch) / 2.0 - instance_grad(m, ds, 4) / 6.0;
  EXPECT_LT((g - expect2).norm(), 1e-13);
}

TEST(Train, ZeroEpochsReturnsInit) {
  const Dataset ds = testutil::regression_data(5, 2, 3);
  const ModelState init = ModelState::initialize(Architecture::mlp(2, {3}, Task::regression()), 4);
  TrainPlan plan;
  plan.epochs = 0;
  const Trajectory t = train(init, ds, plan);
  EXPECT_EQ(t.final_state.params(), init.params());
  ASSERT_EQ(t.checkpoints.size(), 1u);
  EXPECT_EQ(t.checkpoints[0].step, 0u);
}

TEST(Train, FullBatchConvergesToLeastSquares) {
  SyntheticSpec spec;
  spec.n = 20;
  spec.d = 1;
  spec.noise = 0.0;
  spec.w_star = Eigen::VectorXd::Constant(1, 2.0);
  const Dataset ds = make_synthetic(spec).data;
  TrainPlan plan;
  plan.lr = 0.5;
  plan.batch_size = 20;
  plan.epochs = 400;
  const Trajectory t = train(ModelState::zeros(Architecture::mlp(1, {}, Task::regression())), ds, plan);
  EXPECT_NEAR(t.final_state.params()(0), 2.0, 1e-6);
  EXPECT_NEAR(t.final_state.params()(1), 0.0, 1e-6);
}

TEST(Train, DeterminismAndSeedSensitivity) {
  const Dataset ds = testutil::regression_data(20, 3, 5);
  const ModelState init = ModelState::initialize(Architecture::mlp(3, {4}, Task::regression()), 6);
  TrainPlan plan;
  plan.lr = 0.05;
  plan.batch_size = 6;
  plan.epochs = 3;
  plan.shuffle_seed = 1;
  const Eigen::VectorXd a = train(init, ds, plan, std::size_t{3}).final_state.params();
  EXPECT_EQ(a, train(init, ds, plan, std::size_t{3}).final_state.params());
  plan.shuffle_seed = 2;
  EXPECT_NE(a, train(init, ds, plan, std::size_t{3}).final_state.params());
}

TEST(Train, CheckpointsAndPartialBatch) {
  const Dataset ds = testutil::regression_data(10, 2, 7);
  const ModelState init = ModelState::initialize(Architecture::mlp(2, {}, Task::regression()), 8);
  TrainPlan plan;
  plan.lr = 0.01;
  plan.batch_size = 4;  // 3 batches per epoch, the last of size 2
  plan.epochs = 4;
  plan.checkpoint_every = 2;
  TrainOptions opts;
  opts.keep_states = true;
  opts.evaluator = [](const ModelState& m) { return std::vector<double>{m.params()(0)}; };
  const Trajectory t = train(init, ds, plan, std::nullopt, opts);
  ASSERT_EQ(t.checkpoints.size(), 2u);
  EXPECT_EQ(t.checkpoints[0].step, 6u);
  EXPECT_EQ(t.checkpoints[1].step, 12u);
  EXPECT_EQ(t.checkpoints[1].epoch, 4u);
  EXPECT_EQ(t.checkpoints[1].state->params(), t.final_state.params());
  EXPECT_EQ(t.checkpoints[1].values[0], t.final_state.params()(0));
  EXPECT_EQ(t.epoch_objective.size(), 4u);
  plan.checkpoint_unit = CheckpointUnit::steps;
  plan.checkpoint_every = 5;
  const Trajectory s = train(init, ds, plan);
  ASSERT_EQ(s.checkpoints.size(), 3u);
  EXPECT_EQ(s.checkpoints[0].step, 5u);
  EXPECT_EQ(s.checkpoints[1].step, 10u);
  EXPECT_EQ(s.checkpoints[2].step, 12u);
}

TEST(Train, DivergenceCarriesStep) {
  const Dataset ds = testutil::regression_data(8, 2, 9);
  const ModelState init = ModelState::initialize(Architecture::mlp(2, {}, Task::regression()), 1);
  TrainPlan plan;
  plan.lr = 1e6;
  plan.batch_size = 8;
  plan.epochs = 200;
  try {
    train(init, ds, plan);
    FAIL() << "expected divergence";
  } catch (const DivergedError& e) {
    EXPECT_GT(e.step(), 0u);
    EXPECT_LE(e.step(), 200u);
  }
}

TEST(Train, ConvexFurtherTrainingMatchesRetraining) {
  const Dataset ds = testutil::regression_data(15, 3, 11);
  const Architecture arch = Architecture::mlp(3, {}, Task::regression());
  TrainPlan plan;
  plan.lr = 0.02;
  plan.batch_size = 15;
  plan.epochs = 3000;
  const ModelState theta_f = train(ModelState::initialize(arch, 1), ds, plan).final_state;
  const ModelState from_other = train(ModelState::initialize(arch, 2), ds, plan).final_state;
  EXPECT_LT((theta_f.params() - from_other.params()).norm(), 1e-5);
  const ModelState further = train(theta_f, ds, plan.further_training()).final_state;
  EXPECT_LT((further.params() - theta_f.params()).norm(), 1e-5);
}
