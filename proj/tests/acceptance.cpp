// Acceptance suite: one PASS/FAIL line per criterion.
// Usage: acceptance [criterion numbers...]; no arguments runs all ten.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ftattr/attributors.hpp"
#include "ftattr/config.hpp"
#include "ftattr/error.hpp"
#include "ftattr/eval.hpp"
#include "ftattr/goldstd.hpp"
#include "ftattr/io.hpp"
#include "ftattr/pipeline.hpp"
#include "ftattr/solvers.hpp"
#include "ftattr/training.hpp"
#include "test_util.hpp"

using namespace ftattr;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

void note(int c, const std::string& msg) { std::cout << "  c" << c << ": " << msg << std::endl; }

// Every gold record produced by the suite, for criterion 5.
std::vector<std::pair<std::string, GoldRunRecord>> g_records;

// ---- 1 --------------------------------------------------------------------

Outcome gradients_and_hvp() {
  const auto t0 = Clock::now();
  double worst_grad = 0, worst_hvp = 0;
  for (int classes : {0, 3}) {
    const Task task = classes ? Task::classification(classes) : Task::regression();
    const Dataset ds = classes ? testutil::classification_data(8, 20, classes, 11) : testutil::regression_data(8, 20, 11);
    const ModelState m = testutil::random_model(Architecture::mlp(20, {16, 16}, task), 12);
    const auto rows = testutil::iota(ds.size());
    const auto p = static_cast<Eigen::Index>(m.num_params());
    auto objective = [&](const Eigen::VectorXd& theta) { return losses(m.with_params(theta), ds).sum(); };
    const Eigen::VectorXd g = grad(m, ds, rows);
    Eigen::VectorXd fd(p);
    const double h = 1e-5;
    for (Eigen::Index k = 0; k < p; ++k) {
      Eigen::VectorXd a = m.params(), b = m.params();
      a(k) += h;
      b(k) -= h;
      fd(k) = (objective(a) - objective(b)) / (2 * h);
    }
    worst_grad = std::max(worst_grad, testutil::rel_err(g, fd));
    for (std::uint64_t s = 0; s < 3; ++s) {
      const Eigen::VectorXd v = testutil::random_vector(p, 100 + s);
      const double e = 1e-4;
      const Eigen::VectorXd fdh = (grad(m.with_params(m.params() + e * v), ds, rows) -
                                   grad(m.with_params(m.params() - e * v), ds, rows)) / (2 * e);
      worst_hvp = std::max(worst_hvp, testutil::rel_err(hvp(m, ds, rows, v), fdh));
    }
    if (!classes) note(1, "p = " + std::to_string(p));
  }
  const double secs = seconds_since(t0);
  return {worst_grad < 1e-5 && worst_hvp < 1e-4 && secs < 10,
          "grad rel err " + fmt(worst_grad) + " (< 1e-5), HVP rel err " + fmt(worst_hvp) + " (< 1e-4), " + fmt(secs) +
              " s (< 10)"};
}

// ---- 2 --------------------------------------------------------------------

Outcome curvature_identities() {
  const Dataset ds = testutil::regression_data(150, 60, 21);
  const ModelState m = testutil::random_model(Architecture::mlp(60, {}, Task::regression()), 22);
  const auto rows = testutil::iota(ds.size());
  const GaussNewtonContext ctx = build_gauss_newton(m, ds, rows);
  // Independent dense G: d fbar / d theta = [x, 1] for a linear model.
  Eigen::MatrixXd g(150, 61);
  g << ds.features(), Eigen::VectorXd::Ones(150);
  const Eigen::MatrixXd gtg = g.transpose() * g;
  double gn_err = 0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Eigen::VectorXd v = testutil::random_vector(61, 200 + s);
    gn_err = std::max(gn_err, testutil::rel_err(gnvp(ctx, v), gtg * v));
  }
  const double lambda = kDefaultDamping;
  CurvatureOp op{[&](const Eigen::VectorXd& v) { return gnvp(ctx, v); }, 61, lambda};
  const Eigen::VectorXd b = testutil::random_vector(61, 300);
  const Eigen::VectorXd direct = (gtg + lambda * Eigen::MatrixXd::Identity(61, 61)).ldlt().solve(b);
  const SolverReport cg = cg_solve(op, b, 1e-12);
  const double cg_err = testutil::rel_err(cg.solution, direct);
  const SolverReport lissa = lissa_solve_auto(op, b, kDefaultLissaDepth);
  const double lissa_err = testutil::rel_err(lissa.solution, cg.solution);
  note(2, "LiSSA scale " + fmt(lissa.scale) + ", CG iterations " + std::to_string(cg.iterations));
  return {gn_err < 1e-10 && cg_err < 1e-8 && !lissa.diverged && lissa_err < 1e-3,
          "gnvp " + fmt(gn_err) + " (< 1e-10), CG vs direct " + fmt(cg_err) + " (< 1e-8), LiSSA vs CG " +
              fmt(lissa_err) + " (< 1e-3)"};
}

// ---- 3 --------------------------------------------------------------------

Eigen::VectorXd least_squares(const Dataset& ds) {
  const auto n = static_cast<Eigen::Index>(ds.size());
  Eigen::MatrixXd xa(n, static_cast<Eigen::Index>(ds.dim()) + 1);
  xa << ds.features(), Eigen::VectorXd::Ones(n);
  return (xa.transpose() * xa).ldlt().solve(xa.transpose() * ds.targets());
}

Outcome reduction_identities() {
  // (a) zero curvature versus grad_dot on an MLP classifier.
  const Dataset cls = testutil::classification_data(40, 5, 3, 31);
  const ModelState mlp = testutil::random_model(Architecture::mlp(5, {8}, Task::classification(3)), 32);
  const std::vector<std::size_t> subset = {0, 3, 9, 17, 22, 38};
  const AttributionProblem p1(mlp, cls, subset);
  double zero_err = 0;
  for (std::size_t j = 0; j < 5; ++j) {
    const Eigen::VectorXd tg = test_gradient(mlp, testutil::classification_data(5, 5, 3, 33), j);
    InfluenceConfig cfg;
    cfg.curvature = Curvature::zero;
    const Eigen::VectorXd a = influence_attr(p1, tg, cfg).scores;
    const Eigen::VectorXd b = grad_dot(p1, tg, cfg.damping).scores;
    zero_err = std::max(zero_err, (a - b).cwiseAbs().maxCoeff() / b.cwiseAbs().maxCoeff());
  }
  // (b) generalized influence at an exact stationary point.
  const Dataset reg = testutil::regression_data(60, 6, 34);
  const Dataset reg_test = testutil::regression_data(5, 6, 35);
  const Architecture lin = Architecture::mlp(6, {}, Task::regression());
  const ModelState theta(lin, least_squares(reg));
  const AttributionProblem p2(theta, reg, {1, 5, 8, 13, 21, 34, 55});
  double gen_err = 0;
  for (std::size_t j = 0; j < 5; ++j) {
    const Eigen::VectorXd tg = test_gradient(theta, reg_test, j);
    for (Curvature c : {Curvature::true_hessian, Curvature::gauss_newton}) {
      InfluenceConfig cfg;
      cfg.curvature = c;
      cfg.cg_tol = 1e-13;
      const Eigen::VectorXd base = influence_attr(p2, tg, cfg).scores;
      for (GeneralizedVariant v : {GeneralizedVariant::exact_hessian_term, GeneralizedVariant::near_stationary}) {
        gen_err = std::max(gen_err, testutil::rel_err(generalized_influence_attr(p2, tg, cfg, v).scores, base));
      }
    }
  }
  // (c) TRAK with the identity projection versus Gauss-Newton influence, lambda -> 0.
  const ModelState small = testutil::random_model(Architecture::mlp(2, {3}, Task::regression()), 36);
  const Dataset reg2 = testutil::regression_data(50, 2, 37);
  const AttributionProblem p3(small, reg2, {0, 7, 14, 21, 28, 35, 42, 49});
  double trak_err = 0;
  for (std::size_t j = 0; j < 5; ++j) {
    const Eigen::VectorXd tg = test_gradient(small, testutil::regression_data(5, 2, 38), j);
    TrakConfig tc;
    tc.identity_projection = true;
    tc.projection_dim = small.num_params();
    InfluenceConfig ic;
    ic.damping = 1e-11;
    ic.cg_tol = 1e-12;
    trak_err = std::max(trak_err, testutil::rel_err(trak_m1(p3, tg, tc).scores, influence_attr(p3, tg, ic).scores));
  }
  return {zero_err < 1e-12 && gen_err < 1e-10 && trak_err < 1e-6,
          "zero-curvature vs grad_dot " + fmt(zero_err) + " (< 1e-12), generalized vs standard " + fmt(gen_err) +
              " (< 1e-10), TRAK(identity) vs GN influence " + fmt(trak_err) + " (< 1e-6)"};
}

// ---- 4 --------------------------------------------------------------------

Outcome convex_exactness() {
  const auto t0 = Clock::now();
  const Dataset train = testutil::regression_data(30, 3, 41);
  const Dataset test = testutil::regression_data(5, 3, 42);
  const Architecture arch = Architecture::mlp(3, {}, Task::regression());
  EvalSubsets subsets;
  subsets.train_subset = {0, 4, 9, 13, 18, 22, 27};
  subsets.test_indices = testutil::iota(5);
  TrainPlan plan;
  plan.lr = 0.5;
  plan.batch_size = 30;  // full batch: the objective is exactly the (leave-one-out) mean loss
  plan.epochs = 3000;
  const ModelState theta_0 = ModelState::initialize(arch, 43);
  const ModelState theta_f = ftattr::train(theta_0, train, plan).final_state;
  TrainPlan further = plan.further_training();
  further.epochs = 3000;
  const GoldRunRecord fr = run_gold_sweep(theta_f, train, test, subsets, further, 2);
  const GoldRunRecord rt = retrain_gold(theta_0, train, test, subsets, plan, 2);
  g_records.emplace_back("convex further-training", fr);
  g_records.emplace_back("convex re-training", rt);

  // Closed-form leave-one-out by rank-one downdate of the normal equations.
  const auto n = static_cast<Eigen::Index>(train.size());
  Eigen::MatrixXd xa(n, 4);
  xa << train.features(), Eigen::VectorXd::Ones(n);
  const Eigen::MatrixXd a = xa.transpose() * xa;
  const Eigen::VectorXd theta = a.ldlt().solve(xa.transpose() * train.targets());
  auto test_losses = [&](const Eigen::VectorXd& t) { return losses(ModelState(arch, t), test); };
  const Eigen::VectorXd g_full = test_losses(theta);
  std::vector<Eigen::VectorXd> g_loo;
  for (std::size_t i : subsets.train_subset) {
    const Eigen::VectorXd xi = xa.row(static_cast<Eigen::Index>(i)).transpose();
    const Eigen::VectorXd ainv_x = a.ldlt().solve(xi);
    const double h = xi.dot(ainv_x);
    const double r = train.target(i) - xi.dot(theta);
    g_loo.push_back(test_losses(theta - ainv_x * r / (1.0 - h)));
  }
  const std::size_t l = subsets.train_subset.size();
  double worst = 0;
  for (Adjustment adj : {Adjustment::mean_subtract, Adjustment::full_subtract}) {
    const GoldScores sf = adjust(fr, adj);
    const GoldScores sr = adjust(rt, adj);
    for (std::size_t j = 0; j < 5; ++j) {
      Eigen::VectorXd oracle(static_cast<Eigen::Index>(l));
      double mean = 0;
      for (std::size_t k = 0; k < l; ++k) mean += g_loo[k](static_cast<Eigen::Index>(j)) / static_cast<double>(l);
      for (std::size_t k = 0; k < l; ++k) {
        const double base = adj == Adjustment::mean_subtract ? mean : g_full(static_cast<Eigen::Index>(j));
        oracle(static_cast<Eigen::Index>(k)) = g_loo[k](static_cast<Eigen::Index>(j)) - base;
      }
      const Eigen::VectorXd& vf = sf.scores.back()[j];
      const Eigen::VectorXd& vr = sr.scores.back()[j];
      worst = std::max({worst, testutil::rel_err(vf, oracle), testutil::rel_err(vr, oracle), testutil::rel_err(vf, vr)});
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60,
          "worst pairwise rel err " + fmt(worst) + " (< 1e-4), " + fmt(secs) + " s (< 60)"};
}

// ---- 6 and 7 ----------------------------------------------------------------

RunConfig decay_config() {
  RunConfig cfg;
  cfg.dataset.synthetic.kind = SyntheticKind::linear_regression;
  cfg.dataset.synthetic.n = 600;
  cfg.dataset.synthetic.d = 8;
  cfg.dataset.synthetic.noise = 0.5;
  cfg.dataset.synthetic.seed = 61;
  cfg.split.test_fraction = 1.0 / 6.0;  // 500 training instances
  cfg.split.split_seed = 62;
  cfg.hidden = {32, 32};
  cfg.init_seed = 63;
  cfg.train.lr = 0.05;
  cfg.train.batch_size = 32;
  cfg.train.epochs = 100;
  cfg.train.shuffle_seed = 64;
  cfg.further_train = cfg.train.further_training();
  cfg.further_train.epochs = 50;
  cfg.further_train.checkpoint_every = 1;
  cfg.l = 20;
  cfg.m = 20;
  cfg.subset_seed = 65;
  cfg.seeds = 20;
  return cfg;
}

struct DecayRun {
  GoldRunRecord rec;
  MethodScores grad_dot, influence;
  double seconds = 0;
};

MethodScores to_method(const std::string& name, const std::vector<AttributionVector>& v, const EvalSubsets& s) {
  MethodScores out;
  out.method = name;
  out.loo_ids = s.train_subset;
  out.test_ids = s.test_indices;
  for (const AttributionVector& a : v) out.scores.push_back(a.scores);
  return out;
}

const DecayRun& decay_run() {
  static std::optional<DecayRun> run;
  if (run) return *run;
  const auto t0 = Clock::now();
  const RunConfig cfg = decay_config();
  const PreparedData data = prepare_data(cfg);
  const ModelState init = ModelState::initialize(architecture_for(cfg, data.train), cfg.init_seed);
  const ModelState theta_f = ftattr::train(init, data.train, cfg.train).final_state;
  note(6, "p = " + std::to_string(theta_f.num_params()) + ", final training loss " +
              fmt(mean_loss(theta_f, data.train)) + ", test loss " + fmt(mean_loss(theta_f, data.test)));
  DecayRun out;
  out.rec = run_gold_sweep(theta_f, data.train, data.test, data.subsets, cfg.further_train, cfg.seeds);
  const AttributionProblem prob(theta_f, data.train, data.subsets.train_subset);
  AttributorConfig gd;
  gd.method = gd.name = "grad_dot";
  AttributorConfig inf;
  inf.method = inf.name = "influence";
  out.grad_dot = to_method("grad_dot", run_attributor(prob, data.test, data.subsets, gd, 1), data.subsets);
  out.influence = to_method("influence", run_attributor(prob, data.test, data.subsets, inf, 1), data.subsets);
  out.seconds = seconds_since(t0);
  g_records.emplace_back("decay sweep", out.rec);
  run = std::move(out);
  return *run;
}

Outcome decay_shape() {
  const DecayRun& run = decay_run();
  const GoldScores gold = adjust_mean_subtract(run.rec);
  const SimilarityCurve gd = similarity_curve(gold, run.grad_dot, Metric::cosine);
  const SimilarityCurve inf = similarity_curve(gold, run.influence, Metric::cosine);
  std::ostringstream curve;
  for (std::size_t t = 0; t < gd.points.size(); t += 7) curve << ' ' << gd.points[t].step << ':' << fmt(gd.points[t].mean);
  note(6, "grad_dot cosine by step" + curve.str());
  curve.str("");
  for (std::size_t t = 0; t < inf.points.size(); t += 7) {
    curve << ' ' << inf.points[t].step << ':' << fmt(inf.points[t].mean);
  }
  note(6, "influence cosine by step" + curve.str());
  const double drop = gd.points.front().mean - gd.points.back().mean;
  const double gap = inf.max_point().mean - inf.points.back().mean;
  return {drop >= 0.05 && gap <= 0.1 && run.seconds < 7200,
          "grad_dot first - final = " + fmt(drop) + " (>= 0.05), influence max - final = " + fmt(gap) +
              " (<= 0.1), " + fmt(run.seconds) + " s (< 7200)"};
}

Outcome seed_averaging() {
  const DecayRun& run = decay_run();
  const auto curves = seed_group_curves(run.rec, {run.grad_dot}, Metric::cosine, {1, 2, 5, 10, 20});
  std::ostringstream os;
  for (const CurvePoint& p : curves[0].points) os << ' ' << p.step << ':' << fmt(p.mean);
  note(7, "grad_dot max cosine by group size" + os.str());
  const double v1 = curves[0].points.front().mean;
  const double v20 = curves[0].points.back().mean;
  return {v20 > v1, "group size 20: " + fmt(v20) + " > group size 1: " + fmt(v1)};
}

// ---- 8 --------------------------------------------------------------------

Outcome mislabel_detection() {
  const auto t0 = Clock::now();
  RunConfig cfg;
  cfg.dataset.synthetic.kind = SyntheticKind::two_gaussians;
  cfg.dataset.synthetic.n = 440;
  cfg.dataset.synthetic.d = 5;
  cfg.dataset.synthetic.noise = 1.0;
  cfg.dataset.synthetic.separation = 1.0;
  cfg.dataset.synthetic.seed = 81;
  cfg.dataset.flip_fraction = 0.2;
  cfg.dataset.flip_seed = 82;
  cfg.dataset.flip_within_subset = true;
  cfg.split.test_fraction = 1.0 / 11.0;  // 400 training instances
  cfg.split.split_seed = 83;
  cfg.hidden = {16};
  cfg.init_seed = 84;
  cfg.train.lr = 0.1;
  cfg.train.batch_size = 32;
  cfg.train.epochs = 30;
  cfg.train.shuffle_seed = 85;
  cfg.further_train = cfg.train.further_training();
  cfg.further_train.epochs = 1;
  cfg.l = 50;
  cfg.m = 40;
  cfg.subset_seed = 86;
  cfg.seeds = 10;
  const PreparedData data = prepare_data(cfg);
  const ModelState init = ModelState::initialize(architecture_for(cfg, data.train), cfg.init_seed);
  const ModelState theta_f = ftattr::train(init, data.train, cfg.train).final_state;
  const GoldRunRecord rec = run_gold_sweep(theta_f, data.train, data.test, data.subsets, cfg.further_train, cfg.seeds);
  g_records.emplace_back("mislabel sweep", rec);
  const GoldScores gold = adjust_mean_subtract(rec);
  Eigen::VectorXd total = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cfg.l));
  for (const Eigen::VectorXd& s : gold.scores.back()) total += s;
  std::vector<std::uint8_t> mask;
  for (std::size_t i : data.subsets.train_subset) mask.push_back((*data.flipped)[i]);
  std::size_t flipped = 0;
  for (std::uint8_t v : mask) flipped += v;
  const double auc = mislabel_auc(-total, mask);
  const double secs = seconds_since(t0);
  note(8, std::to_string(flipped) + " of " + std::to_string(cfg.l) + " flipped, test loss " +
              fmt(mean_loss(theta_f, data.test)));
  return {auc > 0.70 && secs < 1800, "AUC " + fmt(auc) + " (> 0.70), " + fmt(secs) + " s (< 1800)"};
}

// ---- 9 --------------------------------------------------------------------

Outcome datainf_closed_form() {
  double worst = 0;
  for (int classes : {0, 3}) {
    const std::size_t d = classes ? 8 : 12;
    const Task task = classes ? Task::classification(classes) : Task::regression();
    const Dataset train = classes ? testutil::classification_data(20, d, classes, 91) : testutil::regression_data(20, d, 91);
    const Dataset test = classes ? testutil::classification_data(4, d, classes, 92) : testutil::regression_data(4, d, 92);
    const ModelState m = testutil::random_model(Architecture::mlp(d, {}, task), 93);
    const std::vector<std::size_t> subset = {0, 3, 6, 11, 19};
    const AttributionProblem prob(m, train, subset);
    const DataInfAttributor attr(prob, DataInfConfig{});
    const auto p = static_cast<Eigen::Index>(m.num_params());
    const RowMatrix g = per_example_grads(m, train, testutil::iota(20));
    const double lambda = g.squaredNorm() / (20.0 * static_cast<double>(p)) / 10.0;
    Eigen::MatrixXd avg = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index i = 0; i < 20; ++i) {
      const Eigen::VectorXd gi = g.row(i).transpose();
      avg += (lambda * Eigen::MatrixXd::Identity(p, p) + gi * gi.transpose()).inverse() / 20.0;
    }
    for (std::size_t j = 0; j < 4; ++j) {
      const Eigen::VectorXd tg = test_gradient(m, test, j);
      const Eigen::VectorXd got = attr.attribute(tg).scores;
      for (std::size_t k = 0; k < subset.size(); ++k) {
        const double expect = tg.dot(avg * g.row(static_cast<Eigen::Index>(subset[k])).transpose());
        worst = std::max(worst, std::abs(got(static_cast<Eigen::Index>(k)) - expect) / std::max(1.0, std::abs(expect)));
      }
    }
  }
  return {worst < 1e-8, "max deviation from dense swapped-inverse average " + fmt(worst) + " (< 1e-8)"};
}

// ---- 10 -------------------------------------------------------------------

Outcome end_to_end_determinism() {
  const auto dir = testutil::temp_dir("acceptance_e2e");
  RunConfig cfg = parse_config(R"({
    "dataset": {"source": "synthetic", "synthetic": {"kind": "two_gaussians", "n": 120, "d": 4, "noise": 1.0, "seed": 101},
                "flip": {"fraction": 0.2, "seed": 102}},
    "split": {"test_fraction": 0.2, "seed": 103},
    "model": {"hidden": [8], "init_seed": 104},
    "train": {"optimizer": "sgd", "lr": 0.1, "epochs": 20, "batch_size": 16, "seed": 105},
    "further_train": {"epochs": 3, "checkpoint_every": 1},
    "eval": {"l": 10, "m": 8, "seed": 106},
    "seeds": 4,
    "attributors": ["grad_dot", "grad_cos", "influence",
                    {"method": "influence", "name": "influence_lissa", "solver": "lissa", "lissa_depth": 500},
                    {"method": "generalized_influence", "curvature": "gauss_newton"},
                    {"method": "trak", "projection_dim": 32}, "datainf"]
  })");
  const auto t0 = Clock::now();
  std::vector<std::string> files;
  for (const AttributorConfig& a : cfg.attributors) files.push_back("attributions/" + a.name + ".csv");
  files.insert(files.end(), {"reports/curves.csv", "reports/seed_groups.csv", "reports/topk.csv",
                             "reports/mislabel_auc.csv", "gold/record.csv"});
  std::vector<std::string> first;
  for (int pass = 0; pass < 2; ++pass) {
    cfg.output = dir / ("run" + std::to_string(pass));
    cfg.workers = pass == 0 ? 1 : 2;
    std::ostringstream log;
    const int code = cmd_all(cfg, log);
    if (code != 0) return {false, "cmd_all exit code " + std::to_string(code) + ": " + log.str()};
    for (std::size_t f = 0; f < files.size(); ++f) {
      const std::string text = read_text_file(cfg.output / files[f]);
      if (pass == 0) {
        first.push_back(text);
      } else if (text != first[f]) {
        return {false, files[f] + " differs between runs"};
      }
    }
  }
  const PreparedData data = prepare_data(cfg);
  g_records.emplace_back("end-to-end pipeline",
                         read_gold_record(OutputLayout(cfg.output).gold_record(), OutputLayout(cfg.output).gold_meta(),
                                          data.train, data.test));
  const double secs = seconds_since(t0) / 2;
  return {true, std::to_string(files.size()) + " files byte-identical (workers 1 vs 2); full method suite " +
                    fmt(secs) + " s per run"};
}

// ---- 5 --------------------------------------------------------------------

Outcome mean_subtract_sums() {
  if (g_records.empty()) return {false, "no gold records were produced (run criteria 4, 6, 8 or 10)"};
  double worst = 0;
  std::size_t checked = 0;
  for (const auto& [name, rec] : g_records) {
    const GoldScores s = adjust_mean_subtract(rec);
    for (const auto& per_test : s.scores) {
      for (const Eigen::VectorXd& a : per_test) {
        const double l1 = a.lpNorm<1>();
        const double ratio = l1 > 0 ? std::abs(a.sum()) / l1 : std::abs(a.sum());
        worst = std::max(worst, ratio);
        ++checked;
      }
    }
  }
  return {worst < 1e-12, std::to_string(checked) + " vectors over " + std::to_string(g_records.size()) +
                             " records, max |sum| / ||a||_1 = " + fmt(worst) + " (< 1e-12)"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, gradients_and_hvp},  {2, curvature_identities}, {3, reduction_identities}, {4, convex_exactness},
      {6, decay_shape},        {7, seed_averaging},       {8, mislabel_detection},   {9, datainf_closed_form},
      {10, end_to_end_determinism}, {5, mean_subtract_sums}};
  const std::vector<std::string> titles = {"",
                                           "gradient and HVP correctness",
                                           "curvature identities",
                                           "reduction identities",
                                           "convex-case exactness",
                                           "mean-subtract gold sums to zero",
                                           "decay shape",
                                           "seed-averaging trend",
                                           "mislabel detection",
                                           "DataInf closed form",
                                           "end-to-end determinism"};
  std::vector<std::optional<Outcome>> results(11);
  for (const auto& [id, fn] : criteria) {
    if (!selected.count(id)) continue;
    const auto t0 = Clock::now();
    try {
      results[id] = fn();
    } catch (const std::exception& e) {
      results[id] = Outcome{false, std::string("exception: ") + e.what()};
    }
    note(id, "done in " + fmt(seconds_since(t0)) + " s");
  }
  int failed = 0;
  std::cout << "\n";
  for (int id = 1; id <= 10; ++id) {
    if (!results[id]) continue;
    failed += !results[id]->pass;
    std::cout << (results[id]->pass ? "[PASS] " : "[FAIL] ") << "criterion " << id << " (" << titles[id]
              << "): " << results[id]->detail << std::endl;
  }
  return failed ? 1 : 0;
}
