#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ftattr/data.hpp"
#include "ftattr/model.hpp"
#include "ftattr/solvers.hpp"

namespace ftattr {

// Scores over the training subset L for one test instance.
struct AttributionVector {
  std::string method;
  std::size_t test_index = 0;  // index into the test split
  Eigen::VectorXd scores;      // aligned with AttributionProblem::subset
  std::map<std::string, std::string> hyperparameters;
  std::optional<SolverReport> report;
};

// The final model, the full training set D and the attributed subset L. Loss
// gradients over L are computed once; quantities over all of D (Gauss-Newton
// factors, per-example gradients) are built on first use and shared
// read-only by concurrent callers.
class AttributionProblem {
 public:
  AttributionProblem(ModelState model, Dataset train, std::vector<std::size_t> subset);

  const ModelState& model() const { return model_; }
  const Dataset& train() const { return train_; }
  const std::vector<std::size_t>& subset() const { return subset_; }
  std::size_t num_params() const { return model_.num_params(); }
  std::size_t subset_size() const { return subset_.size(); }

  // Row k: gradient of L(z_{subset[k]}; theta_f).
  const RowMatrix& subset_grads() const { return subset_grads_; }
  // Gauss-Newton factors over all training instances.
  const GaussNewtonContext& gauss_newton() const;
  // Row i: loss gradient of every training instance.
  const RowMatrix& all_train_grads() const;
  // 0, 1, ..., n-1.
  std::vector<std::size_t> all_rows() const;

  // Gradient of the full-data risk R(D) = sum_i L(z_i) at theta_f.
  Eigen::VectorXd risk_grad() const;

 private:
  ModelState model_;
  Dataset train_;
  std::vector<std::size_t> subset_;
  RowMatrix subset_grads_;
  mutable std::once_flag gn_once_;
  mutable std::unique_ptr<GaussNewtonContext> gn_;
  mutable std::once_flag grads_once_;
  mutable std::unique_ptr<RowMatrix> all_grads_;
};

// g(z, theta) = L(z; theta); this is its gradient at the final model.
Eigen::VectorXd test_gradient(const ModelState& m, const Dataset& test, std::size_t test_index);

// ---- first-order -----------------------------------------------------------

// a_i = grad_g . grad_L_i / damping.
AttributionVector grad_dot(const AttributionProblem& prob, const Eigen::VectorXd& test_grad, double damping);
// Cosine between grad_g and each grad_L_i; a zero training gradient scores 0.
// Throws UndefinedError for a zero test gradient.
AttributionVector grad_cos(const AttributionProblem& prob, const Eigen::VectorXd& test_grad);

// ---- influence functions ---------------------------------------------------

enum class Curvature { true_hessian, gauss_newton, zero };
enum class SolverKind { cg, lissa };

std::string to_string(Curvature c);
std::string to_string(SolverKind s);
Curvature parse_curvature(const std::string& s);
SolverKind parse_solver(const std::string& s);

struct InfluenceConfig {
  Curvature curvature = Curvature::gauss_newton;
  SolverKind solver = SolverKind::cg;
  double damping = kDefaultDamping;
  double cg_tol = 1e-10;
  std::size_t cg_max_iter = 0;  // 0: solver default
  std::size_t lissa_depth = kDefaultLissaDepth;
  std::optional<double> lissa_scale;  // absent: first non-diverging scale of the ladder
  double epsilon = 1.0;               // amount of down-weighting; 1 is leave-one-out
  // Solve once per training instance instead of once against grad_g.
  bool solve_per_instance = false;
};

// Damped curvature of the full-data risk at theta_f.
CurvatureOp curvature_operator(const AttributionProblem& prob, Curvature curvature, double damping);
// Solves (H + damping I) x = b with the configured solver; throws
// NumericalError when the solver diverges.
SolverReport damped_solve(const CurvatureOp& op, const Eigen::VectorXd& b, const InfluenceConfig& cfg);

// Standard influence: a_i = eps * grad_g^T (H + damping I)^{-1} grad_L_i, the
// Gauss-Newton form using -r_i g_i for grad_L_i. By symmetry of H a single
// solve against grad_g serves every i.
AttributionVector influence_attr(const AttributionProblem& prob, const Eigen::VectorXd& test_grad,
                                 const InfluenceConfig& cfg);

enum class GeneralizedVariant { exact_hessian_term, near_stationary };
std::string to_string(GeneralizedVariant v);
GeneralizedVariant parse_generalized_variant(const std::string& s);

// Full-data Newton step dtheta(D) = -(H + damping I)^{-1} grad R(D; theta_f).
Eigen::VectorXd full_data_step(const AttributionProblem& prob, const InfluenceConfig& cfg);

// Influence without assuming a stationary theta_f. exact_hessian_term adds
// the per-instance curvature times dtheta(D) (the Gauss-Newton curvature uses
// v_ii g_i g_i^T); near_stationary evaluates grad_L_i at theta_f + dtheta(D).
AttributionVector generalized_influence_attr(const AttributionProblem& prob, const Eigen::VectorXd& test_grad,
                                             const InfluenceConfig& cfg, GeneralizedVariant variant);

// ---- TRAK with a single model ----------------------------------------------

struct TrakConfig {
  std::size_t projection_dim = 2048;  // clipped to p
  std::uint64_t projection_seed = 0;
  bool identity_projection = false;  // test hook: P = I, requires projection_dim == p
  bool allow_pseudo_inverse = true;
  double rank_tol = 1e-10;  // relative singular value cut-off
};

// a_i = -r_i (P^T grad_g)^T (Phi^T Phi)^{-1} phi_i with Phi = G P over all of
// D, P ~ N(0, 1)^{p x k} from the counter generator, no damping and V = I.
class TrakProjector {
 public:
  TrakProjector(const AttributionProblem& prob, const TrakConfig& cfg);
  AttributionVector attribute(const Eigen::VectorXd& test_grad) const;
  std::size_t rank() const { return rank_; }
  // P^T v, regenerating P row by row.
  Eigen::VectorXd project(const Eigen::VectorXd& v) const;

 private:
  const AttributionProblem& prob_;
  TrakConfig cfg_;
  std::size_t k_ = 0;
  std::size_t rank_ = 0;
  // (Phi^T Phi)^+ phi_i (-r_i) for each subset member, one column each.
  Eigen::MatrixXd weighted_features_;
};

AttributionVector trak_m1(const AttributionProblem& prob, const Eigen::VectorXd& test_grad, const TrakConfig& cfg);

// ---- DataInf ----------------------------------------------------------------

struct DataInfConfig {
  // lambda_l = mean_i(mean of squared entries of layer-l gradient i) / lambda_const.
  double lambda_const = 10.0;
  std::optional<std::vector<double>> layer_damping;  // overrides the rule
};

// a_k = sum_l (1/lambda_l) (L_lk - (1/n) sum_i L_li L_lik / (lambda_l + L_lii))
// with layer blocks (weights + biases per layer) and i over all of D.
class DataInfAttributor {
 public:
  DataInfAttributor(const AttributionProblem& prob, const DataInfConfig& cfg);
  AttributionVector attribute(const Eigen::VectorXd& test_grad) const;
  const std::vector<double>& layer_damping() const { return lambda_; }

 private:
  const AttributionProblem& prob_;
  std::vector<ParamBlock> blocks_;
  std::vector<double> lambda_;
  // Per layer: n x l matrix of train-train inner products L_lik, and L_lii.
  std::vector<Eigen::MatrixXd> cross_;
  std::vector<Eigen::VectorXd> self_;
};

AttributionVector datainf(const AttributionProblem& prob, const Eigen::VectorXd& test_grad, const DataInfConfig& cfg);

// ---- quadratic model of the further-training objective ---------------------

// R(D'; theta) = sum_i weights[i] L(z_i; theta) over all training rows.
struct ReweightedData {
  std::vector<double> weights;
  static ReweightedData full(std::size_t n);
  static ReweightedData leave_out(std::size_t n, std::size_t i, double epsilon = 1.0);
};

struct TaylorModel {
  int order = 2;
  double damping = 0;
  Eigen::VectorXd gradient;             // grad R(D'; theta_f)
  std::optional<CurvatureOp> curvature;  // order 2: Hessian of R(D'), damped
  // argmin of the expansion plus damping/2 ||dtheta||^2; order 1 is
  // -gradient / damping, order 2 a CG solve.
  Eigen::VectorXd minimizer(double cg_tol = 1e-12) const;
};

TaylorModel taylor_expand_objective(const ModelState& m, const Dataset& train, const ReweightedData& data,
                                    double damping, int order);

}  // namespace ftattr
