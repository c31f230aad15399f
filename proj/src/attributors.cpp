#include "ftattr/attributors.hpp"

#include <cmath>
#include <numeric>

#include "ftattr/error.hpp"
#include "ftattr/io.hpp"
#include "ftattr/rng.hpp"

namespace ftattr {

// ---- problem ---------------------------------------------------------------

AttributionProblem::AttributionProblem(ModelState model, Dataset train, std::vector<std::size_t> subset)
    : model_(std::move(model)), train_(std::move(train)), subset_(std::move(subset)) {
  if (subset_.empty()) throw ValidationError("attribution: empty training subset");
  for (std::size_t i : subset_) {
    if (i >= train_.size()) throw ValidationError("attribution: subset index out of range");
  }
  if (model_.arch().input_dim() != train_.dim()) {
    throw DimensionError("attribution: model input width does not match the data");
  }
  subset_grads_ = per_example_grads(model_, train_, subset_);
}

std::vector<std::size_t> AttributionProblem::all_rows() const {
  std::vector<std::size_t> rows(train_.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

const GaussNewtonContext& AttributionProblem::gauss_newton() const {
  std::call_once(gn_once_, [this] { gn_ = std::make_unique<GaussNewtonContext>(build_gauss_newton(model_, train_, all_rows())); });
  return *gn_;
}

const RowMatrix& AttributionProblem::all_train_grads() const {
  std::call_once(grads_once_, [this] { all_grads_ = std::make_unique<RowMatrix>(per_example_grads(model_, train_, all_rows())); });
  return *all_grads_;
}

Eigen::VectorXd AttributionProblem::risk_grad() const { return grad(model_, train_, all_rows()); }

Eigen::VectorXd test_gradient(const ModelState& m, const Dataset& test, std::size_t test_index) {
  return instance_grad(m, test, test_index);
}

namespace {

void check_test_grad(const AttributionProblem& prob, const Eigen::VectorXd& g) {
  if (static_cast<std::size_t>(g.size()) != prob.num_params()) {
    throw DimensionError("attribution: test gradient has wrong length");
  }
}

std::string fmt(double v) { return format_double(v); }

}  // namespace

// ---- first-order -----------------------------------------------------------

AttributionVector grad_dot(const AttributionProblem& prob, const Eigen::VectorXd& test_grad, double damping) {
  check_test_grad(prob, test_grad);
  if (!(damping > 0.0)) throw ValidationError("grad_dot: damping must be > 0");
  AttributionVector out;
  out.method = "grad_dot";
  out.scores = (prob.subset_grads() * test_grad) / damping;
  out.hyperparameters["damping"] = fmt(damping);
  return out;
}

AttributionVector grad_cos(const AttributionProblem& prob, const Eigen::VectorXd& test_grad) {
  check_test_grad(prob, test_grad);
  const double tn = test_grad.norm();
  if (tn == 0.0) throw UndefinedError("grad_cos: zero test gradient has no direction");
  AttributionVector out;
  out.method = "grad_cos";
  const RowMatrix& g = prob.subset_grads();
  out.scores.resize(g.rows());
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    const double n = g.row(i).norm();
    out.scores(i) = n == 0.0 ? 0.0 : std::clamp(g.row(i).dot(test_grad) / (n * tn), -1.0, 1.0);
  }
  return out;
}

// ---- influence -------------------------------------------------------------

std::string to_string(Curvature c) {
  switch (c) {
    case Curvature::true_hessian:
      return "true_hessian";
    case Curvature::gauss_newton:
      return "gauss_newton";
    case Curvature::zero:
      return "zero";
  }
  return "gauss_newton";
}

std::string to_string(SolverKind s) { return s == SolverKind::cg ? "cg" : "lissa"; }

Curvature parse_curvature(const std::string& s) {
  if (s == "true_hessian") return Curvature::true_hessian;
  if (s == "gauss_newton") return Curvature::gauss_newton;
  if (s == "zero") return Curvature::zero;
  throw ValidationError("unknown curvature '" + s + "'");
}

SolverKind parse_solver(const std::string& s) {
  if (s == "cg") return SolverKind::cg;
  if (s == "lissa") return SolverKind::lissa;
  throw ValidationError("unknown solver '" + s + "'");
}

std::string to_string(GeneralizedVariant v) {
  return v == GeneralizedVariant::exact_hessian_term ? "exact_hessian_term" : "near_stationary";
}

GeneralizedVariant parse_generalized_variant(const std::string& s) {
  if (s == "exact_hessian_term") return GeneralizedVariant::exact_hessian_term;
  if (s == "near_stationary") return GeneralizedVariant::near_stationary;
  throw ValidationError("unknown generalized influence variant '" + s + "'");
}

CurvatureOp curvature_operator(const AttributionProblem& prob, Curvature curvature, double damping) {
  const std::size_t p = prob.num_params();
  switch (curvature) {
    case Curvature::zero:
      return zero_curvature(p, damping);
    case Curvature::gauss_newton: {
      const GaussNewtonContext& ctx = prob.gauss_newton();
      return {[&ctx](const Eigen::VectorXd& v) { return gnvp(ctx, v); }, p, damping};
    }
    case Curvature::true_hessian: {
      auto rows = std::make_shared<std::vector<std::size_t>>(prob.all_rows());
      return {[&prob, rows](const Eigen::VectorXd& v) { return hvp(prob.model(), prob.train(), *rows, v); }, p,
              damping};
    }
  }
  throw ValidationError("unknown curvature");
}

SolverReport damped_solve(const CurvatureOp& op, const Eigen::VectorXd& b, const InfluenceConfig& cfg) {
  SolverReport rep;
  if (cfg.solver == SolverKind::cg) {
    rep = cg_solve(op, b, cfg.cg_tol, cfg.cg_max_iter);
  } else if (cfg.lissa_scale) {
    rep = lissa_solve(op, b, cfg.lissa_depth, *cfg.lissa_scale);
  } else {
    rep = lissa_solve_auto(op, b, cfg.lissa_depth);
  }
  if (rep.diverged) {
    throw NumericalError(to_string(cfg.solver) + " solve failed (iterations=" + std::to_string(rep.iterations) +
                         ", residual=" + format_double(rep.residual_norm) +
                         (cfg.solver == SolverKind::lissa ? ", scale=" + format_double(rep.scale) : std::string()) + ")");
  }
  return rep;
}

namespace {

void describe(AttributionVector& out, const InfluenceConfig& cfg) {
  out.hyperparameters["curvature"] = to_string(cfg.curvature);
  out.hyperparameters["solver"] = to_string(cfg.solver);
  out.hyperparameters["damping"] = fmt(cfg.damping);
  out.hyperparameters["epsilon"] = fmt(cfg.epsilon);
  if (cfg.solver == SolverKind::cg) {
    out.hyperparameters["cg_tol"] = fmt(cfg.cg_tol);
  } else {
    out.hyperparameters["lissa_depth"] = std::to_string(cfg.lissa_depth);
    out.hyperparameters["lissa_scale"] = cfg.lissa_scale ? fmt(*cfg.lissa_scale) : std::string("auto");
  }
}

// Right-hand sides whose inner products with the solve give the scores:
// grad_L_i for true/zero curvature and -r_i g_i for Gauss-Newton.
RowMatrix influence_targets(const AttributionProblem& prob, Curvature curvature) {
  if (curvature != Curvature::gauss_newton) return prob.subset_grads();
  const GaussNewtonContext& ctx = prob.gauss_newton();
  RowMatrix out(static_cast<Eigen::Index>(prob.subset_size()), static_cast<Eigen::Index>(prob.num_params()));
  for (std::size_t k = 0; k < prob.subset_size(); ++k) {
    const auto i = static_cast<Eigen::Index>(prob.subset()[k]);
    out.row(static_cast<Eigen::Index>(k)) = -ctx.r(i) * ctx.g.row(i);
  }
  return out;
}

}  // namespace

AttributionVector influence_attr(const AttributionProblem& prob, const Eigen::VectorXd& test_grad,
                                 const InfluenceConfig& cfg) {
  check_test_grad(prob, test_grad);
  const CurvatureOp op = curvature_operator(prob, cfg.curvature, cfg.damping);
  const RowMatrix targets = influence_targets(prob, cfg.curvature);
  AttributionVector out;
  out.method = "influence";
  describe(out, cfg);
  if (!cfg.solve_per_instance) {
    SolverReport rep = damped_solve(op, test_grad, cfg);
    out.scores = cfg.epsilon * (targets * rep.solution);
    out.report = std::move(rep);
    return out;
  }
  out.scores.resize(targets.rows());
  for (Eigen::Index k = 0; k < targets.rows(); ++k) {
    SolverReport rep = damped_solve(op, targets.row(k).transpose(), cfg);
    out.scores(k) = cfg.epsilon * test_grad.dot(rep.solution);
    out.report = std::move(rep);
  }
  return out;
}

Eigen::VectorXd full_data_step(const AttributionProblem& prob, const InfluenceConfig& cfg) {
  const CurvatureOp op = curvature_operator(prob, cfg.curvature, cfg.damping);
  const Eigen::VectorXd g = prob.risk_grad();
  if (g.norm() == 0.0) return Eigen::VectorXd::Zero(g.size());
  return -damped_solve(op, g, cfg).solution;
}

AttributionVector generalized_influence_attr(const AttributionProblem& prob, const Eigen::VectorXd& test_grad,
                                             const InfluenceConfig& cfg, GeneralizedVariant variant) {
  check_test_grad(prob, test_grad);
  if (cfg.curvature == Curvature::zero) {
    throw ValidationError("generalized influence: zero curvature is not supported");
  }
  const CurvatureOp op = curvature_operator(prob, cfg.curvature, cfg.damping);
  SolverReport rep = damped_solve(op, test_grad, cfg);
  const Eigen::VectorXd& x = rep.solution;
  const Eigen::VectorXd step = full_data_step(prob, cfg);

  AttributionVector out;
  out.method = "generalized_influence";
  describe(out, cfg);
  out.hyperparameters["variant"] = to_string(variant);
  out.scores.resize(static_cast<Eigen::Index>(prob.subset_size()));

  if (variant == GeneralizedVariant::near_stationary) {
    const ModelState shifted = prob.model().with_params(prob.model().params() + step);
    const RowMatrix g_shifted = per_example_grads(shifted, prob.train(), prob.subset());
    out.scores = cfg.epsilon * (g_shifted * x);
  } else if (cfg.curvature == Curvature::gauss_newton) {
    const GaussNewtonContext& ctx = prob.gauss_newton();
    for (std::size_t k = 0; k < prob.subset_size(); ++k) {
      const auto i = static_cast<Eigen::Index>(prob.subset()[k]);
      const double coeff = ctx.v(i) * ctx.g.row(i).dot(step) - ctx.r(i);
      out.scores(static_cast<Eigen::Index>(k)) = cfg.epsilon * coeff * ctx.g.row(i).dot(x);
    }
  } else {
    for (std::size_t k = 0; k < prob.subset_size(); ++k) {
      const std::size_t row[] = {prob.subset()[k]};
      const Eigen::VectorXd corrected =
          prob.subset_grads().row(static_cast<Eigen::Index>(k)).transpose() + hvp(prob.model(), prob.train(), row, step);
      out.scores(static_cast<Eigen::Index>(k)) = cfg.epsilon * corrected.dot(x);
    }
  }
  out.report = std::move(rep);
  return out;
}

// ---- TRAK --------------------------------------------------------------------

namespace {

// Row r of the p x k projection matrix.
void projection_row(std::uint64_t seed, std::size_t r, Eigen::RowVectorXd& row) {
  CounterRng rng(derive_key(seed, {rng_tag::kProjection, static_cast<std::uint64_t>(r)}));
  for (Eigen::Index c = 0; c < row.size(); ++c) row(c) = rng.normal();
}

}  // namespace

Eigen::VectorXd TrakProjector::project(const Eigen::VectorXd& v) const {
  if (cfg_.identity_projection) return v;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k_));
  Eigen::RowVectorXd row(static_cast<Eigen::Index>(k_));
  for (Eigen::Index r = 0; r < v.size(); ++r) {
    if (v(r) == 0.0) continue;
    projection_row(cfg_.projection_seed, static_cast<std::size_t>(r), row);
    out += v(r) * row.transpose();
  }
  return out;
}

TrakProjector::TrakProjector(const AttributionProblem& prob, const TrakConfig& cfg) : prob_(prob), cfg_(cfg) {
  const std::size_t p = prob.num_params();
  if (cfg.projection_dim < 1) throw ValidationError("trak: projection_dim must be >= 1");
  k_ = std::min(cfg.projection_dim, p);
  if (cfg.identity_projection && cfg.projection_dim != p) {
    throw ValidationError("trak: identity projection needs projection_dim == p");
  }
  const GaussNewtonContext& ctx = prob.gauss_newton();
  const Eigen::Index n = ctx.g.rows();
  const auto k = static_cast<Eigen::Index>(k_);

  // Phi = G P, accumulated one projection row at a time.
  Eigen::MatrixXd phi;
  if (cfg.identity_projection) {
    phi = ctx.g;
  } else {
    phi = Eigen::MatrixXd::Zero(n, k);
    Eigen::RowVectorXd row(k);
    for (std::size_t r = 0; r < p; ++r) {
      projection_row(cfg.projection_seed, r, row);
      phi.noalias() += ctx.g.col(static_cast<Eigen::Index>(r)) * row;
    }
  }

  // (Phi^T Phi)^+ = W S^-2 W^T from the thin SVD Phi = U S W^T.
  Eigen::BDCSVD<Eigen::MatrixXd> svd(phi, Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  const double cutoff = s.size() > 0 ? cfg.rank_tol * s(0) : 0.0;
  rank_ = 0;
  for (Eigen::Index j = 0; j < s.size(); ++j) {
    if (s(j) > cutoff) ++rank_;
  }
  if (rank_ < k_ && !cfg.allow_pseudo_inverse) {
    throw RankDeficientError("trak: Phi^T Phi is singular (rank " + std::to_string(rank_) + " < k=" +
                             std::to_string(k_) + ")");
  }
  const auto rk = static_cast<Eigen::Index>(rank_);
  const Eigen::MatrixXd w = svd.matrixV().leftCols(rk);
  const Eigen::VectorXd inv_s2 = s.head(rk).array().square().inverse().matrix();

  weighted_features_.resize(k, static_cast<Eigen::Index>(prob.subset_size()));
  for (std::size_t c = 0; c < prob.subset_size(); ++c) {
    const auto i = static_cast<Eigen::Index>(prob.subset()[c]);
    const Eigen::VectorXd phi_i = phi.row(i).transpose();
    weighted_features_.col(static_cast<Eigen::Index>(c)) = -ctx.r(i) * (w * inv_s2.asDiagonal() * (w.transpose() * phi_i));
  }
}

AttributionVector TrakProjector::attribute(const Eigen::VectorXd& test_grad) const {
  check_test_grad(prob_, test_grad);
  AttributionVector out;
  out.method = "trak";
  out.scores = weighted_features_.transpose() * project(test_grad);
  out.hyperparameters["projection_dim"] = std::to_string(k_);
  out.hyperparameters["projection_seed"] = std::to_string(cfg_.projection_seed);
  out.hyperparameters["rank"] = std::to_string(rank_);
  out.hyperparameters["damping"] = "0";
  out.hyperparameters["V"] = "identity";
  if (cfg_.identity_projection) out.hyperparameters["projection"] = "identity";
  return out;
}

AttributionVector trak_m1(const AttributionProblem& prob, const Eigen::VectorXd& test_grad, const TrakConfig& cfg) {
  return TrakProjector(prob, cfg).attribute(test_grad);
}

// ---- DataInf -------------------------------------------------------------------

DataInfAttributor::DataInfAttributor(const AttributionProblem& prob, const DataInfConfig& cfg)
    : prob_(prob), blocks_(prob.model().blocks()) {
  const RowMatrix& g = prob.all_train_grads();
  const Eigen::Index n = g.rows();
  if (cfg.layer_damping && cfg.layer_damping->size() != blocks_.size()) {
    throw ValidationError("datainf: need one damping value per layer");
  }
  if (!(cfg.lambda_const > 0.0)) throw ValidationError("datainf: lambda_const must be > 0");
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const auto off = static_cast<Eigen::Index>(blocks_[l].offset);
    const auto len = static_cast<Eigen::Index>(blocks_[l].size());
    const auto layer = g.middleCols(off, len);
    Eigen::VectorXd self = layer.rowwise().squaredNorm();
    Eigen::MatrixXd cross(n, static_cast<Eigen::Index>(prob.subset_size()));
    for (std::size_t c = 0; c < prob.subset_size(); ++c) {
      cross.col(static_cast<Eigen::Index>(c)) = layer * layer.row(static_cast<Eigen::Index>(prob.subset()[c])).transpose();
    }
    double lambda = 0.0;
    if (cfg.layer_damping) {
      lambda = (*cfg.layer_damping)[l];
    } else {
      lambda = (self.sum() / static_cast<double>(n * len)) / cfg.lambda_const;
    }
    if (!(lambda > 0.0)) {
      // Every gradient of this layer vanishes; any positive damping gives zero scores.
      lambda = 1.0;
    }
    lambda_.push_back(lambda);
    self_.push_back(std::move(self));
    cross_.push_back(std::move(cross));
  }
}

AttributionVector DataInfAttributor::attribute(const Eigen::VectorXd& test_grad) const {
  check_test_grad(prob_, test_grad);
  const RowMatrix& g = prob_.all_train_grads();
  const double n = static_cast<double>(g.rows());
  AttributionVector out;
  out.method = "datainf";
  out.scores = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(prob_.subset_size()));
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const auto off = static_cast<Eigen::Index>(blocks_[l].offset);
    const auto len = static_cast<Eigen::Index>(blocks_[l].size());
    const auto layer = g.middleCols(off, len);
    const Eigen::VectorXd test_train = layer * test_grad.segment(off, len);  // L_li for all i
    const double lambda = lambda_[l];
    const Eigen::VectorXd coeff = test_train.array() / (lambda + self_[l].array());
    const Eigen::VectorXd correction = cross_[l].transpose() * coeff / n;
    for (std::size_t c = 0; c < prob_.subset_size(); ++c) {
      const double first = test_train(static_cast<Eigen::Index>(prob_.subset()[c]));
      out.scores(static_cast<Eigen::Index>(c)) += (first - correction(static_cast<Eigen::Index>(c))) / lambda;
    }
  }
  std::string lambdas;
  for (std::size_t l = 0; l < lambda_.size(); ++l) lambdas += (l ? ";" : "") + fmt(lambda_[l]);
  out.hyperparameters["layer_damping"] = lambdas;
  return out;
}

AttributionVector datainf(const AttributionProblem& prob, const Eigen::VectorXd& test_grad, const DataInfConfig& cfg) {
  return DataInfAttributor(prob, cfg).attribute(test_grad);
}

// ---- Taylor model ---------------------------------------------------------------

ReweightedData ReweightedData::full(std::size_t n) { return {std::vector<double>(n, 1.0)}; }

ReweightedData ReweightedData::leave_out(std::size_t n, std::size_t i, double epsilon) {
  ReweightedData d = full(n);
  d.weights.at(i) -= epsilon;
  return d;
}

Eigen::VectorXd TaylorModel::minimizer(double cg_tol) const {
  if (order == 1) {
    if (!(damping > 0.0)) throw ValidationError("taylor: first-order model needs damping > 0");
    return -gradient / damping;
  }
  if (gradient.norm() == 0.0) return Eigen::VectorXd::Zero(gradient.size());
  const SolverReport rep = cg_solve(*curvature, -gradient, cg_tol);
  if (rep.diverged) throw NumericalError("taylor: damped curvature is not positive definite");
  return rep.solution;
}

TaylorModel taylor_expand_objective(const ModelState& m, const Dataset& train, const ReweightedData& data,
                                    double damping, int order) {
  if (order != 1 && order != 2) throw ValidationError("taylor: order must be 1 or 2");
  if (data.weights.size() != train.size()) throw DimensionError("taylor: one weight per training row required");
  TaylorModel tm;
  tm.order = order;
  tm.damping = damping;
  std::vector<std::size_t> rows(train.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  tm.gradient = grad(m, train, rows, data.weights);
  if (order == 2) {
    auto shared_rows = std::make_shared<std::vector<std::size_t>>(std::move(rows));
    auto weights = std::make_shared<std::vector<double>>(data.weights);
    tm.curvature = CurvatureOp{[m, &train, shared_rows, weights](const Eigen::VectorXd& v) {
                                 return hvp(m, train, *shared_rows, *weights, v);
                               },
                               m.num_params(), damping};
  }
  return tm;
}

}  // namespace ftattr
