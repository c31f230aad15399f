#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace ftattr {

// A symmetric curvature operator v -> H v plus damping; the solvers work with
// the damped operator (H + damping * I).
struct CurvatureOp {
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> apply;
  std::size_t dim = 0;
  double damping = 0.0;

  Eigen::VectorXd apply_damped(const Eigen::VectorXd& v) const { return apply(v) + damping * v; }
};

// Zero curvature; the damped operator is damping * I.
CurvatureOp zero_curvature(std::size_t dim, double damping);
CurvatureOp dense_curvature(Eigen::MatrixXd h, double damping);

struct SolverReport {
  Eigen::VectorXd solution;
  std::size_t iterations = 0;
  double residual_norm = 0.0;  // ||(H + damping I) x - b||, recomputed from scratch
  bool diverged = false;
  double scale = 0.0;  // LiSSA only
};

inline constexpr double kDefaultDamping = 0.01;
inline constexpr double kAlternateDamping = 0.001;
inline constexpr std::size_t kDefaultLissaDepth = 5000;
inline const std::vector<double> kLissaScaleLadder = {10, 20, 50, 100, 200, 500};

// Conjugate gradient on (H + damping I) x = b, stopping once
// ||r|| <= tol * ||b||. Non-finite intermediates or exhausting max_iter
// without converging set `diverged`.
SolverReport cg_solve(const CurvatureOp& op, const Eigen::VectorXd& b, double tol = 1e-10, std::size_t max_iter = 0);

// Truncated Neumann series: x <- b + (I - (H + damping I) / scale) x for
// `depth` iterations starting at x = b, returning x / scale averaged over
// `repeat` runs. Flags divergence when ||x|| exceeds 1e6 ||b|| or turns
// non-finite.
SolverReport lissa_solve(const CurvatureOp& op, const Eigen::VectorXd& b, std::size_t depth, double scale,
                         std::size_t repeat = 1);

// Tries each scale of the ladder in order and keeps the first run that does
// not diverge; the returned report is flagged diverged if none succeeds.
SolverReport lissa_solve_auto(const CurvatureOp& op, const Eigen::VectorXd& b, std::size_t depth,
                              const std::vector<double>& ladder = kLissaScaleLadder);

}  // namespace ftattr
