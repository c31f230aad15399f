#include "ftattr/solvers.hpp"

#include <cmath>

#include "ftattr/error.hpp"

namespace ftattr {

CurvatureOp zero_curvature(std::size_t dim, double damping) {
  return {[dim](const Eigen::VectorXd&) { return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim)).eval(); }, dim,
          damping};
}

CurvatureOp dense_curvature(Eigen::MatrixXd h, double damping) {
  const auto dim = static_cast<std::size_t>(h.rows());
  return {[h = std::move(h)](const Eigen::VectorXd& v) { return (h * v).eval(); }, dim, damping};
}

namespace {

void check_rhs(const CurvatureOp& op, const Eigen::VectorXd& b) {
  if (static_cast<std::size_t>(b.size()) != op.dim) {
    throw DimensionError("solver: right-hand side has wrong length");
  }
}

double true_residual(const CurvatureOp& op, const Eigen::VectorXd& x, const Eigen::VectorXd& b) {
  return (op.apply_damped(x) - b).norm();
}

}  // namespace

SolverReport cg_solve(const CurvatureOp& op, const Eigen::VectorXd& b, double tol, std::size_t max_iter) {
  check_rhs(op, b);
  if (!(tol > 0.0)) throw ValidationError("cg: tol must be > 0");
  if (max_iter == 0) max_iter = std::max<std::size_t>(10 * op.dim, 100);

  SolverReport rep;
  rep.solution = Eigen::VectorXd::Zero(b.size());
  const double b_norm = b.norm();
  if (b_norm == 0.0) {
    return rep;
  }
  Eigen::VectorXd& x = rep.solution;
  Eigen::VectorXd r = b;
  Eigen::VectorXd p = r;
  double rr = r.squaredNorm();
  const double target = tol * b_norm;
  while (rep.iterations < max_iter) {
    const Eigen::VectorXd ap = op.apply_damped(p);
    const double pap = p.dot(ap);
    if (!std::isfinite(pap) || pap <= 0.0) {
      // Not positive definite along p.
      rep.diverged = true;
      break;
    }
    const double alpha = rr / pap;
    x += alpha * p;
    r -= alpha * ap;
    ++rep.iterations;
    const double rr_next = r.squaredNorm();
    if (!std::isfinite(rr_next)) {
      rep.diverged = true;
      break;
    }
    if (std::sqrt(rr_next) <= target) {
      // The recursive residual drifts; confirm against the true one.
      const double res = true_residual(op, x, b);
      if (res <= target) break;
      r = b - op.apply_damped(x);
      rr = r.squaredNorm();
      p = r;
      continue;
    }
    p = r + (rr_next / rr) * p;
    rr = rr_next;
  }
  rep.residual_norm = true_residual(op, x, b);
  if (!std::isfinite(rep.residual_norm)) rep.diverged = true;
  if (!rep.diverged && rep.residual_norm > target) rep.diverged = true;
  return rep;
}

SolverReport lissa_solve(const CurvatureOp& op, const Eigen::VectorXd& b, std::size_t depth, double scale,
                         std::size_t repeat) {
  check_rhs(op, b);
  if (!(scale > 0.0)) throw ValidationError("lissa: scale must be > 0");
  if (repeat < 1) throw ValidationError("lissa: repeat must be >= 1");
  SolverReport rep;
  rep.scale = scale;
  rep.solution = Eigen::VectorXd::Zero(b.size());
  const double limit = 1e6 * b.norm();
  for (std::size_t rpt = 0; rpt < repeat && !rep.diverged; ++rpt) {
    Eigen::VectorXd x = b;
    for (std::size_t k = 0; k < depth; ++k) {
      x = b + x - op.apply_damped(x) / scale;
      ++rep.iterations;
      const double norm = x.norm();
      if (!std::isfinite(norm) || norm > limit) {
        rep.diverged = true;
        break;
      }
    }
    rep.solution += x / scale;
  }
  rep.solution /= static_cast<double>(repeat);
  rep.residual_norm = true_residual(op, rep.solution, b);
  if (!std::isfinite(rep.residual_norm)) rep.diverged = true;
  return rep;
}

SolverReport lissa_solve_auto(const CurvatureOp& op, const Eigen::VectorXd& b, std::size_t depth,
                              const std::vector<double>& ladder) {
  SolverReport last;
  for (double scale : ladder) {
    last = lissa_solve(op, b, depth, scale);
    if (!last.diverged) return last;
  }
  return last;
}

}  // namespace ftattr
