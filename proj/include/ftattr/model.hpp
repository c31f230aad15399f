#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ftattr/data.hpp"

namespace ftattr {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Fully connected network with tanh hidden units and a linear output layer.
// widths = {d, h1, ..., hk, out}; out is 1 for regression and num_classes
// for classification (logits). widths = {d, 1} is plain linear regression.
struct Architecture {
  std::vector<std::size_t> widths;
  Task task;

  std::size_t input_dim() const { return widths.front(); }
  std::size_t output_dim() const { return widths.back(); }
  std::size_t num_layers() const { return widths.size() - 1; }
  std::size_t num_params() const;
  bool operator==(const Architecture&) const = default;

  // {d, hidden..., task output}.
  static Architecture mlp(std::size_t input_dim, std::vector<std::size_t> hidden, Task task);
};

// Contiguous parameter range of one layer: weights (out x in, row-major) then biases.
struct ParamBlock {
  std::size_t offset = 0;
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t size() const { return (in + 1) * out; }
  std::size_t bias_offset() const { return offset + in * out; }
};

class ModelState {
 public:
  ModelState() = default;
  ModelState(Architecture arch, Eigen::VectorXd params);

  static ModelState zeros(Architecture arch);
  // Every weight and bias of a layer with fan-in `in` is drawn uniformly from
  // [-1/sqrt(in), 1/sqrt(in)] using the counter generator keyed by seed.
  static ModelState initialize(Architecture arch, std::uint64_t seed);

  const Architecture& arch() const { return arch_; }
  const Eigen::VectorXd& params() const { return params_; }
  Eigen::VectorXd& mutable_params() { return params_; }
  std::size_t num_params() const { return static_cast<std::size_t>(params_.size()); }
  ModelState with_params(Eigen::VectorXd params) const { return ModelState(arch_, std::move(params)); }

  std::vector<ParamBlock> blocks() const;

 private:
  Architecture arch_;
  Eigen::VectorXd params_;
};

// ---- evaluation ------------------------------------------------------------

// One output row per input row.
Eigen::MatrixXd forward_batch(const ModelState& m, const Eigen::MatrixXd& x);
Eigen::VectorXd forward(const ModelState& m, const Eigen::VectorXd& x);

// 0.5 * (f - y)^2 for regression, softmax cross-entropy for classification.
double loss_of_output(const Task& task, const Eigen::Ref<const Eigen::VectorXd>& output, double y);
double loss(const ModelState& m, const Eigen::VectorXd& x, double y);
// Per-row losses of ds rows (all rows when `rows` is empty).
Eigen::VectorXd losses(const ModelState& m, const Dataset& ds, std::span<const std::size_t> rows = {});
// Mean loss over all rows of ds.
double mean_loss(const ModelState& m, const Dataset& ds);

// ---- derivatives -----------------------------------------------------------

// Gradient of sum_k weights[k] * L(ds[rows[k]]; theta).
Eigen::VectorXd grad(const ModelState& m, const Dataset& ds, std::span<const std::size_t> rows,
                     std::span<const double> weights);
// Same gradient, also returning sum_k weights[k] * L(ds[rows[k]]).
double weighted_loss_and_grad(const ModelState& m, const Dataset& ds, std::span<const std::size_t> rows,
                              std::span<const double> weights, Eigen::VectorXd& grad_out);
// Gradient of the unweighted sum over rows.
Eigen::VectorXd grad(const ModelState& m, const Dataset& ds, std::span<const std::size_t> rows);
// Gradient of the loss of a single row.
Eigen::VectorXd instance_grad(const ModelState& m, const Dataset& ds, std::size_t row);
// Row k is the loss gradient of ds[rows[k]].
RowMatrix per_example_grads(const ModelState& m, const Dataset& ds, std::span<const std::size_t> rows);
// Hessian of sum_k weights[k] * L(ds[rows[k]]) times v, by forward-over-reverse
// differentiation (one R-forward and one R-backward pass).
Eigen::VectorXd hvp(const ModelState& m, const Dataset& ds, std::span<const std::size_t> rows,
                    std::span<const double> weights, const Eigen::VectorXd& v);
Eigen::VectorXd hvp(const ModelState& m, const Dataset& ds, std::span<const std::size_t> rows,
                    const Eigen::VectorXd& v);

// ---- Gauss-Newton decomposition -------------------------------------------

// The loss written as a convex univariate loss of a scalar output,
// L = lbar(fbar). Regression: fbar = f - y, lbar = fbar^2 / 2. Classification:
// fbar = log(p_y / (1 - p_y)) with p the softmax probabilities, lbar(u) =
// log(1 + exp(-u)), which reproduces the cross-entropy exactly.
struct ScalarOutput {
  double value = 0;   // fbar
  double dloss = 0;   // lbar'(fbar)
  double d2loss = 0;  // lbar''(fbar) >= 0
};

ScalarOutput scalar_output(const ModelState& m, const Eigen::VectorXd& x, double y);
// Row k is the gradient of fbar for ds[rows[k]].
RowMatrix scalar_output_grads(const ModelState& m, const Dataset& ds, std::span<const std::size_t> rows);

struct GaussNewtonContext {
  RowMatrix g;       // one fbar gradient per instance
  Eigen::VectorXd r;  // r_i = -lbar'(fbar_i)
  Eigen::VectorXd v;  // lbar''(fbar_i), the diagonal of V
  std::vector<std::size_t> instance_ids;

  std::size_t num_params() const { return static_cast<std::size_t>(g.cols()); }
  std::size_t num_instances() const { return static_cast<std::size_t>(g.rows()); }
};

GaussNewtonContext build_gauss_newton(const ModelState& m, const Dataset& ds, std::span<const std::size_t> rows);
// G^T V G v without forming the p x p matrix.
Eigen::VectorXd gnvp(const GaussNewtonContext& ctx, const Eigen::VectorXd& v);

// ---- persistence -----------------------------------------------------------

// Binary, little-endian: "FTATTRM1", u32 version, u32 task kind, u32 classes,
// u32 activation (0 = tanh), u32 width count, u64 widths[], u64 p, f64 params[p].
void save_model(const std::filesystem::path& path, const ModelState& m);
ModelState load_model(const std::filesystem::path& path);
std::string serialize_model(const ModelState& m);
ModelState deserialize_model(std::string_view bytes);

}  // namespace ftattr
