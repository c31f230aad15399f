#include "ftattr/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "ftattr/error.hpp"
#include "ftattr/io.hpp"
#include "ftattr/rng.hpp"

namespace ftattr {

std::size_t Architecture::num_params() const {
  std::size_t p = 0;
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) p += (widths[k] + 1) * widths[k + 1];
  return p;
}

Architecture Architecture::mlp(std::size_t input_dim, std::vector<std::size_t> hidden, Task task) {
  Architecture arch;
  arch.task = task;
  arch.widths.push_back(input_dim);
  for (std::size_t h : hidden) arch.widths.push_back(h);
  arch.widths.push_back(static_cast<std::size_t>(task.output_dim()));
  return arch;
}

ModelState::ModelState(Architecture arch, Eigen::VectorXd params) : arch_(std::move(arch)), params_(std::move(params)) {
  if (arch_.widths.size() < 2) {
    throw ValidationError("model: architecture needs an input and an output width");
  }
  for (std::size_t w : arch_.widths) {
    if (w == 0) throw ValidationError("model: zero layer width");
  }
  if (arch_.output_dim() != static_cast<std::size_t>(arch_.task.output_dim())) {
    throw ValidationError("model: output width does not match the task");
  }
  if (static_cast<std::size_t>(params_.size()) != arch_.num_params()) {
    throw DimensionError("model: expected " + std::to_string(arch_.num_params()) + " parameters, got " +
                         std::to_string(params_.size()));
  }
  if (!params_.allFinite()) {
    throw ValidationError("model: non-finite parameter");
  }
}

ModelState ModelState::zeros(Architecture arch) {
  const auto p = static_cast<Eigen::Index>(arch.num_params());
  return ModelState(std::move(arch), Eigen::VectorXd::Zero(p));
}

ModelState ModelState::initialize(Architecture arch, std::uint64_t seed) {
  Eigen::VectorXd params(static_cast<Eigen::Index>(arch.num_params()));
  CounterRng rng(derive_key(seed, {rng_tag::kInit}));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < arch.num_layers(); ++k) {
    const std::size_t in = arch.widths[k];
    const std::size_t out = arch.widths[k + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (std::size_t j = 0; j < (in + 1) * out; ++j) {
      params(static_cast<Eigen::Index>(offset + j)) = (2.0 * rng.uniform() - 1.0) * bound;
    }
    offset += (in + 1) * out;
  }
  return ModelState(std::move(arch), std::move(params));
}

std::vector<ParamBlock> ModelState::blocks() const {
  std::vector<ParamBlock> out;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < arch_.num_layers(); ++k) {
    ParamBlock b{offset, arch_.widths[k], arch_.widths[k + 1]};
    offset += b.size();
    out.push_back(b);
  }
  return out;
}

namespace {

using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;

ConstRowMap weights_of(const Eigen::VectorXd& params, const ParamBlock& b) {
  return ConstRowMap(params.data() + b.offset, static_cast<Eigen::Index>(b.out), static_cast<Eigen::Index>(b.in));
}

Eigen::Map<const Eigen::VectorXd> bias_of(const Eigen::VectorXd& params, const ParamBlock& b) {
  return Eigen::Map<const Eigen::VectorXd>(params.data() + b.bias_offset(), static_cast<Eigen::Index>(b.out));
}

struct Batch {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
};

Batch gather(const Dataset& ds, std::span<const std::size_t> rows) {
  Batch b{Eigen::MatrixXd(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(ds.dim())),
          Eigen::VectorXd(static_cast<Eigen::Index>(rows.size()))};
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= ds.size()) throw DimensionError("model: row index out of range");
    b.x.row(static_cast<Eigen::Index>(k)) = ds.features().row(static_cast<Eigen::Index>(rows[k]));
    b.y(static_cast<Eigen::Index>(k)) = ds.target(rows[k]);
  }
  return b;
}

void check_input(const ModelState& m, Eigen::Index cols) {
  if (static_cast<std::size_t>(cols) != m.arch().input_dim()) {
    throw DimensionError("model: input has " + std::to_string(cols) + " features, model expects " +
                         std::to_string(m.arch().input_dim()));
  }
}

// a[0] = x, a[k] = tanh(z_k) for hidden layers, a[L] = linear output.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> a;
};

ForwardCache run_forward(const ModelState& m, const Eigen::MatrixXd& x) {
  check_input(m, x.cols());
  const auto blocks = m.blocks();
  ForwardCache cache;
  cache.a.reserve(blocks.size() + 1);
  cache.a.push_back(x);
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    Eigen::MatrixXd z = cache.a.back() * weights_of(m.params(), blocks[k]).transpose();
    z.rowwise() += bias_of(m.params(), blocks[k]).transpose();
    if (k + 1 < blocks.size()) z = z.array().tanh().matrix();
    cache.a.push_back(std::move(z));
  }
  return cache;
}

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& o) {
  const double mx = o.maxCoeff();
  return mx + std::log((o.array() - mx).exp().sum());
}

Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& o) {
  Eigen::VectorXd e = (o.array() - o.maxCoeff()).exp().matrix();
  return e / e.sum();
}

// dL/d(output) for every row, scaled by the row weight.
Eigen::MatrixXd loss_cotangent(const Task& task, const Eigen::MatrixXd& out, const Eigen::VectorXd& y,
                               std::span<const double> weights) {
  Eigen::MatrixXd d(out.rows(), out.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double w = weights[static_cast<std::size_t>(i)];
    if (task.is_classification()) {
      Eigen::VectorXd p = softmax(out.row(i).transpose());
      p(static_cast<Eigen::Index>(y(i))) -= 1.0;
      d.row(i) = w * p.transpose();
    } else {
      d(i, 0) = w * (out(i, 0) - y(i));
    }
  }
  return d;
}

// Accumulates sum_i delta_i^T a_i into grad (or writes per-row gradients into
// per_row when it is non-null) given dL/d(output) rows.
void run_backward(const ModelState& m, const ForwardCache& cache, Eigen::MatrixXd delta, Eigen::VectorXd* grad,
                  RowMatrix* per_row) {
  const auto blocks = m.blocks();
  for (std::size_t kk = blocks.size(); kk-- > 0;) {
    const ParamBlock& b = blocks[kk];
    const Eigen::MatrixXd& input = cache.a[kk];
    const auto out = static_cast<Eigen::Index>(b.out);
    const auto in = static_cast<Eigen::Index>(b.in);
    if (grad != nullptr) {
      RowMap(grad->data() + b.offset, out, in).noalias() += delta.transpose() * input;
      Eigen::Map<Eigen::VectorXd>(grad->data() + b.bias_offset(), out) += delta.colwise().sum().transpose();
    }
    if (per_row != nullptr) {
      for (Eigen::Index i = 0; i < delta.rows(); ++i) {
        double* row = per_row->row(i).data();
        RowMap(row + b.offset, out, in).noalias() = delta.row(i).transpose() * input.row(i);
        Eigen::Map<Eigen::RowVectorXd>(row + b.bias_offset(), out) = delta.row(i);
      }
    }
    if (kk > 0) {
      Eigen::MatrixXd ga = delta * weights_of(m.params(), b);
      const Eigen::MatrixXd& act = cache.a[kk];
      delta = ga.array() * (1.0 - act.array().square());
    }
  }
}

std::vector<double> unit_weights(std::size_t n) { return std::vector<double>(n, 1.0); }

}  // namespace

Eigen::MatrixXd forward_batch(const ModelState& m, const Eigen::MatrixXd& x) {
  return std::move(run_forward(m, x).a.back());
}

Eigen::VectorXd forward(const ModelState& m, const Eigen::VectorXd& x) {
  return forward_batch(m, x.transpose()).row(0).transpose();
}

double loss_of_output(const Task& task, const Eigen::Ref<const Eigen::VectorXd>& output, double y) {
  if (task.is_classification()) {
    return log_sum_exp(output) - output(static_cast<Eigen::Index>(y));
  }
  const double e = output(0) - y;
  return 0.5 * e * e;
}

double loss(const ModelState& m, const Eigen::VectorXd& x, double y) {
  return loss_of_output(m.arch().task, forward(m, x), y);
}

Eigen::VectorXd losses(const ModelState& m, const Dataset& ds, std::span<const std::size_t> rows) {
  Eigen::MatrixXd out;
  Eigen::VectorXd y;
  if (rows.empty()) {
    out = forward_batch(m, ds.features());
    y = ds.targets();
  } else {
    Batch b = gather(ds, rows);
    out = forward_batch(m, b.x);
    y = std::move(b.y);
  }
  Eigen::VectorXd l(out.rows());
  for (Eigen::Index i = 0; i < out.rows(); ++i) l(i) = loss_of_output(m.arch().task, out.row(i).transpose(), y(i));
  return l;
}

double mean_loss(const ModelState& m, const Dataset& ds) {
  if (ds.size() == 0) return 0.0;
  return losses(m, ds).mean();
}

double weighted_loss_and_grad(const ModelState& m, const Dataset& ds, std::span<const std::size_t> rows,
                              std::span<const double> weights, Eigen::VectorXd& grad_out) {
  if (weights.size() != rows.size()) {
    throw DimensionError("grad: weights length does not match batch");
  }
  grad_out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.num_params()));
  if (rows.empty()) return 0.0;
  const Batch b = gather(ds, rows);
  const ForwardCache cache = run_forward(m, b.x);
  const Eigen::MatrixXd& out = cache.a.back();
  double total = 0.0;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    total += weights[static_cast<std::size_t>(i)] * loss_of_output(m.arch().task, out.row(i).transpose(), b.y(i));
  }
  run_backward(m, cache, loss_cotangent(m.arch().task, out, b.y, weights), &grad_out, nullptr);
  return total;
}

Eigen::VectorXd grad(const ModelState& m, const Dataset& ds, std::span<const std::size_t> rows,
                     std::span<const double> weights) {
  Eigen::VectorXd g;
  weighted_loss_and_grad(m, ds, rows, weights, g);
  return g;
}

Eigen::VectorXd grad(const ModelState& m, const Dataset& ds, std::span<const std::size_t> rows) {
  const auto w = unit_weights(rows.size());
  return grad(m, ds, rows, w);
}

Eigen::VectorXd instance_grad(const ModelState& m, const Dataset& ds, std::size_t row) {
  const std::size_t rows[] = {row};
  return grad(m, ds, rows);
}

RowMatrix per_example_grads(const ModelState& m, const Dataset& ds, std::span<const std::size_t> rows) {
  RowMatrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(m.num_params()));
  if (rows.empty()) return out;
  const Batch b = gather(ds, rows);
  const ForwardCache cache = run_forward(m, b.x);
  const auto w = unit_weights(rows.size());
  run_backward(m, cache, loss_cotangent(m.arch().task, cache.a.back(), b.y, w), nullptr, &out);
  return out;
}

Eigen::VectorXd hvp(const ModelState& m, const Dataset& ds, std::span<const std::size_t> rows,
                    std::span<const double> weights, const Eigen::VectorXd& v) {
  if (weights.size() != rows.size()) {
    throw DimensionError("hvp: weights length does not match batch");
  }
  if (static_cast<std::size_t>(v.size()) != m.num_params()) {
    throw DimensionError("hvp: direction has wrong length");
  }
  Eigen::VectorXd hv = Eigen::VectorXd::Zero(v.size());
  if (rows.empty()) return hv;
  const Batch b = gather(ds, rows);
  const ForwardCache cache = run_forward(m, b.x);
  const auto blocks = m.blocks();
  const std::size_t layers = blocks.size();
  const Eigen::Index batch = b.x.rows();

  // R-forward: directional derivatives of pre-activations (rz) and activations (ra).
  std::vector<Eigen::MatrixXd> ra(layers + 1);
  std::vector<Eigen::MatrixXd> rz(layers);
  ra[0] = Eigen::MatrixXd::Zero(batch, b.x.cols());
  for (std::size_t k = 0; k < layers; ++k) {
    const ParamBlock& blk = blocks[k];
    Eigen::MatrixXd z = ra[k] * weights_of(m.params(), blk).transpose();
    z.noalias() += cache.a[k] * weights_of(v, blk).transpose();
    z.rowwise() += bias_of(v, blk).transpose();
    if (k + 1 < layers) {
      ra[k + 1] = z.array() * (1.0 - cache.a[k + 1].array().square());
    } else {
      ra[k + 1] = z;
    }
    rz[k] = std::move(z);
  }

  // Output cotangent and its directional derivative (loss Hessian times R(output)).
  const Eigen::MatrixXd& out = cache.a.back();
  Eigen::MatrixXd delta = loss_cotangent(m.arch().task, out, b.y, weights);
  Eigen::MatrixXd rdelta(out.rows(), out.cols());
  for (Eigen::Index i = 0; i < batch; ++i) {
    const double w = weights[static_cast<std::size_t>(i)];
    if (m.arch().task.is_classification()) {
      const Eigen::VectorXd p = softmax(out.row(i).transpose());
      const Eigen::VectorXd u = ra[layers].row(i).transpose();
      rdelta.row(i) = w * (p.cwiseProduct(u) - p * p.dot(u)).transpose();
    } else {
      rdelta(i, 0) = w * ra[layers](i, 0);
    }
  }

  for (std::size_t kk = layers; kk-- > 0;) {
    const ParamBlock& blk = blocks[kk];
    const auto o = static_cast<Eigen::Index>(blk.out);
    const auto in = static_cast<Eigen::Index>(blk.in);
    RowMap hw(hv.data() + blk.offset, o, in);
    hw.noalias() += rdelta.transpose() * cache.a[kk];
    hw.noalias() += delta.transpose() * ra[kk];
    Eigen::Map<Eigen::VectorXd>(hv.data() + blk.bias_offset(), o) += rdelta.colwise().sum().transpose();
    if (kk > 0) {
      const auto w_k = weights_of(m.params(), blk);
      Eigen::MatrixXd ga = delta * w_k;
      Eigen::MatrixXd rga = rdelta * w_k;
      rga.noalias() += delta * weights_of(v, blk);
      const Eigen::ArrayXXd act = cache.a[kk].array();
      const Eigen::ArrayXXd d1 = 1.0 - act.square();
      const Eigen::ArrayXXd d2 = -2.0 * act * d1;
      rdelta = (rga.array() * d1 + ga.array() * d2 * rz[kk - 1].array()).matrix();
      delta = (ga.array() * d1).matrix();
    }
  }
  return hv;
}

Eigen::VectorXd hvp(const ModelState& m, const Dataset& ds, std::span<const std::size_t> rows,
                    const Eigen::VectorXd& v) {
  const auto w = unit_weights(rows.size());
  return hvp(m, ds, rows, w, v);
}

// ---- Gauss-Newton ----------------------------------------------------------

namespace {

// fbar, lbar', lbar'' and d fbar / d output for one output row.
ScalarOutput scalar_from_output(const Task& task, const Eigen::VectorXd& o, double y, Eigen::VectorXd* dfbar) {
  ScalarOutput s;
  if (!task.is_classification()) {
    s.value = o(0) - y;
    s.dloss = s.value;
    s.d2loss = 1.0;
    if (dfbar) *dfbar = Eigen::VectorXd::Ones(1);
    return s;
  }
  const auto target = static_cast<Eigen::Index>(y);
  const Eigen::Index k = o.size();
  // fbar = o_y - logsumexp_{c != y} o_c; the others' softmax gives its gradient.
  Eigen::VectorXd others(k - 1);
  for (Eigen::Index c = 0, j = 0; c < k; ++c) {
    if (c != target) others(j++) = o(c);
  }
  const double lse_others = log_sum_exp(others);
  s.value = o(target) - lse_others;
  // p_y = sigmoid(fbar); lbar'(u) = -sigmoid(-u), lbar''(u) = sigmoid(u) sigmoid(-u).
  const double sig_neg = 1.0 / (1.0 + std::exp(s.value));
  const double sig_pos = 1.0 / (1.0 + std::exp(-s.value));
  s.dloss = -sig_neg;
  s.d2loss = sig_pos * sig_neg;
  if (dfbar) {
    const Eigen::VectorXd q = softmax(others);
    dfbar->resize(k);
    for (Eigen::Index c = 0, j = 0; c < k; ++c) {
      (*dfbar)(c) = (c == target) ? 1.0 : -q(j++);
    }
  }
  return s;
}

}  // namespace

ScalarOutput scalar_output(const ModelState& m, const Eigen::VectorXd& x, double y) {
  return scalar_from_output(m.arch().task, forward(m, x), y, nullptr);
}

RowMatrix scalar_output_grads(const ModelState& m, const Dataset& ds, std::span<const std::size_t> rows) {
  RowMatrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(m.num_params()));
  if (rows.empty()) return out;
  const Batch b = gather(ds, rows);
  const ForwardCache cache = run_forward(m, b.x);
  Eigen::MatrixXd d(b.x.rows(), static_cast<Eigen::Index>(m.arch().output_dim()));
  Eigen::VectorXd df;
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    scalar_from_output(m.arch().task, cache.a.back().row(i).transpose(), b.y(i), &df);
    d.row(i) = df.transpose();
  }
  run_backward(m, cache, std::move(d), nullptr, &out);
  return out;
}

GaussNewtonContext build_gauss_newton(const ModelState& m, const Dataset& ds, std::span<const std::size_t> rows) {
  GaussNewtonContext ctx;
  ctx.g = scalar_output_grads(m, ds, rows);
  ctx.r.resize(static_cast<Eigen::Index>(rows.size()));
  ctx.v.resize(static_cast<Eigen::Index>(rows.size()));
  ctx.instance_ids.assign(rows.begin(), rows.end());
  if (!rows.empty()) {
    const Batch b = gather(ds, rows);
    const Eigen::MatrixXd out = forward_batch(m, b.x);
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const ScalarOutput s = scalar_from_output(m.arch().task, out.row(i).transpose(), b.y(i), nullptr);
      ctx.r(i) = -s.dloss;
      ctx.v(i) = s.d2loss;
    }
  }
  return ctx;
}

Eigen::VectorXd gnvp(const GaussNewtonContext& ctx, const Eigen::VectorXd& v) {
  if (v.size() != ctx.g.cols()) {
    throw DimensionError("gnvp: direction has wrong length");
  }
  const Eigen::VectorXd u = (ctx.g * v).cwiseProduct(ctx.v);
  return ctx.g.transpose() * u;
}

// ---- persistence -----------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'F', 'T', 'A', 'T', 'T', 'R', 'M', '1'};
constexpr std::uint32_t kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little, "model files are little-endian");

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) {
    throw ValidationError("model file truncated");
  }
  T value;
  std::memcpy(&value, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

std::string serialize_model(const ModelState& m) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kFormatVersion);
  put<std::uint32_t>(out, m.arch().task.is_classification() ? 1U : 0U);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.arch().task.num_classes));
  put<std::uint32_t>(out, 0U);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.arch().widths.size()));
  for (std::size_t w : m.arch().widths) put<std::uint64_t>(out, w);
  put<std::uint64_t>(out, m.num_params());
  for (Eigen::Index j = 0; j < m.params().size(); ++j) put<double>(out, m.params()(j));
  return out;
}

ModelState deserialize_model(std::string_view bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ValidationError("not a model file (bad magic)");
  }
  std::size_t pos = sizeof(kMagic);
  if (take<std::uint32_t>(bytes, pos) != kFormatVersion) throw ValidationError("unsupported model file version");
  const auto kind = take<std::uint32_t>(bytes, pos);
  const auto classes = take<std::uint32_t>(bytes, pos);
  if (take<std::uint32_t>(bytes, pos) != 0U) throw ValidationError("unsupported activation in model file");
  const auto count = take<std::uint32_t>(bytes, pos);
  Architecture arch;
  arch.task = kind == 1U ? Task::classification(static_cast<int>(classes)) : Task::regression();
  for (std::uint32_t k = 0; k < count; ++k) arch.widths.push_back(static_cast<std::size_t>(take<std::uint64_t>(bytes, pos)));
  const auto p = take<std::uint64_t>(bytes, pos);
  if (p != arch.num_params()) throw ValidationError("model file parameter count does not match architecture");
  Eigen::VectorXd params(static_cast<Eigen::Index>(p));
  for (std::uint64_t j = 0; j < p; ++j) params(static_cast<Eigen::Index>(j)) = take<double>(bytes, pos);
  if (pos != bytes.size()) throw ValidationError("trailing bytes in model file");
  return ModelState(std::move(arch), std::move(params));
}

void save_model(const std::filesystem::path& path, const ModelState& m) { write_text_file(path, serialize_model(m)); }

ModelState load_model(const std::filesystem::path& path) { return deserialize_model(read_text_file(path)); }

}  // namespace ftattr
