#include "alab/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>

#include "alab/errors.hpp"
#include "alab/simd/kernels.hpp"

namespace alab {

double Prng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// ---------------------------------------------------------------------------
// Matrix

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged initializer for matrix");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::random_normal(std::size_t rows, std::size_t cols, double stddev, Prng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = stddev * rng.normal();
  return m;
}

std::string Matrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const {
  // Exponent bits all set means inf or NaN; the branch-free scan vectorizes.
  constexpr std::uint64_t kExp = 0x7FF0000000000000ULL;
  bool bad = false;
  for (double v : data_) bad |= (std::bit_cast<std::uint64_t>(v) & kExp) == kExp;
  return !bad;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul shape mismatch: " + a.shape_string() + " * " + b.shape_string());
  }
  Matrix c(a.rows(), b.cols());
  simd::kernels().gemm_nn(a.rows(), b.cols(), a.cols(), a.data(), b.data(), c.data(), false);
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  }
  return t;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw DimensionError("add shape mismatch: " + a.shape_string() + " vs " + b.shape_string());
  Matrix c(a.rows(), a.cols());
  simd::kernels().add(a.size(), a.data(), b.data(), c.data());
  return c;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw DimensionError("sub shape mismatch: " + a.shape_string() + " vs " + b.shape_string());
  Matrix c(a.rows(), a.cols());
  simd::kernels().sub(a.size(), a.data(), b.data(), c.data());
  return c;
}

Matrix operator*(double s, const Matrix& a) {
  Matrix c(a.rows(), a.cols());
  simd::kernels().scale(a.size(), s, a.data(), c.data());
  return c;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw DimensionError("compare shape mismatch: " + a.shape_string() + " vs " + b.shape_string());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// ---------------------------------------------------------------------------
// Tape plumbing

const Matrix& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(*this);
}

double Var::item() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw ContractError("item() on non-scalar " + v.shape_string());
  return v(0, 0);
}

namespace {

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::leaf: return "leaf";
    case OpKind::constant: return "constant";
    case OpKind::matmul: return "matmul";
    case OpKind::matmul_nt: return "matmul_nt";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::silu: return "silu";
    case OpKind::log_sigmoid: return "log_sigmoid";
    case OpKind::transpose: return "transpose";
    case OpKind::log_softmax_rows: return "log_softmax_rows";
    case OpKind::causal_softmax_rows: return "causal_softmax_rows";
    case OpKind::gather_nll: return "gather_nll";
    case OpKind::rmsnorm_rows: return "rmsnorm_rows";
    case OpKind::embedding: return "embedding";
    case OpKind::slice_cols: return "slice_cols";
    case OpKind::concat_cols: return "concat_cols";
    case OpKind::sum: return "sum";
  }
  return "?";
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tape& tape_of(Var a) {
  if (!a.tape()) throw ContractError("use of an unbound Var");
  return *a.tape();
}

void require_same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw ContractError("operands recorded on different tapes");
}

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + " shape mismatch: " + a.shape_string() + " vs " + b.shape_string());
  }
}

}  // namespace

Var Tape::push(Node n) {
  if (!n.leaf && !n.value.all_finite()) {
    throw NonFiniteError(std::string("non-finite value produced by ") + op_name(n.kind));
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Tape::Node& Tape::node(Var v) { return nodes_[v.id()]; }
const Tape::Node& Tape::node(Var v) const { return nodes_[v.id()]; }

void Tape::check_open() const {
  if (consumed_) throw ContractError("tape already consumed by backward()");
}

void Tape::check_owner(Var v) const {
  if (v.tape() != this || v.id() >= nodes_.size()) throw ContractError("Var does not belong to this tape");
}

Var Tape::leaf(Tensor& t) {
  check_open();
  if (!t.value.all_finite()) throw NonFiniteError("non-finite value in leaf tensor");
  if (t.grad && !t.grad->same_shape(t.value)) throw DimensionError("leaf grad shape differs from value");
  Node n;
  n.kind = OpKind::leaf;
  n.leaf = &t;
  n.needs_grad = t.requires_grad;
  return push(std::move(n));
}

Var Tape::constant(Matrix m) {
  check_open();
  Node n;
  n.kind = OpKind::constant;
  n.value = std::move(m);
  return push(std::move(n));
}

const Matrix& Tape::value(Var v) const {
  check_owner(v);
  const Node& n = nodes_[v.id()];
  return n.leaf ? n.leaf->value : n.value;
}

// ---------------------------------------------------------------------------
// Forward ops

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = tape_of(a);
  t.check_open();
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul shape mismatch: " + av.shape_string() + " * " + bv.shape_string());
  }
  Tape::Node n;
  n.kind = OpKind::matmul;
  n.in0 = a.id();
  n.in1 = b.id();
  n.needs_grad = t.node(a).needs_grad || t.node(b).needs_grad;
  n.value = Matrix(av.rows(), bv.cols());
  simd::kernels().gemm_nn(av.rows(), bv.cols(), av.cols(), av.data(), bv.data(), n.value.data(), false);
  return t.push(std::move(n));
}

Var matmul_nt(Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = tape_of(a);
  t.check_open();
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols()) {
    throw DimensionError("matmul_nt shape mismatch: " + av.shape_string() + " * (" + bv.shape_string() + ")^T");
  }
  Tape::Node n;
  n.kind = OpKind::matmul_nt;
  n.in0 = a.id();
  n.in1 = b.id();
  n.needs_grad = t.node(a).needs_grad || t.node(b).needs_grad;
  n.value = Matrix(av.rows(), bv.rows());
  simd::gemm_nt(simd::kernels(), av.rows(), bv.rows(), av.cols(), av.data(), bv.data(), n.value.data(), false);
  return t.push(std::move(n));
}

namespace {

Var elementwise(OpKind kind, Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require_same_shape(op_name(kind), av, bv);
  Matrix out(av.rows(), av.cols());
  const auto& kt = simd::kernels();
  switch (kind) {
    case OpKind::add: kt.add(av.size(), av.data(), bv.data(), out.data()); break;
    case OpKind::sub: kt.sub(av.size(), av.data(), bv.data(), out.data()); break;
    default: kt.mul(av.size(), av.data(), bv.data(), out.data()); break;
  }
  return t.constant(std::move(out));
}

}  // namespace

Var add(Var a, Var b) {
  Var out = elementwise(OpKind::add, a, b);
  Tape& t = tape_of(a);
  auto& n = t.node(out);
  n.kind = OpKind::add;
  n.in0 = a.id();
  n.in1 = b.id();
  n.needs_grad = t.node(a).needs_grad || t.node(b).needs_grad;
  return out;
}

Var sub(Var a, Var b) {
  Var out = elementwise(OpKind::sub, a, b);
  Tape& t = tape_of(a);
  auto& n = t.node(out);
  n.kind = OpKind::sub;
  n.in0 = a.id();
  n.in1 = b.id();
  n.needs_grad = t.node(a).needs_grad || t.node(b).needs_grad;
  return out;
}

Var mul(Var a, Var b) {
  Var out = elementwise(OpKind::mul, a, b);
  Tape& t = tape_of(a);
  auto& n = t.node(out);
  n.kind = OpKind::mul;
  n.in0 = a.id();
  n.in1 = b.id();
  n.needs_grad = t.node(a).needs_grad || t.node(b).needs_grad;
  return out;
}

Var scale(Var a, double c) {
  Tape& t = tape_of(a);
  t.check_open();
  const Matrix& av = a.value();
  Tape::Node n;
  n.kind = OpKind::scale;
  n.in0 = a.id();
  n.scalar = c;
  n.needs_grad = t.node(a).needs_grad;
  n.value = Matrix(av.rows(), av.cols());
  simd::kernels().scale(av.size(), c, av.data(), n.value.data());
  return t.push(std::move(n));
}

Var sigmoid(Var a) {
  Tape& t = tape_of(a);
  t.check_open();
  const Matrix& av = a.value();
  Tape::Node n;
  n.kind = OpKind::sigmoid;
  n.in0 = a.id();
  n.needs_grad = t.node(a).needs_grad;
  n.value = Matrix(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) n.value.data()[i] = sigmoid_scalar(av.data()[i]);
  return t.push(std::move(n));
}

Var silu(Var a) {
  Tape& t = tape_of(a);
  t.check_open();
  const Matrix& av = a.value();
  Tape::Node n;
  n.kind = OpKind::silu;
  n.in0 = a.id();
  n.needs_grad = t.node(a).needs_grad;
  n.value = Matrix(av.rows(), av.cols());
  n.saved = Matrix(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double s = sigmoid_scalar(av.data()[i]);
    n.saved.data()[i] = s;
    n.value.data()[i] = av.data()[i] * s;
  }
  return t.push(std::move(n));
}

Var log_sigmoid(Var a) {
  Tape& t = tape_of(a);
  t.check_open();
  const Matrix& av = a.value();
  Tape::Node n;
  n.kind = OpKind::log_sigmoid;
  n.in0 = a.id();
  n.needs_grad = t.node(a).needs_grad;
  n.value = Matrix(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double x = av.data()[i];
    n.value.data()[i] = std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x)));
  }
  return t.push(std::move(n));
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  t.check_open();
  Tape::Node n;
  n.kind = OpKind::transpose;
  n.in0 = a.id();
  n.needs_grad = t.node(a).needs_grad;
  n.value = transpose(a.value());
  return t.push(std::move(n));
}

Var log_softmax_rows(Var a) {
  Tape& t = tape_of(a);
  t.check_open();
  const Matrix& av = a.value();
  Tape::Node n;
  n.kind = OpKind::log_softmax_rows;
  n.in0 = a.id();
  n.needs_grad = t.node(a).needs_grad;
  n.value = Matrix(av.rows(), av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    const auto row = av.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double lz = mx + std::log(z);
    for (std::size_t c = 0; c < av.cols(); ++c) n.value(r, c) = row[c] - lz;
  }
  return t.push(std::move(n));
}

Var causal_softmax_rows(Var a) {
  Tape& t = tape_of(a);
  t.check_open();
  const Matrix& av = a.value();
  if (av.rows() > av.cols()) {
    throw DimensionError("causal softmax needs rows <= cols, got " + av.shape_string());
  }
  const std::size_t offset = av.cols() - av.rows();
  Tape::Node n;
  n.kind = OpKind::causal_softmax_rows;
  n.in0 = a.id();
  n.needs_grad = t.node(a).needs_grad;
  n.value = Matrix(av.rows(), av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    const std::size_t visible = r + offset + 1;
    double mx = av(r, 0);
    for (std::size_t c = 1; c < visible; ++c) mx = std::max(mx, av(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < visible; ++c) {
      const double e = std::exp(av(r, c) - mx);
      n.value(r, c) = e;
      z += e;
    }
    for (std::size_t c = 0; c < visible; ++c) n.value(r, c) /= z;
  }
  return t.push(std::move(n));
}

Var gather_nll(Var logp, std::span<const std::size_t> targets, const std::vector<bool>& mask) {
  Tape& t = tape_of(logp);
  t.check_open();
  const Matrix& lv = logp.value();
  if (targets.size() != lv.rows() || mask.size() != lv.rows()) {
    throw DimensionError("gather_nll: targets/mask length must equal logp rows (" +
                         std::to_string(lv.rows()) + ")");
  }
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    if (!mask[r]) continue;
    if (targets[r] >= lv.cols()) {
      throw DimensionError("gather_nll: target " + std::to_string(targets[r]) + " out of range");
    }
    total += -lv(r, targets[r]);
    ++count;
  }
  if (count == 0) throw DegenerateBatchError("gather_nll: no unmasked rows");
  Tape::Node n;
  n.kind = OpKind::gather_nll;
  n.in0 = logp.id();
  n.needs_grad = t.node(logp).needs_grad;
  n.indices.assign(targets.begin(), targets.end());
  n.mask = mask;
  n.extra = count;
  n.value = Matrix(1, 1, total / static_cast<double>(count));
  return t.push(std::move(n));
}

Var rmsnorm_rows(Var x, Var gain, double eps) {
  require_same_tape(x, gain);
  Tape& t = tape_of(x);
  t.check_open();
  const Matrix& xv = x.value();
  const Matrix& gv = gain.value();
  if (gv.rows() != 1 || gv.cols() != xv.cols()) {
    throw DimensionError("rmsnorm gain must be 1x" + std::to_string(xv.cols()) + ", got " + gv.shape_string());
  }
  Tape::Node n;
  n.kind = OpKind::rmsnorm_rows;
  n.in0 = x.id();
  n.in1 = gain.id();
  n.scalar = eps;
  n.needs_grad = t.node(x).needs_grad || t.node(gain).needs_grad;
  n.value = Matrix(xv.rows(), xv.cols());
  n.saved = Matrix(xv.rows(), xv.cols() + 1);  // normalized x, then 1/rms
  const std::size_t d = xv.cols();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double ms = 0.0;
    for (std::size_t c = 0; c < d; ++c) ms += xv(r, c) * xv(r, c);
    ms /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(ms + eps);
    n.saved(r, d) = inv;
    for (std::size_t c = 0; c < d; ++c) {
      const double nx = xv(r, c) * inv;
      n.saved(r, c) = nx;
      n.value(r, c) = nx * gv(0, c);
    }
  }
  return t.push(std::move(n));
}

Var embedding(Var table, std::span<const std::size_t> ids) {
  Tape& t = tape_of(table);
  t.check_open();
  const Matrix& tv = table.value();
  Tape::Node n;
  n.kind = OpKind::embedding;
  n.in0 = table.id();
  n.needs_grad = t.node(table).needs_grad;
  n.indices.assign(ids.begin(), ids.end());
  n.value = Matrix(ids.size(), tv.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= tv.rows()) throw DimensionError("embedding id " + std::to_string(ids[r]) + " out of range");
    const auto src = tv.row(ids[r]);
    std::copy(src.begin(), src.end(), n.value.data() + r * tv.cols());
  }
  return t.push(std::move(n));
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(a);
  t.check_open();
  const Matrix& av = a.value();
  if (begin + count > av.cols()) {
    throw DimensionError("slice_cols [" + std::to_string(begin) + ", +" + std::to_string(count) +
                         ") outside " + av.shape_string());
  }
  Tape::Node n;
  n.kind = OpKind::slice_cols;
  n.in0 = a.id();
  n.extra = begin;
  n.needs_grad = t.node(a).needs_grad;
  n.value = Matrix(av.rows(), count);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    std::copy_n(av.data() + r * av.cols() + begin, count, n.value.data() + r * count);
  }
  return t.push(std::move(n));
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols of zero parts");
  Tape& t = tape_of(parts[0]);
  t.check_open();
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  Tape::Node n;
  n.kind = OpKind::concat_cols;
  for (Var p : parts) {
    require_same_tape(parts[0], p);
    if (p.rows() != rows) throw DimensionError("concat_cols row mismatch");
    cols += p.cols();
    n.inputs.push_back(p.id());
    n.indices.push_back(p.cols());
    n.needs_grad = n.needs_grad || t.node(p).needs_grad;
  }
  n.value = Matrix(rows, cols);
  std::size_t off = 0;
  for (Var p : parts) {
    const Matrix& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pv.data() + r * pv.cols(), pv.cols(), n.value.data() + r * cols + off);
    }
    off += pv.cols();
  }
  return t.push(std::move(n));
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  t.check_open();
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  Tape::Node n;
  n.kind = OpKind::sum;
  n.in0 = a.id();
  n.needs_grad = t.node(a).needs_grad;
  n.value = Matrix(1, 1, s);
  return t.push(std::move(n));
}

// ---------------------------------------------------------------------------
// Backward

void Tape::backward(Var loss) {
  check_owner(loss);
  check_open();
  const Matrix& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractError("backward() needs a scalar loss, got " + lv.shape_string());
  }
  consumed_ = true;

  std::vector<Matrix> grads(nodes_.size());
  grads[loss.id()] = Matrix(1, 1, 1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    if (grads[i].empty() || !nodes_[i].needs_grad) continue;
    backprop_node(i, grads);
    if (nodes_[i].kind != OpKind::leaf) grads[i] = Matrix();
  }

  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.kind != OpKind::leaf || !n.leaf->requires_grad) continue;
    Tensor& t = *n.leaf;
    if (!t.grad) t.grad = Matrix(t.rows(), t.cols());
    if (!grads[i].empty()) simd::kernels().axpy(t.grad->size(), 1.0, grads[i].data(), t.grad->data());
  }
}

void Tape::backprop_node(std::size_t idx, std::vector<Matrix>& grads) {
  const Node& n = nodes_[idx];
  const Matrix& g = grads[idx];
  const auto& kt = simd::kernels();

  // Returns the gradient buffer of input id, allocating zeros on first use,
  // or nullptr when that input does not need a gradient.
  auto acc = [&](std::uint32_t id) -> Matrix* {
    if (!nodes_[id].needs_grad) return nullptr;
    if (grads[id].empty()) {
      const Matrix& v = nodes_[id].leaf ? nodes_[id].leaf->value : nodes_[id].value;
      grads[id] = Matrix(v.rows(), v.cols());
    }
    return &grads[id];
  };
  auto val = [&](std::uint32_t id) -> const Matrix& {
    return nodes_[id].leaf ? nodes_[id].leaf->value : nodes_[id].value;
  };

  switch (n.kind) {
    case OpKind::leaf:
    case OpKind::constant:
      break;

    case OpKind::matmul: {
      const Matrix& a = val(n.in0);
      const Matrix& b = val(n.in1);
      if (Matrix* ga = acc(n.in0)) {  // dA += dC * B^T
        simd::gemm_nt(kt, a.rows(), a.cols(), b.cols(), g.data(), b.data(), ga->data(), true);
      }
      if (Matrix* gb = acc(n.in1)) {  // dB += A^T * dC
        kt.gemm_tn(b.rows(), b.cols(), a.rows(), a.data(), g.data(), gb->data(), true);
      }
      break;
    }

    case OpKind::matmul_nt: {
      const Matrix& a = val(n.in0);
      const Matrix& b = val(n.in1);
      if (Matrix* ga = acc(n.in0)) {  // dA += dC * B
        kt.gemm_nn(a.rows(), a.cols(), b.rows(), g.data(), b.data(), ga->data(), true);
      }
      if (Matrix* gb = acc(n.in1)) {  // dB += dC^T * A
        kt.gemm_tn(b.rows(), b.cols(), a.rows(), g.data(), a.data(), gb->data(), true);
      }
      break;
    }

    case OpKind::add:
      if (Matrix* ga = acc(n.in0)) kt.axpy(g.size(), 1.0, g.data(), ga->data());
      if (Matrix* gb = acc(n.in1)) kt.axpy(g.size(), 1.0, g.data(), gb->data());
      break;

    case OpKind::sub:
      if (Matrix* ga = acc(n.in0)) kt.axpy(g.size(), 1.0, g.data(), ga->data());
      if (Matrix* gb = acc(n.in1)) kt.axpy(g.size(), -1.0, g.data(), gb->data());
      break;

    case OpKind::mul: {
      Matrix tmp(g.rows(), g.cols());
      if (Matrix* ga = acc(n.in0)) {
        kt.mul(g.size(), g.data(), val(n.in1).data(), tmp.data());
        kt.axpy(g.size(), 1.0, tmp.data(), ga->data());
      }
      if (Matrix* gb = acc(n.in1)) {
        kt.mul(g.size(), g.data(), val(n.in0).data(), tmp.data());
        kt.axpy(g.size(), 1.0, tmp.data(), gb->data());
      }
      break;
    }

    case OpKind::scale:
      if (Matrix* ga = acc(n.in0)) kt.axpy(g.size(), n.scalar, g.data(), ga->data());
      break;

    case OpKind::sigmoid:
      if (Matrix* ga = acc(n.in0)) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double s = n.value.data()[i];
          ga->data()[i] += g.data()[i] * s * (1.0 - s);
        }
      }
      break;

    case OpKind::silu:
      if (Matrix* ga = acc(n.in0)) {
        const Matrix& x = val(n.in0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double s = n.saved.data()[i];
          ga->data()[i] += g.data()[i] * s * (1.0 + x.data()[i] * (1.0 - s));
        }
      }
      break;

    case OpKind::log_sigmoid:
      if (Matrix* ga = acc(n.in0)) {
        const Matrix& x = val(n.in0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga->data()[i] += g.data()[i] * sigmoid_scalar(-x.data()[i]);
        }
      }
      break;

    case OpKind::transpose:
      if (Matrix* ga = acc(n.in0)) {
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < g.cols(); ++c) (*ga)(c, r) += g(r, c);
        }
      }
      break;

    case OpKind::log_softmax_rows:
      if (Matrix* ga = acc(n.in0)) {
        for (std::size_t r = 0; r < g.rows(); ++r) {
          double gs = 0.0;
          for (std::size_t c = 0; c < g.cols(); ++c) gs += g(r, c);
          for (std::size_t c = 0; c < g.cols(); ++c) {
            (*ga)(r, c) += g(r, c) - std::exp(n.value(r, c)) * gs;
          }
        }
      }
      break;

    case OpKind::causal_softmax_rows:
      if (Matrix* ga = acc(n.in0)) {
        const std::size_t offset = g.cols() - g.rows();
        for (std::size_t r = 0; r < g.rows(); ++r) {
          const std::size_t visible = r + offset + 1;
          double dot = 0.0;
          for (std::size_t c = 0; c < visible; ++c) dot += g(r, c) * n.value(r, c);
          for (std::size_t c = 0; c < visible; ++c) {
            (*ga)(r, c) += n.value(r, c) * (g(r, c) - dot);
          }
        }
      }
      break;

    case OpKind::gather_nll:
      if (Matrix* ga = acc(n.in0)) {
        const double w = -g(0, 0) / static_cast<double>(n.extra);
        for (std::size_t r = 0; r < ga->rows(); ++r) {
          if (n.mask[r]) (*ga)(r, n.indices[r]) += w;
        }
      }
      break;

    case OpKind::rmsnorm_rows: {
      const Matrix& gain = val(n.in1);
      const std::size_t d = g.cols();
      if (Matrix* gg = acc(n.in1)) {
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < d; ++c) (*gg)(0, c) += g(r, c) * n.saved(r, c);
        }
      }
      if (Matrix* gx = acc(n.in0)) {
        for (std::size_t r = 0; r < g.rows(); ++r) {
          const double inv = n.saved(r, d);
          double dot = 0.0;
          for (std::size_t c = 0; c < d; ++c) dot += g(r, c) * gain(0, c) * n.saved(r, c);
          dot /= static_cast<double>(d);
          for (std::size_t c = 0; c < d; ++c) {
            (*gx)(r, c) += inv * (g(r, c) * gain(0, c) - n.saved(r, c) * dot);
          }
        }
      }
      break;
    }

    case OpKind::embedding:
      if (Matrix* ga = acc(n.in0)) {
        const std::size_t d = g.cols();
        for (std::size_t r = 0; r < n.indices.size(); ++r) {
          kt.axpy(d, 1.0, g.data() + r * d, ga->data() + n.indices[r] * d);
        }
      }
      break;

    case OpKind::slice_cols:
      if (Matrix* ga = acc(n.in0)) {
        for (std::size_t r = 0; r < g.rows(); ++r) {
          kt.axpy(g.cols(), 1.0, g.data() + r * g.cols(), ga->data() + r * ga->cols() + n.extra);
        }
      }
      break;

    case OpKind::concat_cols: {
      std::size_t off = 0;
      for (std::size_t p = 0; p < n.inputs.size(); ++p) {
        const std::size_t w = n.indices[p];
        if (Matrix* gp = acc(n.inputs[p])) {
          for (std::size_t r = 0; r < g.rows(); ++r) {
            kt.axpy(w, 1.0, g.data() + r * g.cols() + off, gp->data() + r * w);
          }
        }
        off += w;
      }
      break;
    }

    case OpKind::sum:
      if (Matrix* ga = acc(n.in0)) {
        const double s = g(0, 0);
        for (double& v : ga->values()) v += s;
      }
      break;
  }
}

// ---------------------------------------------------------------------------
// Finite differences

FiniteDiffReport finite_diff_check(const std::function<Var(Tape&)>& loss,
                                   std::span<Tensor* const> params, double h, double tol) {
  if (!(h > 0.0)) throw ContractError("finite_diff_check needs h > 0");
  for (Tensor* p : params) p->zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  auto eval = [&]() {
    Tape tape;
    return loss(tape).item();
  };

  FiniteDiffReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    const Matrix analytic = p.grad ? *p.grad : Matrix(p.rows(), p.cols());
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      double& x = p.value.data()[i];
      const double orig = x;
      x = orig + h;
      const double fp = eval();
      x = orig - h;
      const double fm = eval();
      x = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic.data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = pi;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace alab
