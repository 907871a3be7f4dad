#pragma once

// Dense fp64 matrices and a minimal reverse-mode tape.
//
// A Tensor is a trainable (or frozen) leaf. Graph values live on a Tape and
// are addressed through Var handles. Each Tape supports exactly one
// backward() call; nodes are processed in strict reverse append order and
// leaf gradients accumulate additively into Tensor::grad.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "alab/prng.hpp"

namespace alab {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  // Entries drawn from N(0, stddev^2).
  static Matrix random_normal(std::size_t rows, std::size_t cols, double stddev, Prng& rng);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::string shape_string() const;

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  // Exact element equality (fp64 ==), shapes included.
  bool operator==(const Matrix& o) const = default;

  void fill(double v);
  bool all_finite() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);

// Leaf parameter. grad, when present, has the shape of value.
struct Tensor {
  Matrix value;
  std::optional<Matrix> grad;
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(Matrix v, bool trainable = false) : value(std::move(v)), requires_grad(trainable) {}

  std::size_t rows() const { return value.rows(); }
  std::size_t cols() const { return value.cols(); }
  void zero_grad() { grad.reset(); }
};

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::uint32_t id() const { return id_; }
  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  // Scalar convenience; requires a 1x1 value.
  double item() const;

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

enum class OpKind : std::uint8_t {
  leaf,
  constant,
  matmul,
  matmul_nt,
  add,
  sub,
  mul,
  scale,
  sigmoid,
  silu,
  log_sigmoid,
  transpose,
  log_softmax_rows,
  causal_softmax_rows,
  gather_nll,
  rmsnorm_rows,
  embedding,
  slice_cols,
  concat_cols,
  sum,
};

class Tape {
 public:
  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Records a reference to t; t must outlive the tape.
  Var leaf(Tensor& t);
  Var constant(Matrix m);

  const Matrix& value(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Populates grad of every requires_grad leaf recorded on this tape.
  // Leaves unreachable from loss receive an all-zero grad.
  void backward(Var loss);

 private:
  struct Node {
    OpKind kind = OpKind::constant;
    std::uint32_t in0 = 0;
    std::uint32_t in1 = 0;
    bool needs_grad = false;
    Matrix value;
    Tensor* leaf = nullptr;
    double scalar = 0.0;
    std::size_t extra = 0;
    std::vector<std::uint32_t> inputs;   // concat_cols
    std::vector<std::size_t> indices;    // targets, ids, slice widths
    std::vector<bool> mask;
    Matrix saved;                        // op-specific cache
  };

  Var push(Node node);
  Node& node(Var v);
  const Node& node(Var v) const;
  void check_open() const;
  void check_owner(Var v) const;
  void backprop_node(std::size_t idx, std::vector<Matrix>& grads);

  std::vector<Node> nodes_;
  bool consumed_ = false;

  friend Var matmul(Var, Var);
  friend Var matmul_nt(Var, Var);
  friend Var add(Var, Var);
  friend Var sub(Var, Var);
  friend Var mul(Var, Var);
  friend Var scale(Var, double);
  friend Var sigmoid(Var);
  friend Var silu(Var);
  friend Var log_sigmoid(Var);
  friend Var transpose(Var);
  friend Var log_softmax_rows(Var);
  friend Var causal_softmax_rows(Var);
  friend Var gather_nll(Var, std::span<const std::size_t>, const std::vector<bool>&);
  friend Var rmsnorm_rows(Var, Var, double);
  friend Var embedding(Var, std::span<const std::size_t>);
  friend Var slice_cols(Var, std::size_t, std::size_t);
  friend Var concat_cols(std::span<const Var>);
  friend Var sum(Var);
};

// a(m x k) * b(k x n)
Var matmul(Var a, Var b);
// a(m x k) * b(n x k)^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var sigmoid(Var a);
// x * sigmoid(x)
Var silu(Var a);
// log(sigmoid(x)), stable for large |x|
Var log_sigmoid(Var a);
Var transpose(Var a);
Var log_softmax_rows(Var a);
// Row i may attend to columns j <= i + (cols - rows); later columns get zero
// probability.
Var causal_softmax_rows(Var a);
// Mean over rows with mask[r] of -logp(r, targets[r]); 1x1 result.
Var gather_nll(Var logp, std::span<const std::size_t> targets, const std::vector<bool>& mask);
// x / sqrt(mean(x^2) + eps) * gain, gain is 1 x cols.
Var rmsnorm_rows(Var x, Var gain, double eps = 1e-5);
// Row r of the result is row ids[r] of table.
Var embedding(Var table, std::span<const std::size_t> ids);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var concat_cols(std::span<const Var> parts);
// Sum of all entries; 1x1 result.
Var sum(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = true;
};

// Compares tape gradients against central differences for every entry of
// every listed parameter. Relative error uses the denominator
// max(|analytic|, |numeric|, 1e-8). `loss` must build a scalar on the tape it
// is handed, recording the parameters as leaves.
FiniteDiffReport finite_diff_check(const std::function<Var(Tape&)>& loss,
                                   std::span<Tensor* const> params, double h, double tol);

}  // namespace alab
