#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward pass. Parameters live outside
// the tape; backward() accumulates dLoss/dParameter into Parameter::grad.

#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hscmae/error.hpp"

namespace hscmae {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;
using Rng = std::mt19937_64;

std::string shape_str(const Matrix& m);

/// Learnable tensor with its gradient accumulator and AdamW moments.
struct Parameter {
  Matrix value;
  Matrix grad;
  Matrix adam_m;
  Matrix adam_v;

  Parameter() = default;
  explicit Parameter(Matrix init);

  void zero_grad() { grad.setZero(); }
};

enum class Mode { train, eval };

enum class OpKind {
  constant,
  parameter,
  matmul,
  matmul_nt,
  add,
  add_row,
  sub,
  mul,
  scale,
  tanh,
  exp,
  row_softmax,
  batch_norm,
  layer_norm,
  dropout,
  mse,
  row_sq_dist_mean,
  l2_normalize_rows,
  concat_cols,
  slice_cols,
  mask,
  stop_gradient,
  gradient_gate,
  sum,
  mean,
  soft_cross_entropy,
  custom,
};

const char* op_name(OpKind kind);

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  int id() const { return id_; }
  Tape& tape() const { return *tape_; }
  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  /// Scalar value of a 1x1 node.
  double item() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  /// Propagates the node's output gradient into its inputs via accumulate().
  using Backward = std::function<void(Tape&, const Matrix& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var param(Parameter& p);

  /// Records an operation. The backward closure is dropped when no input
  /// requires a gradient. Throws on non-finite values.
  Var record(OpKind kind, Matrix value, const std::vector<Var>& inputs, Backward backward);

  /// Seeds d(loss)/d(loss) = 1 and runs the reverse sweep. Node gradients are
  /// reset first; parameter gradients accumulate across calls.
  void backward(Var loss);

  const Matrix& value(Var v) const;
  /// Gradient of the last backward() root with respect to v (zeros if v was unreachable).
  Matrix grad(Var v) const;
  bool requires_grad(Var v) const;

  void accumulate(Var v, const Matrix& g);

  std::size_t size() const { return nodes_.size(); }
  OpKind kind(Var v) const { return node(v).kind; }

  /// Rows that l2_normalize_rows left at zero because their norm was below 1e-12.
  std::size_t zero_norm_rows() const { return zero_norm_rows_; }
  void note_zero_norm_rows(std::size_t n) { zero_norm_rows_ += n; }

 private:
  struct Node {
    OpKind kind = OpKind::constant;
    Matrix value;
    Matrix grad;
    bool has_grad = false;
    bool requires_grad = false;
    Parameter* param = nullptr;
    Backward backward;
  };

  Node& node(Var v);
  const Node& node(Var v) const;

  // deque keeps node references stable while the tape grows
  std::deque<Node> nodes_;
  std::size_t zero_norm_rows_ = 0;
};

// ---------------------------------------------------------------------------
// Primitive set
// ---------------------------------------------------------------------------

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
/// Adds a 1 x cols row to every row of a.
Var add_row(Var a, Var row);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var tanh(Var a);
Var exp(Var a);
/// Softmax of each row of a / temperature.
Var row_softmax(Var a, double temperature);

/// Running statistics of a batch-norm layer, each 1 x channels.
struct BatchNormStats {
  Matrix mean;
  Matrix var;
};

/// Batch statistics in train mode (updating `running` with `momentum`),
/// running statistics in eval mode. Train mode needs at least two rows.
Var batch_norm(Var x, Var gamma, Var beta, BatchNormStats& running, Mode mode,
               double momentum = 0.1, double eps = 1e-5);
/// Normalizes each row over its columns.
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
/// Inverted dropout: survivors are scaled by 1/(1-rate) in train mode; identity in eval mode.
Var dropout(Var x, double rate, Mode mode, Rng& rng);
/// Mean over all entries of (a-b)^2.
Var mse(Var a, Var b);
/// (1/rows) * sum_i ||a_i - b_i||^2.
Var row_sq_dist_mean(Var a, Var b);
/// Unit-norm rows; rows with norm < 1e-12 become zero (counted on the tape).
Var l2_normalize_rows(Var x);
/// rows(a) x rows(b) matrix of cosine similarities.
Var cosine_rows(Var a, Var b);
Var concat_cols(Var a, Var b);
Var slice_cols(Var a, Index begin, Index count);
/// Elementwise product with a constant matrix (no gradient into the mask).
Var apply_mask(Var x, const Matrix& mask);
/// Identity forward, zero backward.
Var stop_gradient(Var x);
/// Identity forward; backward multiplies the incoming gradient by `gate`.
Var gradient_gate(Var x, const Matrix& gate);
Var sum(Var x);
Var mean(Var x);
/// -(1/rows) * sum_ij targets_ij * log softmax(logits_i)_j
Var soft_cross_entropy(Var logits, const Matrix& targets);

// ---------------------------------------------------------------------------
// Finite-difference checking
// ---------------------------------------------------------------------------

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  bool passed = true;
};

/// Compares backward() against central differences. `build` must construct the
/// scalar loss from the current parameter values on the tape it is given and be
/// deterministic (reseed any dropout RNG inside). `max_coords_per_param` = 0
/// checks every coordinate; otherwise a seeded sample.
GradCheckReport grad_check(const std::function<Var(Tape&)>& build,
                           std::span<Parameter* const> params, double step = 1e-5,
                           double tolerance = 1e-4, std::size_t max_coords_per_param = 0,
                           std::uint64_t seed = 0);

}  // namespace hscmae
