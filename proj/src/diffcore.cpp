#include "hscmae/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace hscmae {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

Parameter::Parameter(Matrix init)
    : value(std::move(init)),
      grad(Matrix::Zero(value.rows(), value.cols())),
      adam_m(Matrix::Zero(value.rows(), value.cols())),
      adam_v(Matrix::Zero(value.rows(), value.cols())) {}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::constant: return "constant";
    case OpKind::parameter: return "parameter";
    case OpKind::matmul: return "matmul";
    case OpKind::matmul_nt: return "matmul_nt";
    case OpKind::add: return "add";
    case OpKind::add_row: return "add_row";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::tanh: return "tanh";
    case OpKind::exp: return "exp";
    case OpKind::row_softmax: return "row_softmax";
    case OpKind::batch_norm: return "batch_norm";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::dropout: return "dropout";
    case OpKind::mse: return "mse";
    case OpKind::row_sq_dist_mean: return "row_sq_dist_mean";
    case OpKind::l2_normalize_rows: return "l2_normalize_rows";
    case OpKind::concat_cols: return "concat_cols";
    case OpKind::slice_cols: return "slice_cols";
    case OpKind::mask: return "mask";
    case OpKind::stop_gradient: return "stop_gradient";
    case OpKind::gradient_gate: return "gradient_gate";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::soft_cross_entropy: return "soft_cross_entropy";
    case OpKind::custom: return "custom";
  }
  return "unknown";
}

const Matrix& Var::value() const { return tape_->value(*this); }

double Var::item() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) {
    fail(ErrorKind::shape, "item() on non-scalar " + shape_str(v));
  }
  return v(0, 0);
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tape::Node& Tape::node(Var v) {
  if (v.tape_ != this || v.id_ < 0 || static_cast<std::size_t>(v.id_) >= nodes_.size()) {
    fail(ErrorKind::usage, "variable does not belong to this tape");
  }
  return nodes_[static_cast<std::size_t>(v.id_)];
}

const Tape::Node& Tape::node(Var v) const { return const_cast<Tape*>(this)->node(v); }

Var Tape::constant(Matrix value) {
  if (!value.allFinite()) fail(ErrorKind::numeric, "non-finite value in constant");
  Node n;
  n.kind = OpKind::constant;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::param(Parameter& p) {
  Node n;
  n.kind = OpKind::parameter;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
    p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(OpKind kind, Matrix value, const std::vector<Var>& inputs, Backward backward) {
  if (!value.allFinite()) {
    fail(ErrorKind::numeric, std::string("non-finite value produced by ") + op_name(kind));
  }
  Node n;
  n.kind = kind;
  n.value = std::move(value);
  for (const Var& in : inputs) n.requires_grad = n.requires_grad || node(in).requires_grad;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Matrix& Tape::value(Var v) const { return node(v).value; }

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Matrix Tape::grad(Var v) const {
  const Node& n = node(v);
  if (!n.has_grad) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = node(v);
  if (!n.requires_grad) return;
  if (g.rows() != n.value.rows() || g.cols() != n.value.cols()) {
    fail(ErrorKind::shape, std::string("gradient shape ") + shape_str(g) + " does not match " +
                               op_name(n.kind) + " value " + shape_str(n.value));
  }
  if (n.has_grad) {
    n.grad += g;
  } else {
    n.grad = g;
    n.has_grad = true;
  }
}

void Tape::backward(Var loss) {
  const Node& root = node(loss);
  if (root.value.rows() != 1 || root.value.cols() != 1) {
    fail(ErrorKind::shape, "backward() needs a 1x1 root, got " + shape_str(root.value));
  }
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  Node& r = node(loss);
  if (!r.requires_grad) return;
  r.grad = Matrix::Ones(1, 1);
  r.has_grad = true;
  for (int id = loss.id_; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad) continue;
    if (n.param != nullptr) {
      n.param->grad += n.grad;
    } else if (n.backward) {
      // copy: the closure may not hold a reference into a node it accumulates into
      const Matrix g = n.grad;
      n.backward(*this, g);
    }
  }
}

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

namespace {

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    fail(ErrorKind::shape, std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

void require_same_tape(const char* op, Var a, Var b) {
  if (&a.tape() != &b.tape()) fail(ErrorKind::usage, std::string(op) + ": operands on different tapes");
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape("matmul", a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) {
    fail(ErrorKind::shape, "matmul: inner dimensions differ " + shape_str(av) + " * " + shape_str(bv));
  }
  Matrix out = av * bv;
  return a.tape().record(OpKind::matmul, std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.requires_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  require_same_tape("matmul_nt", a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols()) {
    fail(ErrorKind::shape, "matmul_nt: column counts differ " + shape_str(av) + " vs " + shape_str(bv));
  }
  Matrix out = av * bv.transpose();
  return a.tape().record(OpKind::matmul_nt, std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.value());
    if (t.requires_grad(b)) t.accumulate(b, g.transpose() * a.value());
  });
}

Var add(Var a, Var b) {
  require_same_tape("add", a, b);
  require_same_shape("add", a.value(), b.value());
  Matrix out = a.value() + b.value();
  return a.tape().record(OpKind::add, std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var add_row(Var a, Var row) {
  require_same_tape("add_row", a, row);
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    fail(ErrorKind::shape, "add_row: row " + shape_str(rv) + " does not broadcast over " + shape_str(av));
  }
  Matrix out = av.rowwise() + rv.row(0);
  return a.tape().record(OpKind::add_row, std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

Var sub(Var a, Var b) {
  require_same_tape("sub", a, b);
  require_same_shape("sub", a.value(), b.value());
  Matrix out = a.value() - b.value();
  return a.tape().record(OpKind::sub, std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(b)) t.accumulate(b, -g);
  });
}

Var mul(Var a, Var b) {
  require_same_tape("mul", a, b);
  require_same_shape("mul", a.value(), b.value());
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape().record(OpKind::mul, std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var scale(Var a, double s) {
  Matrix out = a.value() * s;
  return a.tape().record(OpKind::scale, std::move(out), {a},
                         [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
}

Var tanh(Var a) {
  Matrix out = a.value().array().tanh().matrix();
  Matrix yv = out;
  return a.tape().record(OpKind::tanh, std::move(out), {a}, [a, yv](Tape& t, const Matrix& g) {
    t.accumulate(a, (g.array() * (1.0 - yv.array().square())).matrix());
  });
}

Var exp(Var a) {
  Matrix out = a.value().array().exp().matrix();
  Matrix yv = out;
  return a.tape().record(OpKind::exp, std::move(out), {a}, [a, yv](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(yv));
  });
}

namespace {

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - mx).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

}  // namespace

Var row_softmax(Var a, double temperature) {
  if (!(temperature > 0.0)) fail(ErrorKind::usage, "row_softmax: temperature must be positive");
  Matrix p = softmax_rows(a.value() / temperature);
  Matrix pv = p;
  return a.tape().record(OpKind::row_softmax, std::move(p), {a}, [a, pv, temperature](Tape& t, const Matrix& g) {
    Matrix inner = g.cwiseProduct(pv).rowwise().sum();
    Matrix d = pv.cwiseProduct(g - inner.replicate(1, g.cols())) / temperature;
    t.accumulate(a, d);
  });
}

Var batch_norm(Var x, Var gamma, Var beta, BatchNormStats& running, Mode mode, double momentum, double eps) {
  const Matrix& xv = x.value();
  const Index n = xv.rows();
  const Index c = xv.cols();
  if (gamma.value().rows() != 1 || gamma.value().cols() != c || beta.value().rows() != 1 ||
      beta.value().cols() != c) {
    fail(ErrorKind::shape, "batch_norm: affine parameters must be 1x" + std::to_string(c));
  }
  if (running.mean.cols() != c || running.var.cols() != c) {
    fail(ErrorKind::shape, "batch_norm: running statistics must be 1x" + std::to_string(c));
  }
  const Matrix g = gamma.value();
  const Matrix b = beta.value();

  if (mode == Mode::eval) {
    Matrix inv_std = (running.var.array() + eps).rsqrt().matrix();
    Matrix xhat = (xv.rowwise() - running.mean.row(0)).array().rowwise() * inv_std.row(0).array();
    Matrix out = (xhat.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
    return x.tape().record(OpKind::batch_norm, std::move(out), {x, gamma, beta},
                           [x, gamma, beta, xhat, inv_std, g](Tape& t, const Matrix& gy) {
                             if (t.requires_grad(gamma)) t.accumulate(gamma, gy.cwiseProduct(xhat).colwise().sum());
                             if (t.requires_grad(beta)) t.accumulate(beta, gy.colwise().sum());
                             if (t.requires_grad(x)) {
                               Matrix scale_row = g.cwiseProduct(inv_std);
                               t.accumulate(x, (gy.array().rowwise() * scale_row.row(0).array()).matrix());
                             }
                           });
  }

  if (n < 2) fail(ErrorKind::shape, "batch_norm: train mode needs at least 2 rows, got " + std::to_string(n));
  Matrix mu = xv.colwise().mean();
  Matrix centered = xv.rowwise() - mu.row(0);
  Matrix var = centered.array().square().colwise().sum().matrix() / static_cast<double>(n);
  Matrix inv_std = (var.array() + eps).rsqrt().matrix();
  Matrix xhat = centered.array().rowwise() * inv_std.row(0).array();
  Matrix out = (xhat.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();

  const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
  running.mean = (1.0 - momentum) * running.mean + momentum * mu;
  running.var = (1.0 - momentum) * running.var + momentum * unbias * var;

  return x.tape().record(
      OpKind::batch_norm, std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, inv_std, g](Tape& t, const Matrix& gy) {
        if (t.requires_grad(gamma)) t.accumulate(gamma, gy.cwiseProduct(xhat).colwise().sum());
        if (t.requires_grad(beta)) t.accumulate(beta, gy.colwise().sum());
        if (t.requires_grad(x)) {
          Matrix dxhat = gy.array().rowwise() * g.row(0).array();
          Matrix mean_d = dxhat.colwise().mean();
          Matrix mean_dx = dxhat.cwiseProduct(xhat).colwise().mean();
          Matrix dx = (dxhat.rowwise() - mean_d.row(0)) -
                      Matrix(xhat.array().rowwise() * mean_dx.row(0).array());
          dx = dx.array().rowwise() * inv_std.row(0).array();
          t.accumulate(x, dx);
        }
      });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Matrix& xv = x.value();
  const Index c = xv.cols();
  if (gamma.value().rows() != 1 || gamma.value().cols() != c || beta.value().rows() != 1 ||
      beta.value().cols() != c) {
    fail(ErrorKind::shape, "layer_norm: affine parameters must be 1x" + std::to_string(c));
  }
  const Matrix g = gamma.value();
  Matrix mu = xv.rowwise().mean();
  Matrix centered = xv.colwise() - mu.col(0);
  Matrix var = centered.array().square().rowwise().sum().matrix() / static_cast<double>(c);
  Matrix inv_std = (var.array() + eps).rsqrt().matrix();
  Matrix xhat = centered.array().colwise() * inv_std.col(0).array();
  Matrix out = (xhat.array().rowwise() * g.row(0).array()).rowwise() + beta.value().row(0).array();
  return x.tape().record(OpKind::layer_norm, std::move(out), {x, gamma, beta},
                         [x, gamma, beta, xhat, inv_std, g](Tape& t, const Matrix& gy) {
                           if (t.requires_grad(gamma)) t.accumulate(gamma, gy.cwiseProduct(xhat).colwise().sum());
                           if (t.requires_grad(beta)) t.accumulate(beta, gy.colwise().sum());
                           if (t.requires_grad(x)) {
                             Matrix dxhat = gy.array().rowwise() * g.row(0).array();
                             Matrix mean_d = dxhat.rowwise().mean();
                             Matrix mean_dx = dxhat.cwiseProduct(xhat).rowwise().mean();
                             Matrix dx = (dxhat.colwise() - mean_d.col(0)) -
                                         Matrix(xhat.array().colwise() * mean_dx.col(0).array());
                             dx = dx.array().colwise() * inv_std.col(0).array();
                             t.accumulate(x, dx);
                           }
                         });
}

Var dropout(Var x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) fail(ErrorKind::usage, "dropout: rate must lie in [0,1)");
  if (mode == Mode::eval || rate == 0.0) {
    return x.tape().record(OpKind::dropout, x.value(), {x},
                           [x](Tape& t, const Matrix& g) { t.accumulate(x, g); });
  }
  std::bernoulli_distribution keep(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  Matrix m(x.rows(), x.cols());
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = keep(rng) ? s : 0.0;
  Matrix out = x.value().cwiseProduct(m);
  return x.tape().record(OpKind::dropout, std::move(out), {x},
                         [x, m](Tape& t, const Matrix& g) { t.accumulate(x, g.cwiseProduct(m)); });
}

Var mse(Var a, Var b) {
  require_same_tape("mse", a, b);
  require_same_shape("mse", a.value(), b.value());
  Matrix diff = a.value() - b.value();
  const double count = static_cast<double>(diff.size());
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm() / count;
  return a.tape().record(OpKind::mse, std::move(out), {a, b}, [a, b, diff, count](Tape& t, const Matrix& g) {
    Matrix d = diff * (2.0 * g(0, 0) / count);
    if (t.requires_grad(a)) t.accumulate(a, d);
    if (t.requires_grad(b)) t.accumulate(b, -d);
  });
}

Var row_sq_dist_mean(Var a, Var b) {
  require_same_tape("row_sq_dist_mean", a, b);
  require_same_shape("row_sq_dist_mean", a.value(), b.value());
  Matrix diff = a.value() - b.value();
  const double n = static_cast<double>(diff.rows());
  if (diff.rows() == 0) fail(ErrorKind::shape, "row_sq_dist_mean: empty operands");
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm() / n;
  return a.tape().record(OpKind::row_sq_dist_mean, std::move(out), {a, b},
                         [a, b, diff, n](Tape& t, const Matrix& g) {
                           Matrix d = diff * (2.0 * g(0, 0) / n);
                           if (t.requires_grad(a)) t.accumulate(a, d);
                           if (t.requires_grad(b)) t.accumulate(b, -d);
                         });
}

Var l2_normalize_rows(Var x) {
  const Matrix& xv = x.value();
  Matrix norms = xv.rowwise().norm();
  Matrix out = Matrix::Zero(xv.rows(), xv.cols());
  std::size_t zero_rows = 0;
  for (Index i = 0; i < xv.rows(); ++i) {
    if (norms(i, 0) < 1e-12) {
      ++zero_rows;
      continue;
    }
    out.row(i) = xv.row(i) / norms(i, 0);
  }
  x.tape().note_zero_norm_rows(zero_rows);
  Matrix yv = out;
  return x.tape().record(OpKind::l2_normalize_rows, std::move(out), {x},
                         [x, yv, norms](Tape& t, const Matrix& g) {
                           Matrix d = Matrix::Zero(g.rows(), g.cols());
                           for (Index i = 0; i < g.rows(); ++i) {
                             if (norms(i, 0) < 1e-12) continue;
                             const double proj = yv.row(i).dot(g.row(i));
                             d.row(i) = (g.row(i) - proj * yv.row(i)) / norms(i, 0);
                           }
                           t.accumulate(x, d);
                         });
}

Var cosine_rows(Var a, Var b) { return matmul_nt(l2_normalize_rows(a), l2_normalize_rows(b)); }

Var concat_cols(Var a, Var b) {
  require_same_tape("concat_cols", a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows()) {
    fail(ErrorKind::shape, "concat_cols: row counts differ " + shape_str(av) + " vs " + shape_str(bv));
  }
  Matrix out(av.rows(), av.cols() + bv.cols());
  out << av, bv;
  const Index ca = av.cols();
  const Index cb = bv.cols();
  return a.tape().record(OpKind::concat_cols, std::move(out), {a, b}, [a, b, ca, cb](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g.leftCols(ca));
    if (t.requires_grad(b)) t.accumulate(b, g.rightCols(cb));
  });
}

Var slice_cols(Var a, Index begin, Index count) {
  const Matrix& av = a.value();
  if (begin < 0 || count < 0 || begin + count > av.cols()) {
    fail(ErrorKind::shape, "slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                               ") out of range for " + shape_str(av));
  }
  Matrix out = av.middleCols(begin, count);
  const Index rows = av.rows();
  const Index cols = av.cols();
  return a.tape().record(OpKind::slice_cols, std::move(out), {a},
                         [a, begin, count, rows, cols](Tape& t, const Matrix& g) {
                           Matrix d = Matrix::Zero(rows, cols);
                           d.middleCols(begin, count) = g;
                           t.accumulate(a, d);
                         });
}

Var apply_mask(Var x, const Matrix& mask) {
  require_same_shape("mask", x.value(), mask);
  Matrix out = x.value().cwiseProduct(mask);
  return x.tape().record(OpKind::mask, std::move(out), {x},
                         [x, mask](Tape& t, const Matrix& g) { t.accumulate(x, g.cwiseProduct(mask)); });
}

Var stop_gradient(Var x) {
  // recorded with no inputs so nothing upstream is reachable through it
  return x.tape().record(OpKind::stop_gradient, x.value(), {}, nullptr);
}

Var gradient_gate(Var x, const Matrix& gate) {
  require_same_shape("gradient_gate", x.value(), gate);
  return x.tape().record(OpKind::gradient_gate, x.value(), {x},
                         [x, gate](Tape& t, const Matrix& g) { t.accumulate(x, g.cwiseProduct(gate)); });
}

Var sum(Var x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  const Index r = x.rows();
  const Index c = x.cols();
  return x.tape().record(OpKind::sum, std::move(out), {x}, [x, r, c](Tape& t, const Matrix& g) {
    t.accumulate(x, Matrix::Constant(r, c, g(0, 0)));
  });
}

Var mean(Var x) {
  if (x.value().size() == 0) fail(ErrorKind::shape, "mean: empty operand");
  Matrix out(1, 1);
  out(0, 0) = x.value().mean();
  const Index r = x.rows();
  const Index c = x.cols();
  const double count = static_cast<double>(x.value().size());
  return x.tape().record(OpKind::mean, std::move(out), {x}, [x, r, c, count](Tape& t, const Matrix& g) {
    t.accumulate(x, Matrix::Constant(r, c, g(0, 0) / count));
  });
}

Var soft_cross_entropy(Var logits, const Matrix& targets) {
  require_same_shape("soft_cross_entropy", logits.value(), targets);
  const Matrix& z = logits.value();
  const Index n = z.rows();
  if (n == 0) fail(ErrorKind::shape, "soft_cross_entropy: empty batch");
  Matrix logp(z.rows(), z.cols());
  for (Index i = 0; i < n; ++i) {
    const double mx = z.row(i).maxCoeff();
    const double lse = mx + std::log((z.row(i).array() - mx).exp().sum());
    logp.row(i) = z.row(i).array() - lse;
  }
  Matrix out(1, 1);
  out(0, 0) = -targets.cwiseProduct(logp).sum() / static_cast<double>(n);
  return logits.tape().record(OpKind::soft_cross_entropy, std::move(out), {logits},
                              [logits, targets, logp, n](Tape& t, const Matrix& g) {
                                Matrix p = logp.array().exp().matrix();
                                Matrix row_mass = targets.rowwise().sum();
                                Matrix d = (p.array().colwise() * row_mass.col(0).array()).matrix() - targets;
                                t.accumulate(logits, d * (g(0, 0) / static_cast<double>(n)));
                              });
}

// ---------------------------------------------------------------------------
// grad_check
// ---------------------------------------------------------------------------

GradCheckReport grad_check(const std::function<Var(Tape&)>& build, std::span<Parameter* const> params,
                           double step, double tolerance, std::size_t max_coords_per_param,
                           std::uint64_t seed) {
  if (!(step > 0.0)) fail(ErrorKind::usage, "grad_check: step must be positive");
  for (Parameter* p : params) p->grad = Matrix::Zero(p->value.rows(), p->value.cols());
  {
    Tape tape;
    Var loss = build(tape);
    tape.backward(loss);
  }
  auto evaluate = [&]() {
    Tape tape;
    return build(tape).item();
  };

  GradCheckReport report;
  Rng rng(seed);
  for (Parameter* p : params) {
    const Index size = p->value.size();
    std::vector<Index> coords(static_cast<std::size_t>(size));
    std::iota(coords.begin(), coords.end(), Index{0});
    if (max_coords_per_param > 0 && coords.size() > max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords_per_param);
    }
    for (Index idx : coords) {
      double& slot = p->value.data()[idx];
      const double saved = slot;
      slot = saved + step;
      const double up = evaluate();
      slot = saved - step;
      const double down = evaluate();
      slot = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = p->grad.data()[idx];
      const double rel = std::abs(analytic - numeric) / std::max(1e-8, std::abs(numeric));
      report.max_rel_error = std::max(report.max_rel_error, rel);
      ++report.coordinates;
    }
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

}  // namespace hscmae
