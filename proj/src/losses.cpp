#include "hscmae/losses.hpp"

#include <algorithm>
#include <cmath>

namespace hscmae {

namespace {

// Symmetric inverse square root with eigenvalues clamped at 1e-10.
Matrix inverse_sqrt(const Matrix& s) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(s);
  if (eig.info() != Eigen::Success) fail(ErrorKind::numeric, "eigendecomposition of covariance failed");
  Eigen::VectorXd inv = eig.eigenvalues().cwiseMax(1e-10).cwiseSqrt().cwiseInverse();
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

struct CcaPieces {
  Matrix h1, h2;
  Matrix s11_inv_sqrt, s22_inv_sqrt;
  Matrix u, v;
  Eigen::VectorXd rho;
  double scale = 0.0;
};

CcaPieces cca_pieces(const Matrix& za, const Matrix& zv, double epsilon) {
  const Index n = za.rows();
  if (n < 2 || zv.rows() != n) {
    fail(ErrorKind::shape, "dcca: need matching batches of at least 2 rows, got " + shape_str(za) + " and " +
                               shape_str(zv));
  }
  CcaPieces p;
  p.scale = 1.0 / static_cast<double>(n - 1);
  p.h1 = za.rowwise() - za.colwise().mean();
  p.h2 = zv.rowwise() - zv.colwise().mean();
  Matrix s11 = p.scale * p.h1.transpose() * p.h1;
  Matrix s22 = p.scale * p.h2.transpose() * p.h2;
  s11.diagonal().array() += epsilon;
  s22.diagonal().array() += epsilon;
  if (!s11.allFinite()) fail(ErrorKind::numeric, "dcca: non-finite audio covariance");
  if (!s22.allFinite()) fail(ErrorKind::numeric, "dcca: non-finite visual covariance");
  Matrix s12 = p.scale * p.h1.transpose() * p.h2;
  p.s11_inv_sqrt = inverse_sqrt(s11);
  p.s22_inv_sqrt = inverse_sqrt(s22);
  Matrix t = p.s11_inv_sqrt * s12 * p.s22_inv_sqrt;
  Eigen::JacobiSVD<Matrix> svd(t, Eigen::ComputeThinU | Eigen::ComputeThinV);
  p.u = svd.matrixU();
  p.v = svd.matrixV();
  p.rho = svd.singularValues();
  return p;
}

void require_unit_rows(const char* op, const Matrix& z) {
  for (Index i = 0; i < z.rows(); ++i) {
    const double norm = z.row(i).norm();
    if (std::abs(norm - 1.0) > 1e-6) {
      fail(ErrorKind::usage, std::string(op) + ": row " + std::to_string(i) + " is not unit norm (" +
                                 std::to_string(norm) + ")");
    }
  }
}

void require_row_stochastic(const Matrix& w, Index n, const char* direction) {
  if (w.rows() != n || w.cols() != n) {
    fail(ErrorKind::shape, std::string("soft_infonce: ") + direction + " targets are " + shape_str(w) +
                               " for a batch of " + std::to_string(n));
  }
  for (Index i = 0; i < n; ++i) {
    const double s = w.row(i).sum();
    if (std::abs(s - 1.0) > 1e-6 || w.row(i).minCoeff() < 0.0) {
      fail(ErrorKind::usage, std::string("soft_infonce: ") + direction + " weight row " + std::to_string(i) +
                                 " sums to " + std::to_string(s));
    }
  }
}

}  // namespace

std::vector<double> canonical_correlations(const Matrix& za, const Matrix& zv, double epsilon) {
  CcaPieces p = cca_pieces(za, zv, epsilon);
  return {p.rho.data(), p.rho.data() + p.rho.size()};
}

Var dcca_loss(Var za, Var zv, const CcaConfig& config) {
  if (!(config.epsilon > 0.0)) fail(ErrorKind::usage, "dcca: epsilon must be positive");
  const Index max_r = std::min(za.cols(), zv.cols());
  if (config.r < 1 || config.r > max_r) {
    fail(ErrorKind::usage, "dcca: r = " + std::to_string(config.r) + " outside [1, " + std::to_string(max_r) + "]");
  }
  CcaPieces p = cca_pieces(za.value(), zv.value(), config.epsilon);
  const Index r = config.r;
  Matrix out(1, 1);
  out(0, 0) = -p.rho.head(r).sum();

  return za.tape().record(OpKind::custom, std::move(out), {za, zv}, [za, zv, p, r](Tape& t, const Matrix& g) {
    const Matrix ur = p.u.leftCols(r);
    const Matrix vr = p.v.leftCols(r);
    const auto dr = p.rho.head(r).asDiagonal();
    const Matrix grad12 = p.s11_inv_sqrt * ur * vr.transpose() * p.s22_inv_sqrt;
    const Matrix grad11 = -0.5 * p.s11_inv_sqrt * ur * dr * ur.transpose() * p.s11_inv_sqrt;
    const Matrix grad22 = -0.5 * p.s22_inv_sqrt * vr * dr * vr.transpose() * p.s22_inv_sqrt;
    // d(sum rho)/dH, then negate for the loss and project out the centering
    const double c = -g(0, 0) * p.scale;
    Matrix d1 = c * (2.0 * p.h1 * grad11 + p.h2 * grad12.transpose());
    Matrix d2 = c * (2.0 * p.h2 * grad22 + p.h1 * grad12);
    d1 = d1.rowwise() - d1.colwise().mean();
    d2 = d2.rowwise() - d2.colwise().mean();
    if (t.requires_grad(za)) t.accumulate(za, d1);
    if (t.requires_grad(zv)) t.accumulate(zv, d2);
  });
}

Var soft_infonce(Var za, Var zv, const AffinityPair& targets, double temperature) {
  if (!(temperature > 0.0)) fail(ErrorKind::usage, "soft_infonce: temperature must be positive");
  if (za.rows() != zv.rows() || za.cols() != zv.cols()) {
    fail(ErrorKind::shape, "soft_infonce: embeddings " + shape_str(za.value()) + " and " + shape_str(zv.value()) +
                               " differ");
  }
  require_unit_rows("soft_infonce", za.value());
  require_unit_rows("soft_infonce", zv.value());
  const Index n = za.rows();
  const Matrix w_av = targets.audio_to_visual.dense();
  const Matrix w_va = targets.visual_to_audio.dense();
  require_row_stochastic(w_av, n, "audio->visual");
  require_row_stochastic(w_va, n, "visual->audio");

  Var a2v = soft_cross_entropy(scale(matmul_nt(za, zv), 1.0 / temperature), w_av);
  Var v2a = soft_cross_entropy(scale(matmul_nt(zv, za), 1.0 / temperature), w_va);
  return scale(add(a2v, v2a), 0.5);
}

Var infonce_single(Var za, Var zv, double temperature) {
  if (!(temperature > 0.0)) fail(ErrorKind::usage, "infonce_single: temperature must be positive");
  if (za.rows() != zv.rows() || za.cols() != zv.cols()) {
    fail(ErrorKind::shape, "infonce_single: embeddings " + shape_str(za.value()) + " and " +
                               shape_str(zv.value()) + " differ");
  }
  const Matrix& a = za.value();
  const Matrix& v = zv.value();
  const Index n = a.rows();
  const Matrix logits = (a * v.transpose()) / temperature;

  // row-wise log-sum-exp minus the diagonal, for both the rows and the columns of the logits
  Matrix p_rows(n, n);
  Matrix p_cols(n, n);
  double loss_rows = 0.0;
  double loss_cols = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double mr = logits.row(i).maxCoeff();
    Eigen::RowVectorXd er = (logits.row(i).array() - mr).exp();
    const double zr = er.sum();
    loss_rows += mr + std::log(zr) - logits(i, i);
    p_rows.row(i) = er / zr;

    const double mc = logits.col(i).maxCoeff();
    Eigen::VectorXd ec = (logits.col(i).array() - mc).exp();
    const double zc = ec.sum();
    loss_cols += mc + std::log(zc) - logits(i, i);
    p_cols.col(i) = ec / zc;
  }
  Matrix out(1, 1);
  out(0, 0) = 0.5 * (loss_rows + loss_cols) / static_cast<double>(n);

  return za.tape().record(OpKind::custom, std::move(out), {za, zv},
                          [za, zv, p_rows, p_cols, n, temperature](Tape& t, const Matrix& g) {
                            // d/dlogits = 0.5/n * [(P_rows - I) + (P_cols - I)]
                            Matrix dl = p_rows + p_cols;
                            dl.diagonal().array() -= 2.0;
                            dl *= 0.5 * g(0, 0) / static_cast<double>(n) / temperature;
                            if (t.requires_grad(za)) t.accumulate(za, dl * zv.value());
                            if (t.requires_grad(zv)) t.accumulate(zv, dl.transpose() * za.value());
                          });
}

Var rec_loss(Var xa, Var xv, Var xa_hat, Var xv_hat) {
  if (xa.rows() != xa_hat.rows() || xa.cols() != xa_hat.cols() || xv.rows() != xv_hat.rows() ||
      xv.cols() != xv_hat.cols()) {
    fail(ErrorKind::shape, "rec_loss: reconstruction shapes do not match inputs");
  }
  return scale(add(row_sq_dist_mean(xa_hat, xa), row_sq_dist_mean(xv_hat, xv)), 0.5);
}

Var distill_loss(Var za, Var zv, Var teacher_a, Var teacher_v) {
  if (za.rows() != teacher_a.rows() || za.cols() != teacher_a.cols() || zv.rows() != teacher_v.rows() ||
      zv.cols() != teacher_v.cols()) {
    fail(ErrorKind::shape, "distill_loss: student and teacher embeddings differ in shape");
  }
  Var ta = stop_gradient(teacher_a);
  Var tv = stop_gradient(teacher_v);
  return scale(add(row_sq_dist_mean(za, ta), row_sq_dist_mean(zv, tv)), 0.5);
}

bool LossFlags::active(LossTerm t) const {
  switch (t) {
    case LossTerm::rec: return rec;
    case LossTerm::infonce: return infonce;
    case LossTerm::cca: return cca;
    case LossTerm::dis: return dis;
  }
  return false;
}

double warmup_weight(LossTerm term, int epoch) {
  switch (term) {
    case LossTerm::rec: return 1.0;
    case LossTerm::infonce: return 0.05;
    case LossTerm::cca: return static_cast<double>(epoch) * 0.1;
    case LossTerm::dis: return 0.1;
  }
  return 0.0;
}

Var total_loss(Tape& tape, LossBundle& bundle, ModelParams& params, int epoch, int warmup_epochs) {
  if (epoch < 1) fail(ErrorKind::usage, "total_loss: epoch must be >= 1");
  const bool warmup = epoch <= warmup_epochs;
  Var total;
  for (LossTerm t : kLossTerms) {
    const auto idx = static_cast<std::size_t>(t);
    bundle.weights[idx] = 0.0;
    if (!bundle.active.active(t)) {
      bundle.values[idx] = 0.0;
      continue;
    }
    Var term = bundle.terms[idx];
    if (!term.valid()) fail(ErrorKind::usage, std::string("total_loss: active term '") + loss_name(t) + "' missing");
    bundle.values[idx] = term.item();
    Var contribution;
    if (warmup) {
      bundle.weights[idx] = warmup_weight(t, epoch);
      contribution = scale(term, bundle.weights[idx]);
    } else {
      Var sigma = tape.param(params.at(sigma_name(t)));
      Var w = exp(scale(sigma, -1.0));
      bundle.weights[idx] = w.item();
      contribution = add(mul(w, term), sigma);
    }
    total = total.valid() ? add(total, contribution) : contribution;
  }
  if (!total.valid()) fail(ErrorKind::usage, "total_loss: no active loss terms");
  return total;
}

}  // namespace hscmae
