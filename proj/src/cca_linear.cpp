#include "hscmae/cca_linear.hpp"

#include <algorithm>
#include <cmath>

namespace hscmae {

namespace {

Matrix lower_cholesky(const Matrix& s, const char* view) {
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() != Eigen::Success) {
    fail(ErrorKind::numeric, std::string("linear CCA: ") + view + " covariance is not positive definite");
  }
  Matrix l = llt.matrixL();
  const double lo = l.diagonal().minCoeff();
  const double hi = l.diagonal().maxCoeff();
  if (!(lo > 1e-7 * hi)) {
    fail(ErrorKind::numeric, std::string("linear CCA: ") + view + " covariance is rank deficient");
  }
  return l;
}

}  // namespace

LinearCcaModel fit_linear_cca(const Matrix& x, const Matrix& y, Index p, double epsilon) {
  const Index n = x.rows();
  if (y.rows() != n) fail(ErrorKind::shape, "linear CCA: views have " + std::to_string(n) + " and " +
                                                std::to_string(y.rows()) + " rows");
  if (n <= std::max(x.cols(), y.cols())) {
    fail(ErrorKind::usage, "linear CCA: need more samples (" + std::to_string(n) + ") than feature dims (" +
                               std::to_string(std::max(x.cols(), y.cols())) + ")");
  }
  if (p < 1 || p > std::min(x.cols(), y.cols())) {
    fail(ErrorKind::usage, "linear CCA: output dim " + std::to_string(p) + " exceeds min view dim " +
                               std::to_string(std::min(x.cols(), y.cols())));
  }
  if (!(epsilon >= 0.0)) fail(ErrorKind::usage, "linear CCA: epsilon must be non-negative");

  LinearCcaModel m;
  m.mean_a = x.colwise().mean();
  m.mean_v = y.colwise().mean();
  const Matrix xc = x.rowwise() - m.mean_a.row(0);
  const Matrix yc = y.rowwise() - m.mean_v.row(0);
  const double c = 1.0 / static_cast<double>(n - 1);
  Matrix sxx = c * xc.transpose() * xc;
  Matrix syy = c * yc.transpose() * yc;
  sxx.diagonal().array() += epsilon;
  syy.diagonal().array() += epsilon;
  const Matrix sxy = c * xc.transpose() * yc;

  const Matrix lx = lower_cholesky(sxx, "first view");
  const Matrix ly = lower_cholesky(syy, "second view");
  // T = Lx^{-1} Sxy Ly^{-T}
  Matrix t = lx.triangularView<Eigen::Lower>().solve(sxy);
  t = ly.triangularView<Eigen::Lower>().solve(t.transpose()).transpose();

  Eigen::JacobiSVD<Matrix> svd(t, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Matrix u = svd.matrixU().leftCols(p);
  const Matrix v = svd.matrixV().leftCols(p);
  // A = Lx^{-T} U, B = Ly^{-T} V
  m.proj_a = lx.transpose().triangularView<Eigen::Upper>().solve(u);
  m.proj_v = ly.transpose().triangularView<Eigen::Upper>().solve(v);
  for (Index j = 0; j < p; ++j) {
    m.rho.push_back(std::clamp(svd.singularValues()(j), 0.0, 1.0));
    for (Index i = 0; i < m.proj_a.rows(); ++i) {
      const double e = m.proj_a(i, j);
      if (std::abs(e) > 1e-12) {
        if (e < 0.0) {
          m.proj_a.col(j) *= -1.0;
          m.proj_v.col(j) *= -1.0;
        }
        break;
      }
    }
  }
  return m;
}

CcaProjection transform(const LinearCcaModel& model, const Matrix& x, const Matrix& y) {
  if (!model.fitted()) fail(ErrorKind::usage, "linear CCA: model is not fitted");
  if (x.cols() != model.proj_a.rows() || y.cols() != model.proj_v.rows() || x.rows() != y.rows()) {
    fail(ErrorKind::shape, "linear CCA transform: inputs " + shape_str(x) + ", " + shape_str(y) +
                               " do not match model dims " + std::to_string(model.proj_a.rows()) + ", " +
                               std::to_string(model.proj_v.rows()));
  }
  CcaProjection out;
  out.a = (x.rowwise() - model.mean_a.row(0)) * model.proj_a;
  out.v = (y.rowwise() - model.mean_v.row(0)) * model.proj_v;
  return out;
}

Matrix normalize_rows(const Matrix& m) {
  Matrix out = m;
  for (Index i = 0; i < m.rows(); ++i) {
    const double norm = m.row(i).norm();
    if (norm < 1e-12) {
      out.row(i).setZero();
    } else {
      out.row(i) /= norm;
    }
  }
  return out;
}

}  // namespace hscmae
