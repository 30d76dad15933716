#pragma once

#include <vector>

#include "hscmae/diffcore.hpp"

namespace hscmae {

/// Closed-form regularized linear CCA between two views.
struct LinearCcaModel {
  Matrix mean_a;  // 1 x d_a
  Matrix mean_v;  // 1 x d_v
  Matrix proj_a;  // d_a x p
  Matrix proj_v;  // d_v x p
  std::vector<double> rho;

  Index dim() const { return proj_a.cols(); }
  bool fitted() const { return proj_a.size() > 0; }
};

/// Centers both views, whitens with Cholesky factors of the ridge-regularized
/// covariances and takes the SVD of the whitened cross-covariance. Columns are
/// ordered by descending correlation; the first nonzero entry of each column of
/// proj_a is positive.
LinearCcaModel fit_linear_cca(const Matrix& x, const Matrix& y, Index p, double epsilon = 1e-4);

struct CcaProjection {
  Matrix a;
  Matrix v;
};

/// (x - mean_a) proj_a and (y - mean_v) proj_v.
CcaProjection transform(const LinearCcaModel& model, const Matrix& x, const Matrix& y);

/// Unit-norm copy of each row (zero rows stay zero).
Matrix normalize_rows(const Matrix& m);

}  // namespace hscmae
