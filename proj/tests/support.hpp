#pragma once

// Test helpers and straight-line reference implementations. Nothing here
// calls into the library code it is used to check.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "hscmae/diffcore.hpp"

namespace testing {

using hscmae::Index;
using hscmae::Matrix;

inline Matrix randn(Index rows, Index cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

inline Matrix unit_rows(Matrix m) {
  for (Index i = 0; i < m.rows(); ++i) m.row(i) /= m.row(i).norm();
  return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

/// AP of one query by counting ranks directly: item g sits at rank
/// 1 + #{h : s_h > s_g or (s_h == s_g and h < g)}.
inline double brute_ap(const std::vector<double>& scores, const std::vector<int>& gallery_labels, int query_label) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> rank(n);
  for (std::size_t g = 0; g < n; ++g) {
    std::size_t r = 1;
    for (std::size_t h = 0; h < n; ++h) {
      if (scores[h] > scores[g] || (scores[h] == scores[g] && h < g)) ++r;
    }
    rank[g] = r;
  }
  double total = 0.0;
  int relevant = 0;
  for (std::size_t g = 0; g < n; ++g) {
    if (gallery_labels[g] != query_label) continue;
    ++relevant;
    std::size_t above = 0;
    for (std::size_t h = 0; h < n; ++h) {
      if (gallery_labels[h] == query_label && rank[h] <= rank[g]) ++above;
    }
    total += static_cast<double>(above) / static_cast<double>(rank[g]);
  }
  return total / relevant;
}

/// Mean of brute_ap over the rows of `sim` (all queries assumed to have a relevant item).
inline double brute_map(const Matrix& sim, const std::vector<int>& qlabels, const std::vector<int>& glabels) {
  double total = 0.0;
  for (Index q = 0; q < sim.rows(); ++q) {
    std::vector<double> s(sim.row(q).data(), sim.row(q).data() + sim.cols());
    total += brute_ap(s, glabels, qlabels[static_cast<std::size_t>(q)]);
  }
  return total / static_cast<double>(sim.rows());
}

/// Canonical correlations as square roots of the generalized eigenvalues of
/// (S_xy S_yy^-1 S_yx) a = rho^2 S_xx a, sorted descending.
inline std::vector<double> cca_generalized_eigen(const Matrix& x, const Matrix& y, double eps) {
  const double c = 1.0 / static_cast<double>(x.rows() - 1);
  const Matrix xc = x.rowwise() - x.colwise().mean();
  const Matrix yc = y.rowwise() - y.colwise().mean();
  Matrix sxx = c * xc.transpose() * xc;
  Matrix syy = c * yc.transpose() * yc;
  sxx.diagonal().array() += eps;
  syy.diagonal().array() += eps;
  const Matrix sxy = c * xc.transpose() * yc;
  const Matrix lhs = sxy * syy.ldlt().solve(sxy.transpose());
  const Matrix sym = 0.5 * (lhs + lhs.transpose());
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> solver(sym, sxx);
  std::vector<double> rho;
  for (Index i = 0; i < solver.eigenvalues().size(); ++i) rho.push_back(std::sqrt(std::max(0.0, solver.eigenvalues()(i))));
  std::sort(rho.rbegin(), rho.rend());
  return rho;
}

/// Row-wise softmax of logits, then -(1/n) sum W log p.
inline double soft_ce(const Matrix& logits, const Matrix& targets) {
  double total = 0.0;
  for (Index i = 0; i < logits.rows(); ++i) {
    double mx = logits(i, 0);
    for (Index j = 1; j < logits.cols(); ++j) mx = std::max(mx, logits(i, j));
    double z = 0.0;
    for (Index j = 0; j < logits.cols(); ++j) z += std::exp(logits(i, j) - mx);
    for (Index j = 0; j < logits.cols(); ++j) total -= targets(i, j) * (logits(i, j) - mx - std::log(z));
  }
  return total / static_cast<double>(logits.rows());
}

}  // namespace testing
