#pragma once

#include <array>

#include "hscmae/teacher.hpp"

namespace hscmae {

struct CcaConfig {
  /// Number of canonical correlations summed.
  Index r = 32;
  /// Ridge added to both auto-covariances.
  double epsilon = 1e-4;
};

/// Canonical correlations of two views, descending. Centers over rows, uses
/// (1/(n-1)) covariances with `epsilon` on the diagonals and whitens with
/// symmetric inverse square roots.
std::vector<double> canonical_correlations(const Matrix& za, const Matrix& zv, double epsilon);

/// -sum of the top-r canonical correlations between za and zv, with the
/// closed-form gradient through the whitening.
Var dcca_loss(Var za, Var zv, const CcaConfig& config);

/// Affinity-weighted cross-modal InfoNCE, averaged over the a->v and v->a
/// directions. Rows of za, zv must be unit norm.
Var soft_infonce(Var za, Var zv, const AffinityPair& targets, double temperature);

/// Single-positive symmetric InfoNCE (the paired sample is the only positive).
Var infonce_single(Var za, Var zv, double temperature);

/// Mean per-sample squared reconstruction error, averaged over modalities.
Var rec_loss(Var xa, Var xv, Var xa_hat, Var xv_hat);

/// Mean squared row distance to the teacher embeddings, averaged over
/// modalities. The teacher side is cut from the graph.
Var distill_loss(Var za, Var zv, Var teacher_a, Var teacher_v);

struct LossFlags {
  bool rec = true;
  bool infonce = true;
  bool cca = true;
  bool dis = true;

  bool active(LossTerm t) const;
  bool any() const { return rec || infonce || cca || dis; }
  bool operator==(const LossFlags&) const = default;
};

struct LossBundle {
  LossFlags active;
  /// Indexed by LossTerm; invalid Vars for inactive terms.
  std::array<Var, 4> terms{};
  std::array<double, 4> values{};
  /// Effective multiplier applied to each term by total_loss.
  std::array<double, 4> weights{};

  Var& term(LossTerm t) { return terms[static_cast<std::size_t>(t)]; }
  double value(LossTerm t) const { return values[static_cast<std::size_t>(t)]; }
  double weight(LossTerm t) const { return weights[static_cast<std::size_t>(t)]; }
};

/// Fixed warmup weight of a term at `epoch` (rec 1, infonce 0.05, cca epoch*0.1, dis 0.1).
double warmup_weight(LossTerm term, int epoch);

/// Epochs 1..warmup_epochs: fixed weighted sum (sigma untouched).
/// Later: sum over active terms of exp(-sigma_m) * L_m + sigma_m.
Var total_loss(Tape& tape, LossBundle& bundle, ModelParams& params, int epoch, int warmup_epochs = 5);

}  // namespace hscmae
