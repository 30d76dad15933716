#pragma once

#include <vector>

#include "hscmae/model.hpp"

namespace hscmae {

/// Soft multi-positive targets: for each anchor, a neighbour set and weights over it.
struct AffinityTargets {
  Index candidates = 0;
  std::vector<std::vector<Index>> neighbors;
  std::vector<std::vector<double>> weights;

  Index anchors() const { return static_cast<Index>(neighbors.size()); }
  /// anchors x candidates matrix with W_ij at the mined positions, zero elsewhere.
  Matrix dense() const;
  /// Single positive per anchor: the paired index with weight 1.
  static AffinityTargets identity(Index n);
};

/// Targets for both retrieval directions.
struct AffinityPair {
  AffinityTargets audio_to_visual;
  AffinityTargets visual_to_audio;
};

/// Selects, for each anchor row of `scores`, the paired index i plus the k-1
/// highest remaining scores (ties to the lower index) and weights them with a
/// softmax of score / temperature.
AffinityTargets mine_direction(const Matrix& scores, Index k, double temperature);

/// Cross-modal mining on unit-norm teacher embeddings; scores are cosines.
AffinityPair mine_affinities(const Matrix& teacher_audio, const Matrix& teacher_visual, Index k,
                             double temperature);

/// teacher <- rho * teacher + (1 - rho) * student for every parameter and
/// batch-norm running statistic. Adam moments are left alone.
void ema_update(ModelParams& teacher, const ModelParams& student, double rho);

struct MomentumSchedule {
  double start = 0.95;
  double end = 0.999;
};

/// Linear ramp from schedule.start at epoch 1 to schedule.end at the final epoch.
double anneal_momentum(int epoch, int total_epochs, MomentumSchedule schedule = {});

}  // namespace hscmae
