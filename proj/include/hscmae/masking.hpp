#pragma once

#include <cstdint>
#include <vector>

#include "hscmae/diffcore.hpp"

namespace hscmae {

/// Per-sample masked feature dimensions for both modalities.
struct MaskPlan {
  double ratio = 0.0;
  std::uint64_t seed = 0;
  Index d_audio = 0;
  Index d_visual = 0;
  /// masked_audio[i] holds the sorted masked dimensions of sample i.
  std::vector<std::vector<Index>> masked_audio;
  std::vector<std::vector<Index>> masked_visual;

  Index rows() const { return static_cast<Index>(masked_audio.size()); }
};

/// floor(ratio * d) distinct dimensions per sample and modality, uniform
/// without replacement. Requires 0 <= ratio < 1.
MaskPlan make_plan(Index n, Index d_audio, Index d_visual, double ratio, std::uint64_t seed);

/// Indicator matrices (1 at masked positions) for each modality.
Matrix mask_indicator(const MaskPlan& plan, bool audio);

/// Copy of x with the plan's masked positions set to exactly zero.
Matrix apply_value_mask(const Matrix& x, const MaskPlan& plan, bool audio);

struct GradGate {
  Matrix audio;
  Matrix visual;
};

/// 0 at masked positions, 1 elsewhere.
GradGate make_grad_gate(const MaskPlan& plan);

}  // namespace hscmae
