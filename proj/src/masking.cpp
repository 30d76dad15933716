#include "hscmae/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hscmae {

namespace {

std::vector<std::vector<Index>> draw_sets(Index n, Index d, Index count, Rng& rng) {
  std::vector<std::vector<Index>> sets(static_cast<std::size_t>(n));
  std::vector<Index> perm(static_cast<std::size_t>(d));
  for (auto& set : sets) {
    std::iota(perm.begin(), perm.end(), Index{0});
    // partial Fisher-Yates: the first `count` slots are a uniform subset
    for (Index j = 0; j < count; ++j) {
      std::uniform_int_distribution<Index> pick(j, d - 1);
      std::swap(perm[static_cast<std::size_t>(j)], perm[static_cast<std::size_t>(pick(rng))]);
    }
    set.assign(perm.begin(), perm.begin() + count);
    std::sort(set.begin(), set.end());
  }
  return sets;
}

}  // namespace

MaskPlan make_plan(Index n, Index d_audio, Index d_visual, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio < 1.0)) fail(ErrorKind::usage, "mask ratio must lie in [0,1), got " + std::to_string(ratio));
  if (n < 0 || d_audio < 1 || d_visual < 1) fail(ErrorKind::usage, "make_plan: invalid dimensions");
  MaskPlan plan;
  plan.ratio = ratio;
  plan.seed = seed;
  plan.d_audio = d_audio;
  plan.d_visual = d_visual;
  Rng rng(seed);
  const auto count_a = static_cast<Index>(std::floor(ratio * static_cast<double>(d_audio)));
  const auto count_v = static_cast<Index>(std::floor(ratio * static_cast<double>(d_visual)));
  plan.masked_audio = draw_sets(n, d_audio, count_a, rng);
  plan.masked_visual = draw_sets(n, d_visual, count_v, rng);
  return plan;
}

Matrix mask_indicator(const MaskPlan& plan, bool audio) {
  const auto& sets = audio ? plan.masked_audio : plan.masked_visual;
  Matrix m = Matrix::Zero(plan.rows(), audio ? plan.d_audio : plan.d_visual);
  for (std::size_t i = 0; i < sets.size(); ++i) {
    for (Index j : sets[i]) m(static_cast<Index>(i), j) = 1.0;
  }
  return m;
}

Matrix apply_value_mask(const Matrix& x, const MaskPlan& plan, bool audio) {
  const auto& sets = audio ? plan.masked_audio : plan.masked_visual;
  const Index d = audio ? plan.d_audio : plan.d_visual;
  if (x.rows() != plan.rows() || x.cols() != d) {
    fail(ErrorKind::shape, "apply_value_mask: input " + shape_str(x) + " does not match plan " +
                               std::to_string(plan.rows()) + "x" + std::to_string(d));
  }
  Matrix out = x;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    for (Index j : sets[i]) out(static_cast<Index>(i), j) = 0.0;
  }
  return out;
}

GradGate make_grad_gate(const MaskPlan& plan) {
  GradGate g;
  g.audio = (1.0 - mask_indicator(plan, true).array()).matrix();
  g.visual = (1.0 - mask_indicator(plan, false).array()).matrix();
  return g;
}

}  // namespace hscmae
