#pragma once

#include <span>
#include <string>
#include <vector>

#include "hscmae/model.hpp"

namespace hscmae {

struct OptimConfig {
  double lr0 = 3e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;
  int t_max = 50;
  double eta_min = 0.0;
  /// Restart the cosine cycle every t_max epochs; otherwise hold eta_min after t_max.
  bool cosine_restart = true;

  void validate() const;
};

struct ParamRef {
  Parameter* param = nullptr;
  bool decay = true;
};

/// All parameters of a model; sigma log-variances are excluded from weight decay.
std::vector<ParamRef> optimizer_targets(ModelParams& params);

/// Scales every gradient by max_norm / g when the global L2 norm g exceeds
/// max_norm. Returns the pre-clip norm.
double clip_global_norm(std::span<const ParamRef> params, double max_norm);

/// One AdamW update with bias-corrected moments; decay is applied as
/// theta -= lr * wd * theta before the Adam delta. `step` counts from 1.
void adamw_step(std::span<const ParamRef> params, const OptimConfig& config, long step, double lr);

/// Per-epoch learning rate, epoch >= 1.
double cosine_lr(int epoch, const OptimConfig& config);

}  // namespace hscmae
