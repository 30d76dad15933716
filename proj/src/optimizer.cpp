#include "hscmae/optimizer.hpp"

#include <cmath>
#include <numbers>

namespace hscmae {

void OptimConfig::validate() const {
  if (!(lr0 > 0.0)) fail(ErrorKind::usage, "lr0 must be positive");
  if (!(clip_norm > 0.0)) fail(ErrorKind::usage, "clip norm must be positive");
  if (weight_decay < 0.0) fail(ErrorKind::usage, "weight decay must be non-negative");
  if (t_max < 1) fail(ErrorKind::usage, "cosine T_max must be >= 1");
  if (eta_min < 0.0 || eta_min > lr0) fail(ErrorKind::usage, "eta_min must lie in [0, lr0]");
}

std::vector<ParamRef> optimizer_targets(ModelParams& params) {
  std::vector<ParamRef> out;
  out.reserve(params.params.size());
  for (auto& [name, p] : params.params) {
    out.push_back({&p, name.rfind("sigma/", 0) != 0});
  }
  return out;
}

double clip_global_norm(std::span<const ParamRef> params, double max_norm) {
  if (!(max_norm > 0.0)) fail(ErrorKind::usage, "clip_global_norm: max norm must be positive");
  double sq = 0.0;
  for (const ParamRef& r : params) sq += r.param->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) fail(ErrorKind::numeric, "clip_global_norm: gradient norm is not finite");
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (const ParamRef& r : params) r.param->grad *= s;
  }
  return norm;
}

void adamw_step(std::span<const ParamRef> params, const OptimConfig& config, long step, double lr) {
  if (step < 1) fail(ErrorKind::usage, "adamw_step: step index starts at 1");
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
  for (const ParamRef& r : params) {
    Parameter& p = *r.param;
    if (r.decay && config.weight_decay != 0.0) p.value -= lr * config.weight_decay * p.value;
    p.adam_m = config.beta1 * p.adam_m + (1.0 - config.beta1) * p.grad;
    p.adam_v = config.beta2 * p.adam_v + (1.0 - config.beta2) * p.grad.cwiseProduct(p.grad);
    const auto m_hat = p.adam_m.array() / bc1;
    const auto v_hat = p.adam_v.array() / bc2;
    p.value.array() -= lr * m_hat / (v_hat.sqrt() + config.eps);
  }
}

double cosine_lr(int epoch, const OptimConfig& config) {
  if (epoch < 1) fail(ErrorKind::usage, "cosine_lr: epoch must be >= 1");
  int pos = epoch - 1;
  if (config.cosine_restart) {
    pos %= config.t_max;
  } else if (pos >= config.t_max) {
    return config.eta_min;
  }
  const double phase = std::numbers::pi * static_cast<double>(pos) / static_cast<double>(config.t_max);
  return config.eta_min + (config.lr0 - config.eta_min) * (1.0 + std::cos(phase)) / 2.0;
}

}  // namespace hscmae
