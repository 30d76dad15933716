#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hscmae/diffcore.hpp"

namespace hscmae {

struct EncoderConfig {
  /// Input width followed by the width of each layer.
  std::vector<Index> audio_widths{128, 1024, 1024, 1024};
  std::vector<Index> visual_widths{1024, 1024, 1024, 1024};
  double dropout = 0.2;

  bool operator==(const EncoderConfig&) const = default;
};

struct FusionConfig {
  Index heads = 64;

  bool operator==(const FusionConfig&) const = default;
};

struct ProjectorConfig {
  Index out_dim = 32;

  bool operator==(const ProjectorConfig&) const = default;
};

struct ModelConfig {
  EncoderConfig encoder;
  FusionConfig fusion;
  ProjectorConfig projector;

  /// Full-size network for 128-D audio / 1024-D visual features.
  static ModelConfig full_size();
  /// Same topology scaled down to `width` for desk-scale runs.
  static ModelConfig scaled(Index d_audio, Index d_visual, Index width, Index heads);

  Index d_audio() const { return encoder.audio_widths.front(); }
  Index d_visual() const { return encoder.visual_widths.front(); }
  Index model_dim() const { return encoder.audio_widths.back(); }
  Index head_dim() const { return model_dim() / fusion.heads; }

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Loss terms in the order used for the log-variance weights.
enum class LossTerm { rec = 0, infonce = 1, cca = 2, dis = 3 };
inline constexpr std::array<LossTerm, 4> kLossTerms{LossTerm::rec, LossTerm::infonce, LossTerm::cca,
                                                    LossTerm::dis};
const char* loss_name(LossTerm term);
std::string sigma_name(LossTerm term);

/// Every learnable tensor of the network plus the batch-norm running statistics.
/// std::map keeps Parameter addresses stable and iteration order deterministic.
struct ModelParams {
  ModelConfig config;
  std::map<std::string, Parameter> params;
  std::map<std::string, BatchNormStats> norm_stats;

  ModelParams() = default;
  /// Xavier-uniform weights, zero biases, unit norm gains, sigma = 0.
  ModelParams(const ModelConfig& config, std::uint64_t seed);

  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool has(const std::string& name) const { return params.count(name) != 0; }

  std::size_t scalar_count() const;
  void zero_grad();
};

struct ModalityPair {
  Var audio;
  Var visual;
};

/// Per-layer linear -> norm -> tanh -> dropout; batch-norm on the first layer,
/// layer-norm thereafter. Train mode needs at least two rows.
ModalityPair encode(Tape& tape, ModelParams& params, ModalityPair x, Mode mode, Rng& rng);

/// Cross-modal multi-head attention with one token per sample: audio queries
/// attend over the paired visual token and vice versa, followed by a residual
/// connection and layer-norm.
ModalityPair fuse(Tape& tape, ModelParams& params, ModalityPair h);

/// Linear map to the retrieval space followed by row L2 normalization.
ModalityPair project(Tape& tape, ModelParams& params, ModalityPair u);

/// Per-modality MLP [model, model, model, d] from the fused representation.
ModalityPair decode(Tape& tape, ModelParams& params, ModalityPair u);

/// Multi-head attention for a single key/value token per query row.
/// q, k, v are n x model_dim; returns the concatenated head contexts.
Var single_token_attention(Var q, Var k, Var v, Index heads);

struct Embeddings {
  Matrix audio;
  Matrix visual;
};

/// Eval-mode clean-path embeddings (encode -> fuse -> project), processed in row chunks.
Embeddings embed(ModelParams& params, const Matrix& audio, const Matrix& visual, Index chunk = 512);

}  // namespace hscmae
