#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hscmae/diffcore.hpp"

namespace hscmae {

enum class Split { train, test };

/// Paired audio/visual features. Labels exist for evaluation only.
struct FeatureSet {
  Matrix audio;
  Matrix visual;
  std::optional<std::vector<int>> labels;
  Split split = Split::train;

  Index size() const { return audio.rows(); }
  void validate() const;
};

/// Label-free view handed to training code.
struct PairedView {
  const Matrix& audio;
  const Matrix& visual;

  Index size() const { return audio.rows(); }
};

inline PairedView unlabeled(const FeatureSet& set) { return {set.audio, set.visual}; }

/// Binary container: "AVFEAT01", u32 n, u32 d_a, u32 d_v, u8 has_labels,
/// little-endian f32 audio block, f32 visual block, optional u32 labels.
void save_features(const FeatureSet& set, const std::filesystem::path& path);
/// Reads the binary container, or CSV when the extension is .csv.
FeatureSet load_features(const std::filesystem::path& path);

/// CSV with header a0..a{d_a-1},v0..v{d_v-1}[,label].
void save_features_csv(const FeatureSet& set, const std::filesystem::path& path);
FeatureSet load_features_csv(const std::filesystem::path& path);

struct SynthConfig {
  int classes = 8;
  int per_class = 250;
  Index d_audio = 32;
  Index d_visual = 64;
  Index latent_dim = 8;
  double mean_scale = 0.5;
  double noise = 0.5;
  /// Elementwise cubic warp of the visual view.
  bool warp = true;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Class means share a latent space across modalities, samples add isotropic
/// noise, 80/20 stratified train/test split. Deterministic per seed.
std::pair<FeatureSet, FeatureSet> generate_synthetic(const SynthConfig& config);

/// Shuffled mini-batches of indices into a set of n rows. The shuffle is seeded
/// by `seed`; with drop_last the incomplete tail batch is omitted.
std::vector<std::vector<Index>> batches(Index n, Index batch_size, std::uint64_t seed, bool drop_last = true);

/// Row subset of a matrix.
Matrix gather_rows(const Matrix& m, const std::vector<Index>& rows);

}  // namespace hscmae
