#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hscmae/eval.hpp"
#include "hscmae/trainer.hpp"

namespace hscmae {

/// Test-split report for a trained student and its post-training CCA.
RetrievalReport evaluate(ModelParams& student, const LinearCcaModel& cca, const FeatureSet& test);

enum class Baseline { random, cca, infonce_single };

/// Accepts "random", "cca" and "infonce-single".
Baseline parse_baseline(const std::string& name);
const char* baseline_name(Baseline b);

/// random: seeded unit-norm Gaussian embeddings of width cca_post_dim.
/// cca: linear CCA on raw train features, applied to test.
/// infonce-single: the network trained with the paired-only InfoNCE term alone.
RetrievalReport run_baseline(Baseline which, const FeatureSet& train, const FeatureSet& test, const ModelConfig& model,
                             const TrainConfig& config);

struct SweepRow {
  double ratio = 0.0;
  RetrievalReport report;
};

std::vector<double> default_mask_ratios();

/// One full training per ratio with the config's seed held fixed.
std::vector<SweepRow> mask_ratio_sweep(const FeatureSet& train, const FeatureSet& test, const ModelConfig& model,
                                       const TrainConfig& config, const std::vector<double>& ratios);

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);

struct AblationRow {
  LossFlags flags;
  RetrievalReport report;
};

/// The seven component combinations of the ablation table, full model first.
std::vector<LossFlags> ablation_grid();

std::vector<AblationRow> run_ablation(const FeatureSet& train, const FeatureSet& test, const ModelConfig& model,
                                      const TrainConfig& config, const std::vector<LossFlags>& grid);

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path);

}  // namespace hscmae
