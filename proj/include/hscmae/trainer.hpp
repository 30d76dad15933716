#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "hscmae/cca_linear.hpp"
#include "hscmae/data_io.hpp"
#include "hscmae/losses.hpp"
#include "hscmae/optimizer.hpp"
#include "hscmae/teacher.hpp"

namespace hscmae {

/// Neighbourhood objective used on the masked path.
enum class ContrastiveMode {
  soft,    // teacher-mined top-k targets
  single,  // paired sample only
};

struct TrainConfig {
  int epochs = 100;
  Index batch_size = 400;
  double mask_ratio = 0.2;
  Index k = 5;
  double tau = 0.05;
  double mining_tau = 0.05;
  int warmup_epochs = 5;
  LossFlags active;
  ContrastiveMode contrastive = ContrastiveMode::soft;
  std::uint64_t seed = 0;
  int eval_every = 0;
  OptimConfig optim;
  CcaConfig cca;
  MomentumSchedule momentum;
  Index cca_post_dim = 10;
  bool drop_last = true;
  /// Gate input gradients of the clean path at the masked coordinates.
  bool grad_gate = true;
  /// Norm/dropout mode of the teacher's clean pass.
  Mode teacher_mode = Mode::eval;

  void validate(const ModelConfig& model) const;
};

struct EpochLog {
  int epoch = 0;
  /// Batch means, indexed by LossTerm.
  std::array<double, 4> losses{};
  std::array<double, 4> weights{};
  double total = 0.0;
  double lr = 0.0;
  double rho = 0.0;
  std::optional<double> map_a2v;
  std::optional<double> map_v2a;
  std::optional<double> map_avg;
};

struct TrainState {
  ModelParams student;
  ModelParams teacher;
  long step = 0;
};

struct StepResult {
  std::array<double, 4> losses{};
  std::array<double, 4> weights{};
  double total = 0.0;
  double grad_norm = 0.0;
  double rho = 0.0;
};

/// Student and teacher initialised from the same seeded weights.
TrainState init_state(const ModelConfig& model, std::uint64_t seed);

/// Steps (1)-(5) of a training step on `tape`: mask plan, masked student
/// pass, teacher pass with mining, gated clean student pass and the weighted
/// objective. All randomness derives from `step_seed`; `bundle` receives the
/// per-term values. Nothing is updated except batch-norm running statistics.
Var step_objective(Tape& tape, TrainState& state, const Matrix& xa, const Matrix& xv, const TrainConfig& config,
                   int epoch, std::uint64_t step_seed, LossBundle& bundle);

/// One optimisation step: masked student pass, clean teacher pass with
/// affinity mining, gated clean student pass, weighted loss, backward, clip,
/// AdamW, EMA update. `lr` and `rho` come from the epoch schedules.
StepResult train_step(TrainState& state, const PairedView& data, const std::vector<Index>& batch,
                      const TrainConfig& config, int epoch, double lr, double rho);

/// Called after each evaluation epoch; may fill the map fields of the log.
/// The state is live, so checkpoints written here capture that epoch.
using EpochHook = std::function<void(EpochLog& log, TrainState& state)>;

struct TrainResult {
  TrainState state;
  LinearCcaModel cca;
  std::vector<EpochLog> logs;
};

/// Full training loop followed by the linear CCA fit on clean student
/// embeddings of the training split. The hook runs every eval_every epochs
/// (and on the last epoch) when eval_every > 0.
TrainResult train(const PairedView& data, const ModelConfig& model, const TrainConfig& config,
                  const EpochHook& hook = {});

/// Retrieval-space embeddings: student projections mapped through the fitted
/// linear CCA and L2 normalized.
Embeddings retrieval_embeddings(ModelParams& student, const LinearCcaModel& cca, const Matrix& audio,
                                const Matrix& visual);

// ---------------------------------------------------------------------------
// Checkpoint container: "HSCMAE01" followed by records of
// (u32 name length, name, u32 rows, u32 cols, rows*cols little-endian f64).
// ---------------------------------------------------------------------------

struct Checkpoint {
  ModelParams student;
  ModelParams teacher;
  LinearCcaModel cca;
  long step = 0;
};

void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const LinearCcaModel& cca);
Checkpoint load_checkpoint(const std::filesystem::path& path);

void write_epoch_log_csv(const std::vector<EpochLog>& logs, const std::filesystem::path& path);

/// 64-bit mixing used to derive per-epoch and per-step seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace hscmae
