#include "hscmae/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "hscmae/masking.hpp"

namespace hscmae {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined state
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void TrainConfig::validate(const ModelConfig& model) const {
  model.validate();
  optim.validate();
  if (epochs < 0) fail(ErrorKind::usage, "epochs must be >= 0");
  if (batch_size < 2) fail(ErrorKind::usage, "batch size must be >= 2");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) fail(ErrorKind::usage, "mask ratio must lie in [0,1)");
  if (k < 1) fail(ErrorKind::usage, "k must be >= 1");
  if (!(tau > 0.0) || !(mining_tau > 0.0)) fail(ErrorKind::usage, "temperatures must be positive");
  if (warmup_epochs < 0) fail(ErrorKind::usage, "warmup epochs must be >= 0");
  if (!active.any()) fail(ErrorKind::usage, "at least one loss term must be active");
  if (active.cca && (cca.r < 1 || cca.r > model.projector.out_dim)) {
    fail(ErrorKind::usage, "cca r must lie in [1, projection dim]");
  }
  if (!(cca.epsilon > 0.0)) fail(ErrorKind::usage, "cca epsilon must be positive");
  if (cca_post_dim < 1 || cca_post_dim > model.projector.out_dim) {
    fail(ErrorKind::usage, "post-training CCA dim must lie in [1, projection dim]");
  }
  if (eval_every < 0) fail(ErrorKind::usage, "eval_every must be >= 0");
}

TrainState init_state(const ModelConfig& model, std::uint64_t seed) {
  TrainState s;
  s.student = ModelParams(model, mix_seed(seed, 0xC0FFEE));
  s.teacher = s.student;
  return s;
}

namespace {

std::string describe_losses(const LossBundle& b) {
  std::ostringstream os;
  os.precision(6);
  for (LossTerm t : kLossTerms) {
    os << loss_name(t) << "=";
    if (b.active.active(t) && b.terms[static_cast<std::size_t>(t)].valid()) {
      os << b.terms[static_cast<std::size_t>(t)].value()(0, 0);
    } else {
      os << "off";
    }
    os << " ";
  }
  return os.str();
}

}  // namespace

Var step_objective(Tape& tape, TrainState& state, const Matrix& xa, const Matrix& xv, const TrainConfig& config,
                   int epoch, std::uint64_t step_seed, LossBundle& bundle) {
  const Index n = xa.rows();
  if (n < 2) fail(ErrorKind::usage, "train_step: batch needs at least 2 samples");
  const LossFlags& on = config.active;
  const bool soft = config.contrastive == ContrastiveMode::soft;
  const bool need_mae = on.rec || on.infonce || on.dis;
  const bool need_teacher = on.dis || (on.infonce && soft);

  // (1) mask plan shared by the value mask and the gradient gate
  const MaskPlan plan = make_plan(n, xa.cols(), xv.cols(), config.mask_ratio, mix_seed(step_seed, 1));

  bundle = LossBundle{};
  bundle.active = on;
  Rng dropout_rng(mix_seed(step_seed, 2));

  // (2) student masked path
  ModalityPair z_mae;
  if (need_mae) {
    ModalityPair x_masked{tape.constant(apply_value_mask(xa, plan, true)),
                          tape.constant(apply_value_mask(xv, plan, false))};
    ModalityPair u = fuse(tape, state.student, encode(tape, state.student, x_masked, Mode::train, dropout_rng));
    z_mae = project(tape, state.student, u);
    if (on.rec) {
      ModalityPair x_hat = decode(tape, state.student, u);
      bundle.term(LossTerm::rec) = rec_loss(tape.constant(xa), tape.constant(xv), x_hat.audio, x_hat.visual);
    }
  }

  // (3) teacher clean path; its outputs enter the student tape as constants
  if (need_teacher) {
    Tape teacher_tape;
    Rng teacher_rng(mix_seed(step_seed, 3));
    ModalityPair x_clean{teacher_tape.constant(xa), teacher_tape.constant(xv)};
    ModalityPair zt = project(teacher_tape, state.teacher,
                              fuse(teacher_tape, state.teacher,
                                   encode(teacher_tape, state.teacher, x_clean, config.teacher_mode, teacher_rng)));
    Var ta = tape.constant(zt.audio.value());
    Var tv = tape.constant(zt.visual.value());
    if (on.infonce && soft) {
      const AffinityPair targets = mine_affinities(ta.value(), tv.value(), config.k, config.mining_tau);
      bundle.term(LossTerm::infonce) = soft_infonce(z_mae.audio, z_mae.visual, targets, config.tau);
    }
    if (on.dis) bundle.term(LossTerm::dis) = distill_loss(z_mae.audio, z_mae.visual, ta, tv);
  }
  if (on.infonce && !soft) {
    bundle.term(LossTerm::infonce) = infonce_single(z_mae.audio, z_mae.visual, config.tau);
  }

  // (4) student clean path with the gradient gate at the input boundary
  if (on.cca) {
    Var ca = tape.constant(xa);
    Var cv = tape.constant(xv);
    if (config.grad_gate) {
      const GradGate gate = make_grad_gate(plan);
      ca = gradient_gate(ca, gate.audio);
      cv = gradient_gate(cv, gate.visual);
    }
    ModalityPair z_cca =
        project(tape, state.student, fuse(tape, state.student, encode(tape, state.student, {ca, cv}, Mode::train,
                                                                     dropout_rng)));
    bundle.term(LossTerm::cca) = dcca_loss(z_cca.audio, z_cca.visual, config.cca);
  }

  // (5) weighted objective
  try {
    return total_loss(tape, bundle, state.student, epoch, config.warmup_epochs);
  } catch (const Error& e) {
    fail(e.kind(), std::string(e.what()) + " [" + describe_losses(bundle) + "]");
  }
}

StepResult train_step(TrainState& state, const PairedView& data, const std::vector<Index>& batch,
                      const TrainConfig& config, int epoch, double lr, double rho) {
  if (batch.size() < 2) fail(ErrorKind::usage, "train_step: batch needs at least 2 samples");
  ++state.step;
  const std::uint64_t step_seed = mix_seed(config.seed, static_cast<std::uint64_t>(state.step));
  Tape tape;
  LossBundle bundle;
  Var total = step_objective(tape, state, gather_rows(data.audio, batch), gather_rows(data.visual, batch), config,
                             epoch, step_seed, bundle);
  // (6) backward, clip, AdamW
  if (!std::isfinite(total.item())) {
    fail(ErrorKind::numeric, "non-finite total loss at step " + std::to_string(state.step) + " [" +
                                 describe_losses(bundle) + "]");
  }
  state.student.zero_grad();
  tape.backward(total);
  const std::vector<ParamRef> targets = optimizer_targets(state.student);
  StepResult result;
  result.grad_norm = clip_global_norm(targets, config.optim.clip_norm);
  adamw_step(targets, config.optim, state.step, lr);

  // (7) teacher follows the student
  ema_update(state.teacher, state.student, rho);

  result.losses = bundle.values;
  result.weights = bundle.weights;
  result.total = total.item();
  result.rho = rho;
  return result;
}

TrainResult train(const PairedView& data, const ModelConfig& model, const TrainConfig& config,
                  const EpochHook& hook) {
  config.validate(model);
  if (data.size() == 0) fail(ErrorKind::data, "training split is empty");
  if (data.audio.cols() != model.d_audio() || data.visual.cols() != model.d_visual()) {
    fail(ErrorKind::data, "feature dims " + std::to_string(data.audio.cols()) + "/" +
                              std::to_string(data.visual.cols()) + " do not match the model inputs " +
                              std::to_string(model.d_audio()) + "/" + std::to_string(model.d_visual()));
  }
  TrainResult result;
  result.state = init_state(model, config.seed);
  const Index batch_size = std::min<Index>(config.batch_size, data.size());

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, config.optim);
    const double rho = anneal_momentum(epoch, config.epochs, config.momentum);
    const auto epoch_batches =
        batches(data.size(), batch_size, mix_seed(config.seed, 1000 + static_cast<std::uint64_t>(epoch)),
                config.drop_last);
    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    log.rho = rho;
    for (const auto& batch : epoch_batches) {
      if (batch.size() < 2) continue;
      const StepResult step = train_step(result.state, data, batch, config, epoch, lr, rho);
      for (std::size_t i = 0; i < 4; ++i) log.losses[i] += step.losses[i];
      log.weights = step.weights;
      log.total += step.total;
    }
    const double count = static_cast<double>(std::max<std::size_t>(epoch_batches.size(), 1));
    for (double& l : log.losses) l /= count;
    log.total /= count;
    if (hook && config.eval_every > 0 && (epoch % config.eval_every == 0 || epoch == config.epochs)) {
      hook(log, result.state);
    }
    result.logs.push_back(log);
  }

  const Embeddings z = embed(result.state.student, data.audio, data.visual);
  result.cca = fit_linear_cca(z.audio, z.visual, config.cca_post_dim, config.cca.epsilon);
  return result;
}

Embeddings retrieval_embeddings(ModelParams& student, const LinearCcaModel& cca, const Matrix& audio,
                                const Matrix& visual) {
  const Embeddings z = embed(student, audio, visual);
  const CcaProjection p = transform(cca, z.audio, z.visual);
  return {normalize_rows(p.a), normalize_rows(p.v)};
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'H', 'S', 'C', 'M', 'A', 'E', '0', '1'};

void put_record(std::string& buf, const std::string& name, const Matrix& m) {
  const auto len = static_cast<std::uint32_t>(name.size());
  const auto rows = static_cast<std::uint32_t>(m.rows());
  const auto cols = static_cast<std::uint32_t>(m.cols());
  buf.append(reinterpret_cast<const char*>(&len), 4);
  buf.append(name);
  buf.append(reinterpret_cast<const char*>(&rows), 4);
  buf.append(reinterpret_cast<const char*>(&cols), 4);
  buf.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * 8);
}

Matrix row_of(const std::vector<Index>& v) {
  Matrix m(1, static_cast<Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Index>(i)) = static_cast<double>(v[i]);
  return m;
}

Matrix scalar(double x) { return Matrix::Constant(1, 1, x); }

void put_model(std::string& buf, const std::string& prefix, const ModelParams& p) {
  for (const auto& [name, param] : p.params) put_record(buf, prefix + name, param.value);
  for (const auto& [name, stats] : p.norm_stats) {
    put_record(buf, prefix + "buffer/" + name + "/running_mean", stats.mean);
    put_record(buf, prefix + "buffer/" + name + "/running_var", stats.var);
  }
}

std::vector<Index> indices_of(const Matrix& m) {
  std::vector<Index> v;
  for (Index i = 0; i < m.size(); ++i) v.push_back(static_cast<Index>(std::llround(m.data()[i])));
  return v;
}

void fill_model(ModelParams& p, const std::string& prefix, std::map<std::string, Matrix>& records,
                const std::string& path) {
  auto take = [&](const std::string& name, Matrix& dst) {
    auto it = records.find(name);
    if (it == records.end()) fail(ErrorKind::data, "'" + path + "': checkpoint lacks record '" + name + "'");
    if (it->second.rows() != dst.rows() || it->second.cols() != dst.cols()) {
      fail(ErrorKind::data, "'" + path + "': record '" + name + "' is " + shape_str(it->second) + ", expected " +
                                shape_str(dst));
    }
    dst = it->second;
  };
  for (auto& [name, param] : p.params) {
    take(prefix + name, param.value);
    param = Parameter(param.value);
  }
  for (auto& [name, stats] : p.norm_stats) {
    take(prefix + "buffer/" + name + "/running_mean", stats.mean);
    take(prefix + "buffer/" + name + "/running_var", stats.var);
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const LinearCcaModel& cca) {
  const ModelConfig& c = state.student.config;
  std::string buf(kCkptMagic, 8);
  put_record(buf, "config/audio_widths", row_of(c.encoder.audio_widths));
  put_record(buf, "config/visual_widths", row_of(c.encoder.visual_widths));
  put_record(buf, "config/dropout", scalar(c.encoder.dropout));
  put_record(buf, "config/heads", scalar(static_cast<double>(c.fusion.heads)));
  put_record(buf, "config/proj_dim", scalar(static_cast<double>(c.projector.out_dim)));
  put_record(buf, "state/step", scalar(static_cast<double>(state.step)));
  put_model(buf, "", state.student);
  put_model(buf, "teacher/", state.teacher);
  if (cca.fitted()) {
    put_record(buf, "cca/mean_a", cca.mean_a);
    put_record(buf, "cca/mean_v", cca.mean_v);
    put_record(buf, "cca/proj_a", cca.proj_a);
    put_record(buf, "cca/proj_v", cca.proj_v);
    put_record(buf, "cca/rho", Eigen::Map<const Matrix>(cca.rho.data(), 1, static_cast<Index>(cca.rho.size())));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::data, "cannot write checkpoint '" + path.string() + "'");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) fail(ErrorKind::data, "write failed for checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::data, "cannot open checkpoint '" + path.string() + "'");
  const std::string buf{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  const std::string p = path.string();
  if (buf.size() < 8 || std::memcmp(buf.data(), kCkptMagic, 8) != 0) {
    fail(ErrorKind::data, "'" + p + "': not a HSCMAE01 checkpoint");
  }
  std::map<std::string, Matrix> records;
  std::size_t off = 8;
  auto need = [&](std::size_t bytes) {
    if (buf.size() - off < bytes) {
      fail(ErrorKind::data, "'" + p + "': truncated record at byte offset " + std::to_string(off) + ", expected " +
                                std::to_string(bytes) + " more bytes, have " + std::to_string(buf.size() - off));
    }
  };
  auto u32 = [&]() {
    need(4);
    std::uint32_t v = 0;
    std::memcpy(&v, buf.data() + off, 4);
    off += 4;
    return v;
  };
  while (off < buf.size()) {
    const std::uint32_t len = u32();
    need(len);
    std::string name(buf.data() + off, len);
    off += len;
    const std::uint32_t rows = u32();
    const std::uint32_t cols = u32();
    const std::size_t bytes = static_cast<std::size_t>(rows) * cols * 8;
    need(bytes);
    Matrix m(rows, cols);
    std::memcpy(m.data(), buf.data() + off, bytes);
    off += bytes;
    records[name] = std::move(m);
  }
  auto get = [&](const std::string& name) -> const Matrix& {
    auto it = records.find(name);
    if (it == records.end()) fail(ErrorKind::data, "'" + p + "': checkpoint lacks record '" + name + "'");
    return it->second;
  };

  ModelConfig cfg;
  cfg.encoder.audio_widths = indices_of(get("config/audio_widths"));
  cfg.encoder.visual_widths = indices_of(get("config/visual_widths"));
  cfg.encoder.dropout = get("config/dropout")(0, 0);
  cfg.fusion.heads = static_cast<Index>(std::llround(get("config/heads")(0, 0)));
  cfg.projector.out_dim = static_cast<Index>(std::llround(get("config/proj_dim")(0, 0)));
  try {
    cfg.validate();
  } catch (const Error& e) {
    fail(ErrorKind::data, "'" + p + "': invalid model config: " + e.what());
  }

  Checkpoint ck;
  ck.student = ModelParams(cfg, 0);
  ck.teacher = ModelParams(cfg, 0);
  fill_model(ck.student, "", records, p);
  fill_model(ck.teacher, "teacher/", records, p);
  ck.step = static_cast<long>(std::llround(get("state/step")(0, 0)));
  if (records.count("cca/proj_a")) {
    ck.cca.mean_a = get("cca/mean_a");
    ck.cca.mean_v = get("cca/mean_v");
    ck.cca.proj_a = get("cca/proj_a");
    ck.cca.proj_v = get("cca/proj_v");
    const Matrix& rho = get("cca/rho");
    ck.cca.rho.assign(rho.data(), rho.data() + rho.size());
  }
  return ck;
}

void write_epoch_log_csv(const std::vector<EpochLog>& logs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::data, "cannot write '" + path.string() + "'");
  out << "epoch,l_rec,l_infonce,l_cca,l_dis,w_rec,w_infonce,w_cca,w_dis,total,lr,rho,map_a2v,map_v2a,map_avg\n";
  char buf[64];
  auto num = [&](double x) {
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return std::string(buf);
  };
  auto opt = [&](const std::optional<double>& x) { return x ? num(*x) : std::string(); };
  for (const EpochLog& l : logs) {
    out << l.epoch;
    for (double x : l.losses) out << "," << num(x);
    for (double x : l.weights) out << "," << num(x);
    out << "," << num(l.total) << "," << num(l.lr) << "," << num(l.rho) << "," << opt(l.map_a2v) << ","
        << opt(l.map_v2a) << "," << opt(l.map_avg) << "\n";
  }
}

}  // namespace hscmae
