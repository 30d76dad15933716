// hscmae command-line front end: synth, train, eval, baseline, sweep, ablate.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hscmae/experiments.hpp"

#ifndef HSCMAE_VERSION
#define HSCMAE_VERSION "dev"
#endif

namespace fs = std::filesystem;
using hscmae::ErrorKind;
using hscmae::fail;

namespace {

// Options shared by every subcommand. Defaults are the full-size recipe;
// the input widths always come from the feature files.
struct Shared {
  std::uint64_t seed = 0;
  int epochs = 100;
  hscmae::Index batch_size = 400;
  double mask_ratio = 0.2;
  hscmae::Index k = 5;
  double tau = 0.05;
  double mining_tau = 0.05;
  int warmup = 5;
  double lr = 3e-4;
  double weight_decay = 1e-4;
  double clip = 1.0;
  int t_max = 50;
  bool no_restart = false;
  double rho_start = 0.95;
  double rho_end = 0.999;
  hscmae::Index cca_r = 32;
  double cca_eps = 1e-4;
  hscmae::Index cca_dim = 10;
  int eval_every = 0;
  hscmae::Index width = 1024;
  hscmae::Index heads = 64;
  hscmae::Index proj_dim = 32;
  double dropout = 0.2;
  bool no_cca = false;
  bool no_rec = false;
  bool no_infonce = false;
  bool no_dis = false;
};

void add_shared(CLI::App& app, Shared& s) {
  app.add_option("--seed", s.seed, "Seed for initialisation, masking, batching and dropout");
  app.add_option("--epochs", s.epochs, "Training epochs")->check(CLI::NonNegativeNumber);
  app.add_option("--batch-size", s.batch_size, "Mini-batch size (>= 2)");
  app.add_option("--mask-ratio", s.mask_ratio, "Fraction of feature dimensions masked per sample, in [0,1)");
  app.add_option("--k", s.k, "Mined neighbours per anchor, the pair included");
  app.add_option("--tau", s.tau, "InfoNCE temperature");
  app.add_option("--mining-tau", s.mining_tau, "Temperature of the affinity weights");
  app.add_option("--warmup-epochs", s.warmup, "Epochs on fixed loss weights before uncertainty weighting");
  app.add_option("--lr", s.lr, "Peak learning rate");
  app.add_option("--weight-decay", s.weight_decay, "Decoupled weight decay");
  app.add_option("--clip-norm", s.clip, "Global gradient-norm bound");
  app.add_option("--t-max", s.t_max, "Cosine cycle length in epochs");
  app.add_flag("--no-cosine-restart", s.no_restart, "Hold the floor after t-max instead of restarting the cycle");
  app.add_option("--rho-start", s.rho_start, "EMA momentum at the first epoch");
  app.add_option("--rho-end", s.rho_end, "EMA momentum at the last epoch");
  app.add_option("--cca-r", s.cca_r, "Canonical components in the DCCA loss");
  app.add_option("--cca-eps", s.cca_eps, "Covariance ridge");
  app.add_option("--cca-dim", s.cca_dim, "Post-training linear CCA dimension");
  app.add_option("--eval-every", s.eval_every, "Evaluate on the test split every N epochs (0 = never)");
  app.add_option("--width", s.width, "Encoder width");
  app.add_option("--heads", s.heads, "Attention heads");
  app.add_option("--proj-dim", s.proj_dim, "Projection width");
  app.add_option("--dropout", s.dropout, "Encoder dropout rate");
  app.add_flag("--no-cca", s.no_cca, "Disable the DCCA term");
  app.add_flag("--no-rec", s.no_rec, "Disable the reconstruction term");
  app.add_flag("--no-infonce", s.no_infonce, "Disable the soft InfoNCE term");
  app.add_flag("--no-dis", s.no_dis, "Disable the self-distillation term");
}

hscmae::ModelConfig model_config(const Shared& s, hscmae::Index d_audio, hscmae::Index d_visual) {
  hscmae::ModelConfig m = hscmae::ModelConfig::scaled(d_audio, d_visual, s.width, s.heads);
  m.projector.out_dim = s.proj_dim;
  m.encoder.dropout = s.dropout;
  m.validate();
  return m;
}

hscmae::TrainConfig train_config(const Shared& s) {
  hscmae::TrainConfig c;
  c.epochs = s.epochs;
  c.batch_size = s.batch_size;
  c.mask_ratio = s.mask_ratio;
  c.k = s.k;
  c.tau = s.tau;
  c.mining_tau = s.mining_tau;
  c.warmup_epochs = s.warmup;
  c.seed = s.seed;
  c.eval_every = s.eval_every;
  c.optim.lr0 = s.lr;
  c.optim.weight_decay = s.weight_decay;
  c.optim.clip_norm = s.clip;
  c.optim.t_max = s.t_max;
  c.optim.cosine_restart = !s.no_restart;
  c.momentum = {s.rho_start, s.rho_end};
  c.cca.r = s.cca_r;
  c.cca.epsilon = s.cca_eps;
  c.cca_post_dim = s.cca_dim;
  c.active = {!s.no_rec, !s.no_infonce, !s.no_cca, !s.no_dis};
  if (!c.active.any()) fail(ErrorKind::usage, "all loss terms are disabled; keep at least one of cca, rec, infonce, dis");
  return c;
}

hscmae::FeatureSet load_labeled(const std::string& path) {
  hscmae::FeatureSet set = hscmae::load_features(path);
  if (!set.labels) fail(ErrorKind::data, "'" + path + "' has no labels; evaluation needs a labelled split");
  return set;
}

class Manifest {
 public:
  Manifest(std::string command, const CLI::App& root, fs::path path) : path_(std::move(path)) {
    doc_["command"] = std::move(command);
    doc_["version"] = HSCMAE_VERSION;
    doc_["config"] = root.config_to_str(true, false);
    doc_["outputs"] = nlohmann::json::object();
    start_ = std::chrono::steady_clock::now();
  }
  void set(const std::string& key, nlohmann::json value) { doc_[key] = std::move(value); }
  void output(const std::string& key, const fs::path& p) { doc_["outputs"][key] = p.string(); }
  void write() {
    if (path_.empty()) return;
    std::ofstream out(path_, std::ios::trunc);
    if (!out) fail(ErrorKind::data, "cannot write manifest '" + path_.string() + "'");
    out << doc_.dump(2) << "\n";
  }
  void finish() {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    doc_["elapsed_seconds"] = secs;
    write();
  }

 private:
  fs::path path_;
  nlohmann::json doc_;
  std::chrono::steady_clock::time_point start_;
};

void print_report(const char* label, const hscmae::RetrievalReport& r) {
  std::printf("%-16s a2v=%.4f v2a=%.4f avg=%.4f gap=%.4f\n", label, r.map_a2v, r.map_v2a, r.map_avg, r.gap);
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::usage:
    case ErrorKind::shape: return 1;
    case ErrorKind::data: return 2;
    case ErrorKind::numeric: return 3;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HSC-MAE audio-visual representation learning"};
  app.set_config("--config", "", "key = value file; command-line flags take precedence");
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_version_flag("--version", HSCMAE_VERSION);
  Shared s;
  add_shared(app, s);

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic paired train/test split")->fallthrough();
  hscmae::SynthConfig sc;
  std::string synth_dir = ".";
  std::string synth_format = "bin";
  bool no_warp = false;
  synth->add_option("--out-dir", synth_dir, "Output directory");
  synth->add_option("--classes", sc.classes, "Number of classes (>= 2)");
  synth->add_option("--per-class", sc.per_class, "Samples per class");
  synth->add_option("--d-audio", sc.d_audio, "Audio feature width");
  synth->add_option("--d-visual", sc.d_visual, "Visual feature width");
  synth->add_option("--latent-dim", sc.latent_dim, "Shared latent width");
  synth->add_option("--mean-scale", sc.mean_scale, "Spread of the class means");
  synth->add_option("--noise", sc.noise, "Per-sample noise std");
  synth->add_flag("--no-warp", no_warp, "Skip the cubic warp of the visual view");
  synth->add_option("--format", synth_format, "bin or csv")->check(CLI::IsMember({"bin", "csv"}));

  // train
  auto* train = app.add_subcommand("train", "Train on a feature file and write a checkpoint")->fallthrough();
  std::string train_features, train_test, checkpoint = "hscmae.ckpt", log_csv, manifest_path;
  train->add_option("--features", train_features, "Training features")->required();
  train->add_option("--test-features", train_test, "Labelled split for --eval-every reporting");
  train->add_option("--checkpoint", checkpoint, "Checkpoint output path");
  train->add_option("--log-csv", log_csv, "Per-epoch loss log");
  train->add_option("--manifest", manifest_path, "Run manifest (JSON); defaults to <checkpoint>.json");

  // eval
  auto* eval = app.add_subcommand("eval", "Retrieval mAP of a checkpoint on a labelled split")->fallthrough();
  std::string eval_ckpt, eval_features, report_csv, ranklists_csv;
  hscmae::Index depth = 10;
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint to evaluate")->required();
  eval->add_option("--features", eval_features, "Labelled test features")->required();
  eval->add_option("--report-csv", report_csv, "mAP report output");
  eval->add_option("--ranklists-csv", ranklists_csv, "Top-N rank lists per query");
  eval->add_option("--depth", depth, "Rank-list length");

  // baseline / sweep / ablate share the split inputs
  std::string tr_path, te_path, out_csv;
  auto add_split = [&](CLI::App* sub, const char* csv_help) {
    sub->add_option("--train-features", tr_path, "Training features")->required();
    sub->add_option("--test-features", te_path, "Labelled test features")->required();
    sub->add_option("--csv", out_csv, csv_help);
    sub->add_option("--manifest", manifest_path, "Run manifest (JSON)");
  };
  auto* baseline = app.add_subcommand("baseline", "Random, linear CCA or paired-only InfoNCE baseline")->fallthrough();
  std::string baseline_name = "cca";
  baseline->add_option("--name", baseline_name, "random | cca | infonce-single");
  add_split(baseline, "Report output");
  auto* sweep = app.add_subcommand("sweep", "One training per mask ratio")->fallthrough();
  std::vector<double> ratios = hscmae::default_mask_ratios();
  sweep->add_option("--ratios", ratios, "Mask ratios")->delimiter(',');
  add_split(sweep, "Sweep table output");
  auto* ablate = app.add_subcommand("ablate", "Train the seven loss-term combinations")->fallthrough();
  add_split(ablate, "Combined ablation table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*synth) {
      sc.warp = !no_warp;
      sc.seed = s.seed;
      sc.validate();
      const fs::path dir(synth_dir);
      fs::create_directories(dir);
      auto [tr, te] = hscmae::generate_synthetic(sc);
      const std::string ext = synth_format == "csv" ? ".csv" : ".feat";
      const fs::path trp = dir / ("train" + ext), tep = dir / ("test" + ext);
      Manifest m("synth", app, dir / "manifest.json");
      m.set("seed", s.seed);
      m.output("train", trp);
      m.output("test", tep);
      m.write();
      if (synth_format == "csv") {
        hscmae::save_features_csv(tr, trp);
        hscmae::save_features_csv(te, tep);
      } else {
        hscmae::save_features(tr, trp);
        hscmae::save_features(te, tep);
      }
      m.finish();
      std::printf("wrote %s (%ld) and %s (%ld)\n", trp.string().c_str(), static_cast<long>(tr.size()),
                  tep.string().c_str(), static_cast<long>(te.size()));
      return 0;
    }

    const hscmae::TrainConfig tc = train_config(s);

    if (*train) {
      const hscmae::FeatureSet data = hscmae::load_features(train_features);
      const hscmae::ModelConfig mc = model_config(s, data.audio.cols(), data.visual.cols());
      tc.validate(mc);
      std::optional<hscmae::FeatureSet> test;
      if (!train_test.empty()) test = load_labeled(train_test);
      const fs::path ckpt(checkpoint);
      ensure_parent(ckpt);
      Manifest m("train", app, manifest_path.empty() ? fs::path(checkpoint + ".json") : fs::path(manifest_path));
      m.set("seed", s.seed);
      m.output("checkpoint", ckpt);
      if (!log_csv.empty()) m.output("log_csv", log_csv);
      m.write();

      // eval epochs rewrite the checkpoint; with a labelled split the best
      // epoch by avg mAP is also kept at <checkpoint>.best
      const fs::path best_ckpt(checkpoint + ".best");
      double best_map = -1.0;
      hscmae::EpochHook hook = [&](hscmae::EpochLog& log, hscmae::TrainState& state) {
        const hscmae::Embeddings z = hscmae::embed(state.student, data.audio, data.visual);
        const hscmae::LinearCcaModel cca = hscmae::fit_linear_cca(z.audio, z.visual, tc.cca_post_dim, tc.cca.epsilon);
        hscmae::save_checkpoint(ckpt, state, cca);
        if (!test) return;
        const hscmae::RetrievalReport r = hscmae::evaluate(state.student, cca, *test);
        log.map_a2v = r.map_a2v;
        log.map_v2a = r.map_v2a;
        log.map_avg = r.map_avg;
        std::printf("epoch %d  avg mAP %.4f\n", log.epoch, r.map_avg);
        if (r.map_avg > best_map) {
          best_map = r.map_avg;
          hscmae::save_checkpoint(best_ckpt, state, cca);
        }
      };
      hscmae::TrainResult r = hscmae::train(hscmae::unlabeled(data), mc, tc, hook);
      hscmae::save_checkpoint(ckpt, r.state, r.cca);
      if (best_map >= 0.0) m.output("best_checkpoint", best_ckpt);
      if (!log_csv.empty()) {
        ensure_parent(log_csv);
        hscmae::write_epoch_log_csv(r.logs, log_csv);
      }
      if (test) print_report("test", hscmae::evaluate(r.state.student, r.cca, *test));
      m.finish();
      std::printf("checkpoint %s after %ld steps\n", ckpt.string().c_str(), r.state.step);
      return 0;
    }

    if (*eval) {
      if (!fs::exists(eval_ckpt)) fail(ErrorKind::data, "checkpoint '" + eval_ckpt + "' does not exist");
      hscmae::Checkpoint ck = hscmae::load_checkpoint(eval_ckpt);
      if (!ck.cca.fitted()) fail(ErrorKind::data, "checkpoint '" + eval_ckpt + "' carries no fitted CCA projection");
      const hscmae::FeatureSet test = load_labeled(eval_features);
      const hscmae::RetrievalReport r = hscmae::evaluate(ck.student, ck.cca, test);
      print_report("eval", r);
      if (!report_csv.empty()) {
        ensure_parent(report_csv);
        hscmae::write_report_csv(r, report_csv);
      }
      if (!ranklists_csv.empty()) {
        const hscmae::Embeddings z = hscmae::retrieval_embeddings(ck.student, ck.cca, test.audio, test.visual);
        const hscmae::Matrix sim = z.audio * z.visual.transpose();
        const auto& labels = *test.labels;
        ensure_parent(ranklists_csv);
        hscmae::write_ranklists_csv(hscmae::top_ranklists(sim, labels, labels, depth),
                                    hscmae::top_ranklists(sim.transpose(), labels, labels, depth), ranklists_csv);
      }
      return 0;
    }

    const hscmae::FeatureSet tr = hscmae::load_features(tr_path);
    const hscmae::FeatureSet te = load_labeled(te_path);
    const hscmae::ModelConfig mc = model_config(s, tr.audio.cols(), tr.visual.cols());
    tc.validate(mc);
    const std::string command = *baseline ? "baseline" : *sweep ? "sweep" : "ablate";
    Manifest m(command, app, manifest_path);
    m.set("seed", s.seed);
    if (!out_csv.empty()) {
      m.output("csv", out_csv);
      ensure_parent(out_csv);
    }
    m.write();

    if (*baseline) {
      const hscmae::Baseline which = hscmae::parse_baseline(baseline_name);
      const hscmae::RetrievalReport r = hscmae::run_baseline(which, tr, te, mc, tc);
      print_report(hscmae::baseline_name(which), r);
      if (!out_csv.empty()) hscmae::write_report_csv(r, out_csv);
    } else if (*sweep) {
      for (double ratio : ratios) {
        if (!(ratio >= 0.0 && ratio < 1.0)) fail(ErrorKind::usage, "mask ratios must lie in [0,1)");
      }
      const auto rows = hscmae::mask_ratio_sweep(tr, te, mc, tc, ratios);
      for (const auto& row : rows) {
        char label[32];
        std::snprintf(label, sizeof(label), "ratio %.2f", row.ratio);
        print_report(label, row.report);
      }
      if (!out_csv.empty()) hscmae::write_sweep_csv(rows, out_csv);
    } else {
      const auto rows = hscmae::run_ablation(tr, te, mc, tc, hscmae::ablation_grid());
      for (const auto& row : rows) {
        char label[32];
        std::snprintf(label, sizeof(label), "c%d r%d i%d d%d", int(row.flags.cca), int(row.flags.rec),
                      int(row.flags.infonce), int(row.flags.dis));
        print_report(label, row.report);
      }
      if (!out_csv.empty()) hscmae::write_ablation_csv(rows, out_csv);
    }
    m.finish();
    return 0;
  } catch (const hscmae::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
