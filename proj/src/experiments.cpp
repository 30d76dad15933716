#include "hscmae/experiments.hpp"

#include <cstdio>
#include <fstream>
#include <random>

namespace hscmae {

namespace {

const std::vector<int>& require_labels(const FeatureSet& set, const char* what) {
  if (!set.labels) fail(ErrorKind::data, std::string(what) + ": test split carries no labels");
  return *set.labels;
}

void require_dims(const FeatureSet& set, const ModelConfig& model, const char* what) {
  if (set.audio.cols() != model.d_audio() || set.visual.cols() != model.d_visual()) {
    fail(ErrorKind::data, std::string(what) + ": features are " + std::to_string(set.audio.cols()) + "/" +
                              std::to_string(set.visual.cols()) + "-D but the model expects " +
                              std::to_string(model.d_audio()) + "/" + std::to_string(model.d_visual()));
  }
}

Matrix random_unit_rows(Index n, Index p, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(n, p);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return normalize_rows(m);
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10f", x);
  return buf;
}

}  // namespace

RetrievalReport evaluate(ModelParams& student, const LinearCcaModel& cca, const FeatureSet& test) {
  const std::vector<int>& labels = require_labels(test, "evaluate");
  require_dims(test, student.config, "evaluate");
  const Embeddings z = retrieval_embeddings(student, cca, test.audio, test.visual);
  return cross_modal_map(z.audio, z.visual, labels);
}

Baseline parse_baseline(const std::string& name) {
  if (name == "random") return Baseline::random;
  if (name == "cca") return Baseline::cca;
  if (name == "infonce-single") return Baseline::infonce_single;
  fail(ErrorKind::usage, "unknown baseline '" + name + "' (expected one of: random, cca, infonce-single)");
}

const char* baseline_name(Baseline b) {
  switch (b) {
    case Baseline::random: return "random";
    case Baseline::cca: return "cca";
    case Baseline::infonce_single: return "infonce-single";
  }
  return "?";
}

RetrievalReport run_baseline(Baseline which, const FeatureSet& train, const FeatureSet& test,
                             const ModelConfig& model, const TrainConfig& config) {
  const std::vector<int>& labels = require_labels(test, "run_baseline");
  switch (which) {
    case Baseline::random: {
      const Index p = config.cca_post_dim;
      const Matrix za = random_unit_rows(test.size(), p, mix_seed(config.seed, 0xA0));
      const Matrix zv = random_unit_rows(test.size(), p, mix_seed(config.seed, 0xB0));
      return cross_modal_map(za, zv, labels);
    }
    case Baseline::cca: {
      const LinearCcaModel m = fit_linear_cca(train.audio, train.visual, config.cca_post_dim, config.cca.epsilon);
      const CcaProjection p = transform(m, test.audio, test.visual);
      return cross_modal_map(normalize_rows(p.a), normalize_rows(p.v), labels);
    }
    case Baseline::infonce_single: {
      TrainConfig c = config;
      c.active = LossFlags{false, true, false, false};
      c.contrastive = ContrastiveMode::single;
      TrainResult r = hscmae::train(unlabeled(train), model, c);
      return evaluate(r.state.student, r.cca, test);
    }
  }
  fail(ErrorKind::usage, "unhandled baseline");
}

std::vector<double> default_mask_ratios() {
  std::vector<double> r;
  for (int i = 0; i <= 7; ++i) r.push_back(i / 10.0);
  return r;
}

std::vector<SweepRow> mask_ratio_sweep(const FeatureSet& train, const FeatureSet& test, const ModelConfig& model,
                                       const TrainConfig& config, const std::vector<double>& ratios) {
  if (ratios.empty()) fail(ErrorKind::usage, "mask_ratio_sweep: empty ratio grid");
  std::vector<SweepRow> rows;
  for (double ratio : ratios) {
    TrainConfig c = config;
    c.mask_ratio = ratio;
    TrainResult r = hscmae::train(unlabeled(train), model, c);
    rows.push_back({ratio, evaluate(r.state.student, r.cca, test)});
  }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::data, "cannot write '" + path.string() + "'");
  out << "ratio,map_a2v,map_v2a,map_avg,gap\n";
  for (const SweepRow& r : rows) {
    out << fmt(r.ratio) << "," << fmt(r.report.map_a2v) << "," << fmt(r.report.map_v2a) << ","
        << fmt(r.report.map_avg) << "," << fmt(r.report.gap) << "\n";
  }
}

std::vector<LossFlags> ablation_grid() {
  // fields are {rec, infonce, cca, dis}; rows follow the table's (cca, rec, infonce, dis) columns
  return {
      {true, true, true, true},    // full
      {true, true, false, true},   // - cca
      {true, true, true, false},   // - dis
      {true, false, true, true},   // - infonce
      {true, false, true, false},  // cca + rec
      {false, false, true, true},  // cca + dis
      {false, false, true, false}, // cca only
  };
}

std::vector<AblationRow> run_ablation(const FeatureSet& train, const FeatureSet& test, const ModelConfig& model,
                                      const TrainConfig& config, const std::vector<LossFlags>& grid) {
  std::vector<AblationRow> rows;
  for (const LossFlags& flags : grid) {
    TrainConfig c = config;
    c.active = flags;
    TrainResult r = hscmae::train(unlabeled(train), model, c);
    rows.push_back({flags, evaluate(r.state.student, r.cca, test)});
  }
  return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::data, "cannot write '" + path.string() + "'");
  out << "cca,rec,infonce,dis,map_a2v,map_v2a,map_avg,gap\n";
  for (const AblationRow& r : rows) {
    out << int(r.flags.cca) << "," << int(r.flags.rec) << "," << int(r.flags.infonce) << "," << int(r.flags.dis)
        << "," << fmt(r.report.map_a2v) << "," << fmt(r.report.map_v2a) << "," << fmt(r.report.map_avg) << ","
        << fmt(r.report.gap) << "\n";
  }
}

}  // namespace hscmae
