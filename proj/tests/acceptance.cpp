// Acceptance suite. Usage: hscmae_acceptance [criterion ...]
// With no arguments every criterion runs. One PASS/FAIL line per criterion;
// the exit status is nonzero when any criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>

#include "hscmae/experiments.hpp"
#include "support.hpp"

using namespace hscmae;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Synthetic defaults with a given seed.
std::pair<FeatureSet, FeatureSet> synthetic(std::uint64_t seed) {
  SynthConfig s;
  s.seed = seed;
  return generate_synthetic(s);
}

// Mirrors configs/desk.cfg.
ModelConfig desk_model(const FeatureSet& data) {
  ModelConfig m = ModelConfig::scaled(data.audio.cols(), data.visual.cols(), 64, 4);
  m.projector.out_dim = 32;
  return m;
}

TrainConfig desk_train(std::uint64_t seed) {
  TrainConfig c;
  c.epochs = 20;
  c.batch_size = 200;
  c.optim.lr0 = 3e-3;
  c.seed = seed;
  return c;
}

constexpr std::uint64_t kSeeds[] = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};

// ---------------------------------------------------------------------------

Outcome gradient_checks() {
  const auto t0 = Clock::now();
  ModelConfig model;
  model.encoder.audio_widths = {8, 16, 16, 16};
  model.encoder.visual_widths = {8, 16, 16, 16};
  model.encoder.dropout = 0.2;
  model.fusion.heads = 4;
  model.projector.out_dim = 4;

  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.k = 5;
  cfg.cca.r = 4;
  cfg.warmup_epochs = 5;

  struct Case {
    const char* name;
    LossFlags flags;
    int epoch;
  };
  const Case cases[] = {
      {"rec", {true, false, false, false}, 1},   {"infonce", {false, true, false, false}, 1},
      {"cca", {false, false, true, false}, 1},   {"dis", {false, false, false, true}, 1},
      {"total/warmup", {true, true, true, true}, 3}, {"total/weighted", {true, true, true, true}, 9},
  };

  double worst = 0.0;
  double worst_bias = 0.0;
  std::string worst_case;
  std::size_t coords = 0;
  for (int seed = 0; seed < 20; ++seed) {
    const Matrix xa = testing::randn(16, 8, 100 + seed);
    const Matrix xv = testing::randn(16, 8, 200 + seed);
    TrainState state = init_state(model, static_cast<std::uint64_t>(seed));
    for (auto& [name, p] : state.student.params) {
      if (name.find("/bias") != std::string::npos) p.value = testing::randn(1, p.value.cols(), 300 + seed, 0.1);
      if (name.rfind("sigma/", 0) == 0) p.value(0, 0) = 0.3 * std::sin(seed + static_cast<double>(name.size()));
    }
    // a teacher that differs from the student, as after some EMA steps
    for (auto& [name, p] : state.teacher.params) p.value += testing::randn(p.value.rows(), p.value.cols(), 400 + seed, 0.05);

    for (const Case& c : cases) {
      cfg.active = c.flags;
      auto build = [&](Tape& t) {
        LossBundle bundle;
        return step_objective(t, state, xa, xv, cfg, c.epoch, 77 + static_cast<std::uint64_t>(seed), bundle);
      };
      std::vector<Parameter*> checked;
      std::vector<Parameter*> bn_biases;
      for (auto& [name, p] : state.student.params) {
        // biases feeding batch norm have an exactly zero gradient; checked absolutely below
        const bool pre_norm = name == "audio/layer0/bias" || name == "visual/layer0/bias";
        (pre_norm ? bn_biases : checked).push_back(&p);
      }
      const auto r = grad_check(build, checked, 1e-5, 1e-4, 6, static_cast<std::uint64_t>(seed));
      coords += r.coordinates;
      if (r.max_rel_error > worst) {
        worst = r.max_rel_error;
        worst_case = std::string(c.name) + " seed " + std::to_string(seed);
      }
      for (Parameter* b : bn_biases) {
        b->zero_grad();
        {
          Tape t;
          t.backward(build(t));
        }
        worst_bias = std::max(worst_bias, b->grad.cwiseAbs().maxCoeff());
        for (Index i = 0; i < b->value.size(); ++i) {
          const double saved = b->value.data()[i];
          b->value.data()[i] = saved + 1e-5;
          Tape up;
          const double f_up = build(up).item();
          b->value.data()[i] = saved - 1e-5;
          Tape down;
          const double f_down = build(down).item();
          b->value.data()[i] = saved;
          worst_bias = std::max(worst_bias, std::abs(f_up - f_down) / 2e-5);
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst < 1e-4 && worst_bias < 1e-8 && secs < 60.0;
  o.detail = fmt("max rel err %.3g over %.0f coords; pre-norm bias |grad| <= %.2g; %.1f s", worst,
                 static_cast<double>(coords), worst_bias, secs) +
             " (worst: " + worst_case + ")";
  return o;
}

Outcome dcca_oracle() {
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const Matrix a = testing::randn(60, 5, 1000 + i);
    const double mix = 0.2 * (i % 6);
    const Matrix v = mix * a * testing::randn(5, 5, 2000 + i) + testing::randn(60, 5, 3000 + i);
    Tape t;
    const double loss = dcca_loss(t.constant(a), t.constant(v), {5, 1e-4}).item();
    const auto m = fit_linear_cca(a, v, 5, 1e-4);
    worst = std::max(worst, std::abs(-loss - std::accumulate(m.rho.begin(), m.rho.end(), 0.0)));
  }
  return {worst <= 1e-8, fmt("max |-L_cca - sum rho| = %.3g over 50 instances", worst)};
}

Outcome map_oracle() {
  // unit vectors drawn from a small palette so exact score ties are common
  std::mt19937_64 rng(42);
  double worst = 0.0;
  std::size_t queries = 0;
  for (int n = 2; n <= 50; ++n) {
    for (int rep = 0; rep < 4; ++rep) {
      const int classes = 1 + static_cast<int>(rng() % 5);
      const Matrix palette = testing::unit_rows(testing::randn(4, 3, rng()));
      Matrix za(n, 3), zv(n, 3);
      std::vector<int> labels(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        labels[static_cast<std::size_t>(i)] = static_cast<int>(rng() % static_cast<std::uint64_t>(classes));
        za.row(i) = palette.row(static_cast<Index>(rng() % 4));
        zv.row(i) = palette.row(static_cast<Index>(rng() % 4));
      }
      const RetrievalReport r = cross_modal_map(za, zv, labels);
      const Matrix sim = za * zv.transpose();
      const Matrix simt = zv * za.transpose();
      for (int q = 0; q < n; ++q) {
        std::vector<double> s(sim.row(q).data(), sim.row(q).data() + n);
        std::vector<double> st(simt.row(q).data(), simt.row(q).data() + n);
        const int l = labels[static_cast<std::size_t>(q)];
        worst = std::max(worst, std::abs(r.ap_a2v[static_cast<std::size_t>(q)] - testing::brute_ap(s, labels, l)));
        worst = std::max(worst, std::abs(r.ap_v2a[static_cast<std::size_t>(q)] - testing::brute_ap(st, labels, l)));
        queries += 2;
      }
      worst = std::max(worst, std::abs(r.map_a2v - testing::brute_map(sim, labels, labels)));
      worst = std::max(worst, std::abs(r.map_v2a - testing::brute_map(simt, labels, labels)));
    }
  }
  return {worst <= 1e-12, fmt("max |AP - brute force| = %.3g over %.0f queries", worst, static_cast<double>(queries))};
}

Outcome reduction() {
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Index n = 2 + i % 30;
    const Matrix za = testing::unit_rows(testing::randn(n, 8, 5000 + i));
    const Matrix zv = testing::unit_rows(testing::randn(n, 8, 6000 + i));
    const double tau = 0.02 + 0.01 * (i % 10);
    const AffinityPair id{AffinityTargets::identity(n), AffinityTargets::identity(n)};
    Tape t;
    const double soft = soft_infonce(t.constant(za), t.constant(zv), id, tau).item();
    const double single = infonce_single(t.constant(za), t.constant(zv), tau).item();
    worst = std::max(worst, std::abs(soft - single));
  }
  return {worst <= 1e-12, fmt("max |soft - single| = %.3g over 100 batches", worst)};
}

Outcome ordering() {
  const auto t0 = Clock::now();
  double full = 0.0, cca = 0.0, random = 0.0;
  std::string per_seed;
  for (int i = 0; i < 5; ++i) {
    const std::uint64_t seed = kSeeds[i];
    const auto [train, test] = synthetic(seed);
    const ModelConfig m = desk_model(train);
    const TrainConfig c = desk_train(seed);
    TrainResult r = hscmae::train(unlabeled(train), m, c);
    const double f = evaluate(r.state.student, r.cca, test).map_avg;
    const double l = run_baseline(Baseline::cca, train, test, m, c).map_avg;
    const double g = run_baseline(Baseline::random, train, test, m, c).map_avg;
    full += f / 5;
    cca += l / 5;
    random += g / 5;
    per_seed += fmt(" [%.0f: %.3f/%.3f/%.3f]", static_cast<double>(seed), f, l, g);
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = full >= cca + 0.05 && cca >= random + 0.10 && std::abs(random - 0.125) <= 0.02 && secs <= 900.0;
  o.detail = fmt("full %.4f, linear CCA %.4f, random %.4f; %.0f s;", full, cca, random, secs) + per_seed;
  return o;
}

Outcome ablation() {
  // single-component removals present in the ablation table
  const std::pair<const char*, LossFlags> variants[] = {
      {"-cca", {true, true, false, true}},
      {"-infonce", {true, false, true, true}},
      {"-dis", {true, true, true, false}},
  };
  std::map<std::string, int> wins;
  std::map<std::string, double> mean;
  double full_mean = 0.0;
  for (int i = 0; i < 5; ++i) {
    const std::uint64_t seed = kSeeds[i];
    const auto [train, test] = synthetic(seed);
    const ModelConfig m = desk_model(train);
    std::vector<LossFlags> grid{LossFlags{}};
    for (const auto& v : variants) grid.push_back(v.second);
    const auto rows = run_ablation(train, test, m, desk_train(seed), grid);
    const double full = rows[0].report.map_avg;
    full_mean += full / 5;
    for (std::size_t j = 0; j < 3; ++j) {
      const double v = rows[j + 1].report.map_avg;
      mean[variants[j].first] += v / 5;
      if (full > v) ++wins[variants[j].first];
    }
  }
  bool pass = true;
  std::string detail = fmt("full %.4f;", full_mean);
  for (const auto& v : variants) {
    pass = pass && wins[v.first] >= 4;
    detail += std::string(" ") + v.first + fmt(" %.4f (full wins %.0f/5)", mean[v.first], wins[v.first]);
  }
  return {pass, detail};
}

Outcome sweep_shape() {
  const auto ratios = default_mask_ratios();
  int interior = 0;
  std::string peaks;
  for (std::uint64_t seed : kSeeds) {
    const auto [train, test] = synthetic(seed);
    const auto rows = mask_ratio_sweep(train, test, desk_model(train), desk_train(seed), ratios);
    std::size_t best = 0;
    for (std::size_t j = 1; j < rows.size(); ++j) {
      if (rows[j].report.map_avg > rows[best].report.map_avg) best = j;
    }
    if (best != 0 && best + 1 != rows.size()) ++interior;
    peaks += fmt(" %.1f", rows[best].ratio);
  }
  return {interior >= 7, fmt("interior peak in %.0f/10 seeds; peaks at", interior) + peaks};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(HSCMAE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch() {
  const fs::path dir = fs::temp_directory_path() / "hscmae_acceptance";
  fs::create_directories(dir);
  return dir;
}

Outcome determinism() {
  const fs::path dir = scratch() / "determinism";
  fs::remove_all(dir);
  if (run_cli("synth --out-dir " + dir.string() + " --seed 11 --per-class 50") != 0) return {false, "synth failed"};
  const std::string base = "train --features " + (dir / "train.feat").string() + " --test-features " +
                           (dir / "test.feat").string() + " --eval-every 1 --seed 11 --config " +
                           (fs::path(HSCMAE_SOURCE_DIR) / "configs" / "desk.cfg").string() + " --epochs 3 --batch-size 100";
  for (const char* run : {"a", "b"}) {
    const std::string out = (dir / run).string();
    if (run_cli(base + " --checkpoint " + out + ".ckpt --log-csv " + out + ".csv") != 0) {
      return {false, "train failed"};
    }
  }
  const std::string ca = slurp(dir / "a.ckpt"), cb = slurp(dir / "b.ckpt");
  const std::string la = slurp(dir / "a.csv"), lb = slurp(dir / "b.csv");
  const bool pass = !ca.empty() && ca == cb && !la.empty() && la == lb;
  return {pass, "checkpoints (" + std::to_string(ca.size()) + " B) " + (ca == cb ? "identical" : "differ") +
                    ", epoch logs (" + std::to_string(la.size()) + " B) " + (la == lb ? "identical" : "differ")};
}

Outcome teacher_trace() {
  const auto [train, test] = synthetic(3);
  const ModelConfig m = desk_model(train);
  TrainConfig c = desk_train(3);
  TrainState state = init_state(m, c.seed);
  const auto order = batches(train.size(), c.batch_size, 99);
  std::size_t steps = 0;
  bool grads_zero = true;
  bool recursion = true;
  for (const auto& batch : order) {
    const double rho = 0.95 + 0.004 * static_cast<double>(steps);
    const ModelParams previous = state.teacher;
    train_step(state, unlabeled(train), batch, c, 1, c.optim.lr0, rho);
    for (const auto& [name, p] : state.teacher.params) {
      grads_zero = grads_zero && p.grad.isZero(0.0);
      const Matrix expected = rho * previous.at(name).value + (1.0 - rho) * state.student.at(name).value;
      recursion = recursion && (p.value.array() == expected.array()).all();
    }
    ++steps;
  }
  return {grads_zero && recursion,
          std::to_string(steps) + " steps; teacher grads " + (grads_zero ? "all zero" : "NONZERO") + "; recursion " +
              (recursion ? "exact" : "VIOLATED")};
}

Outcome ave_shaped() {
  const auto t0 = Clock::now();
  fs::path train_path, test_path;
  std::string source;
  if (const char* user = std::getenv("HSCMAE_AVE_TRAIN"); user != nullptr && std::getenv("HSCMAE_AVE_TEST") != nullptr) {
    train_path = user;
    test_path = std::getenv("HSCMAE_AVE_TEST");
    source = "user files";
  } else {
    // stand-in files of the same shape: 15 classes, 128-D audio, 1024-D visual
    SynthConfig s;
    s.classes = 15;
    s.per_class = 131;
    s.d_audio = 128;
    s.d_visual = 1024;
    s.seed = 21;
    auto [tr, te] = generate_synthetic(s);
    tr.audio.conservativeResize(1564, Eigen::NoChange);
    tr.visual.conservativeResize(1564, Eigen::NoChange);
    tr.labels->resize(1564);
    te.audio.conservativeResize(391, Eigen::NoChange);
    te.visual.conservativeResize(391, Eigen::NoChange);
    te.labels->resize(391);
    train_path = scratch() / "ave_train.feat";
    test_path = scratch() / "ave_test.feat";
    save_features(tr, train_path);
    save_features(te, test_path);
    source = "generated stand-ins";
  }
  try {
    const FeatureSet train = load_features(train_path);
    const FeatureSet test = load_features(test_path);
    if (train.audio.cols() != 128 || train.visual.cols() != 1024) return {false, "unexpected feature widths"};
    TrainConfig c;
    c.epochs = 1;
    TrainResult r = hscmae::train(unlabeled(train), ModelConfig::full_size(), c);
    const RetrievalReport rep = evaluate(r.state.student, r.cca, test);
    return {std::isfinite(rep.map_avg),
            source + fmt(": train %.0f x (%.0f, %.0f), test %.0f", static_cast<double>(train.size()),
                         static_cast<double>(train.audio.cols()), static_cast<double>(train.visual.cols()),
                         static_cast<double>(test.size())) +
                fmt("; one full-size epoch, avg mAP %.4f; %.0f s", rep.map_avg, seconds_since(t0))};
  } catch (const std::exception& e) {
    return {false, e.what()};
  }
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria{
      {1, {"gradient correctness", gradient_checks}},
      {2, {"DCCA equals closed-form CCA", dcca_oracle}},
      {3, {"mAP equals brute force", map_oracle}},
      {4, {"soft InfoNCE reduces to paired InfoNCE", reduction}},
      {5, {"synthetic ordering full > CCA > random", ordering}},
      {6, {"ablation direction", ablation}},
      {7, {"mask-ratio peak inside the grid", sweep_shape}},
      {8, {"train determinism", determinism}},
      {9, {"EMA teacher invariants", teacher_trace}},
      {10, {"full-size shaped ingestion", ave_shaped}},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  if (selected.empty()) {
    for (const auto& [id, _] : criteria) selected.insert(id);
  }
  int failed = 0;
  for (int id : selected) {
    auto it = criteria.find(id);
    if (it == criteria.end()) {
      std::fprintf(stderr, "unknown criterion %d\n", id);
      return 2;
    }
    Outcome o;
    try {
      o = it->second.second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %2d %s  %s: %s\n", id, o.pass ? "PASS" : "FAIL", it->second.first, o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
