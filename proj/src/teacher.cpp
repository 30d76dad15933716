#include "hscmae/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace hscmae {

Matrix AffinityTargets::dense() const {
  Matrix w = Matrix::Zero(anchors(), candidates);
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    for (std::size_t j = 0; j < neighbors[i].size(); ++j) {
      w(static_cast<Index>(i), neighbors[i][j]) += weights[i][j];
    }
  }
  return w;
}

AffinityTargets AffinityTargets::identity(Index n) {
  AffinityTargets t;
  t.candidates = n;
  t.neighbors.resize(static_cast<std::size_t>(n));
  t.weights.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    t.neighbors[static_cast<std::size_t>(i)] = {i};
    t.weights[static_cast<std::size_t>(i)] = {1.0};
  }
  return t;
}

AffinityTargets mine_direction(const Matrix& scores, Index k, double temperature) {
  if (k < 1) fail(ErrorKind::usage, "mining needs k >= 1, got " + std::to_string(k));
  if (!(temperature > 0.0)) fail(ErrorKind::usage, "mining temperature must be positive");
  const Index n = scores.rows();
  const Index m = scores.cols();
  if (n > m) fail(ErrorKind::shape, "mining: every anchor needs its paired candidate");
  AffinityTargets out;
  out.candidates = m;
  out.neighbors.resize(static_cast<std::size_t>(n));
  out.weights.resize(static_cast<std::size_t>(n));
  const Index take = std::min(k, m);
  std::vector<Index> order;
  for (Index i = 0; i < n; ++i) {
    order.resize(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), Index{0});
    std::erase(order, i);
    auto by_score = [&](Index a, Index b) {
      if (scores(i, a) != scores(i, b)) return scores(i, a) > scores(i, b);
      return a < b;
    };
    std::partial_sort(order.begin(), order.begin() + (take - 1), order.end(), by_score);

    auto& nb = out.neighbors[static_cast<std::size_t>(i)];
    nb.push_back(i);
    nb.insert(nb.end(), order.begin(), order.begin() + (take - 1));

    auto& w = out.weights[static_cast<std::size_t>(i)];
    double mx = -std::numeric_limits<double>::infinity();
    for (Index j : nb) mx = std::max(mx, scores(i, j) / temperature);
    double total = 0.0;
    for (Index j : nb) {
      w.push_back(std::exp(scores(i, j) / temperature - mx));
      total += w.back();
    }
    for (double& x : w) x /= total;
  }
  return out;
}

AffinityPair mine_affinities(const Matrix& teacher_audio, const Matrix& teacher_visual, Index k,
                             double temperature) {
  if (teacher_audio.rows() != teacher_visual.rows() || teacher_audio.cols() != teacher_visual.cols()) {
    fail(ErrorKind::shape, "mine_affinities: embeddings " + shape_str(teacher_audio) + " and " +
                               shape_str(teacher_visual) + " differ");
  }
  Matrix s = teacher_audio * teacher_visual.transpose();
  AffinityPair out;
  out.audio_to_visual = mine_direction(s, k, temperature);
  out.visual_to_audio = mine_direction(s.transpose(), k, temperature);
  return out;
}

void ema_update(ModelParams& teacher, const ModelParams& student, double rho) {
  if (teacher.params.size() != student.params.size()) {
    fail(ErrorKind::shape, "ema_update: teacher and student have different parameter sets");
  }
  auto blend = [rho](Matrix& t, const Matrix& s, const std::string& name) {
    if (t.rows() != s.rows() || t.cols() != s.cols()) {
      fail(ErrorKind::shape, "ema_update: shape mismatch for '" + name + "': " + shape_str(t) + " vs " + shape_str(s));
    }
    t = rho * t + (1.0 - rho) * s;
  };
  for (auto& [name, p] : teacher.params) {
    auto it = student.params.find(name);
    if (it == student.params.end()) fail(ErrorKind::shape, "ema_update: student lacks '" + name + "'");
    blend(p.value, it->second.value, name);
  }
  for (auto& [name, stats] : teacher.norm_stats) {
    auto it = student.norm_stats.find(name);
    if (it == student.norm_stats.end()) fail(ErrorKind::shape, "ema_update: student lacks stats '" + name + "'");
    blend(stats.mean, it->second.mean, name);
    blend(stats.var, it->second.var, name);
  }
}

double anneal_momentum(int epoch, int total_epochs, MomentumSchedule schedule) {
  if (total_epochs < 2) return schedule.end;
  const int e = std::clamp(epoch, 1, total_epochs);
  return schedule.start + (schedule.end - schedule.start) * static_cast<double>(e - 1) /
                              static_cast<double>(total_epochs - 1);
}

}  // namespace hscmae
