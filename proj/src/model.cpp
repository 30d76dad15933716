#include "hscmae/model.hpp"

#include <cmath>

namespace hscmae {

ModelConfig ModelConfig::full_size() { return ModelConfig{}; }

ModelConfig ModelConfig::scaled(Index d_audio, Index d_visual, Index width, Index heads) {
  ModelConfig c;
  c.encoder.audio_widths = {d_audio, width, width, width};
  c.encoder.visual_widths = {d_visual, width, width, width};
  c.fusion.heads = heads;
  return c;
}

void ModelConfig::validate() const {
  const auto& a = encoder.audio_widths;
  const auto& v = encoder.visual_widths;
  if (a.size() < 2 || v.size() < 2) fail(ErrorKind::usage, "encoder widths need an input width and at least one layer");
  for (Index w : a) if (w < 1) fail(ErrorKind::usage, "audio encoder widths must be positive");
  for (Index w : v) if (w < 1) fail(ErrorKind::usage, "visual encoder widths must be positive");
  if (a.back() != v.back()) fail(ErrorKind::usage, "audio and visual encoders must end at the same width");
  if (fusion.heads < 1 || a.back() % fusion.heads != 0) {
    fail(ErrorKind::usage, "model dim " + std::to_string(a.back()) + " is not divisible by " +
                               std::to_string(fusion.heads) + " heads");
  }
  if (projector.out_dim < 1) fail(ErrorKind::usage, "projector out_dim must be >= 1");
  if (!(encoder.dropout >= 0.0 && encoder.dropout < 1.0)) fail(ErrorKind::usage, "dropout must lie in [0,1)");
}

const char* loss_name(LossTerm term) {
  switch (term) {
    case LossTerm::rec: return "rec";
    case LossTerm::infonce: return "infonce";
    case LossTerm::cca: return "cca";
    case LossTerm::dis: return "dis";
  }
  return "?";
}

std::string sigma_name(LossTerm term) { return std::string("sigma/") + loss_name(term); }

namespace {

Matrix xavier(Index fan_in, Index fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix w(fan_in, fan_out);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
  return w;
}

void add_linear(ModelParams& p, const std::string& prefix, Index in, Index out, Rng& rng) {
  p.params.emplace(prefix + "/weight", Parameter(xavier(in, out, rng)));
  p.params.emplace(prefix + "/bias", Parameter(Matrix::Zero(1, out)));
}

void add_norm(ModelParams& p, const std::string& prefix, Index width) {
  p.params.emplace(prefix + "_gamma", Parameter(Matrix::Ones(1, width)));
  p.params.emplace(prefix + "_beta", Parameter(Matrix::Zero(1, width)));
}

std::string modality_name(int m) { return m == 0 ? "audio" : "visual"; }

}  // namespace

ModelParams::ModelParams(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
  config.validate();
  Rng rng(seed);
  const Index dim = config.model_dim();
  for (int m = 0; m < 2; ++m) {
    const auto& widths = m == 0 ? config.encoder.audio_widths : config.encoder.visual_widths;
    const std::string mod = modality_name(m);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const std::string prefix = mod + "/layer" + std::to_string(l);
      add_linear(*this, prefix, widths[l], widths[l + 1], rng);
      if (l == 0) {
        add_norm(*this, prefix + "/bn", widths[l + 1]);
        norm_stats.emplace(prefix + "/bn",
                           BatchNormStats{Matrix::Zero(1, widths[l + 1]), Matrix::Ones(1, widths[l + 1])});
      } else {
        add_norm(*this, prefix + "/ln", widths[l + 1]);
      }
    }
  }
  for (int m = 0; m < 2; ++m) {
    const std::string prefix = "fusion/" + modality_name(m) + "_query";
    add_linear(*this, prefix + "/q", dim, dim, rng);
    add_linear(*this, prefix + "/k", dim, dim, rng);
    add_linear(*this, prefix + "/v", dim, dim, rng);
    add_linear(*this, prefix + "/out", dim, dim, rng);
    add_norm(*this, prefix + "/ln", dim);
  }
  for (int m = 0; m < 2; ++m) {
    add_linear(*this, "proj/" + modality_name(m), dim, config.projector.out_dim, rng);
  }
  for (int m = 0; m < 2; ++m) {
    const Index d_out = m == 0 ? config.d_audio() : config.d_visual();
    const std::string prefix = "decoder/" + modality_name(m);
    add_linear(*this, prefix + "/layer0", dim, dim, rng);
    add_linear(*this, prefix + "/layer1", dim, dim, rng);
    add_linear(*this, prefix + "/layer2", dim, d_out, rng);
  }
  for (LossTerm t : kLossTerms) params.emplace(sigma_name(t), Parameter(Matrix::Zero(1, 1)));
}

Parameter& ModelParams::at(const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) fail(ErrorKind::usage, "unknown parameter '" + name + "'");
  return it->second;
}

const Parameter& ModelParams::at(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) fail(ErrorKind::usage, "unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ModelParams::scalar_count() const {
  std::size_t total = 0;
  for (const auto& [name, p] : params) total += static_cast<std::size_t>(p.value.size());
  return total;
}

void ModelParams::zero_grad() {
  for (auto& [name, p] : params) p.zero_grad();
}

// ---------------------------------------------------------------------------
// Forward blocks
// ---------------------------------------------------------------------------

namespace {

Var linear(Tape& tape, ModelParams& p, const std::string& prefix, Var x) {
  Var w = tape.param(p.at(prefix + "/weight"));
  Var b = tape.param(p.at(prefix + "/bias"));
  return add_row(matmul(x, w), b);
}

Var encode_one(Tape& tape, ModelParams& p, int m, Var x, Mode mode, Rng& rng) {
  const auto& widths = m == 0 ? p.config.encoder.audio_widths : p.config.encoder.visual_widths;
  const std::string mod = modality_name(m);
  if (x.cols() != widths.front()) {
    fail(ErrorKind::shape, "encode: " + mod + " input has " + std::to_string(x.cols()) + " columns, expected " +
                               std::to_string(widths.front()));
  }
  if (mode == Mode::train && x.rows() < 2) {
    fail(ErrorKind::shape, "encode: batch too small for train mode (" + std::to_string(x.rows()) + " rows)");
  }
  Var h = x;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::string prefix = mod + "/layer" + std::to_string(l);
    h = linear(tape, p, prefix, h);
    if (l == 0) {
      h = batch_norm(h, tape.param(p.at(prefix + "/bn_gamma")), tape.param(p.at(prefix + "/bn_beta")),
                     p.norm_stats.at(prefix + "/bn"), mode);
    } else {
      h = layer_norm(h, tape.param(p.at(prefix + "/ln_gamma")), tape.param(p.at(prefix + "/ln_beta")));
    }
    h = tanh(h);
    h = dropout(h, p.config.encoder.dropout, mode, rng);
  }
  return h;
}

Var cross_attend(Tape& tape, ModelParams& p, const std::string& prefix, Var self, Var other) {
  Var q = linear(tape, p, prefix + "/q", self);
  Var k = linear(tape, p, prefix + "/k", other);
  Var v = linear(tape, p, prefix + "/v", other);
  Var ctx = single_token_attention(q, k, v, p.config.fusion.heads);
  Var out = linear(tape, p, prefix + "/out", ctx);
  return layer_norm(add(self, out), tape.param(p.at(prefix + "/ln_gamma")), tape.param(p.at(prefix + "/ln_beta")));
}

}  // namespace

ModalityPair encode(Tape& tape, ModelParams& params, ModalityPair x, Mode mode, Rng& rng) {
  Var a = encode_one(tape, params, 0, x.audio, mode, rng);
  Var v = encode_one(tape, params, 1, x.visual, mode, rng);
  return {a, v};
}

Var single_token_attention(Var q, Var k, Var v, Index heads) {
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  if (qv.rows() != kv.rows() || qv.cols() != kv.cols() || v.rows() != qv.rows() || v.cols() != qv.cols()) {
    fail(ErrorKind::shape, "attention: q/k/v shapes " + shape_str(qv) + ", " + shape_str(kv) + ", " +
                               shape_str(v.value()) + " do not conform");
  }
  if (heads < 1 || qv.cols() % heads != 0) fail(ErrorKind::shape, "attention: width not divisible by heads");
  const Index n = qv.rows();
  const Index hd = qv.cols() / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  Tape& tape = q.tape();

  // scores[i, h] = <q_ih, k_ih> / sqrt(hd) against the single key token
  Matrix scores(n, heads);
  for (Index i = 0; i < n; ++i) {
    for (Index h = 0; h < heads; ++h) {
      scores(i, h) = qv.row(i).segment(h * hd, hd).dot(kv.row(i).segment(h * hd, hd)) * inv_sqrt;
    }
  }
  Var s = tape.record(OpKind::custom, std::move(scores), {q, k}, [q, k, heads, hd, inv_sqrt](Tape& t, const Matrix& g) {
    const Matrix& qv2 = q.value();
    const Matrix& kv2 = k.value();
    Matrix dq(qv2.rows(), qv2.cols());
    Matrix dk(kv2.rows(), kv2.cols());
    for (Index i = 0; i < qv2.rows(); ++i) {
      for (Index h = 0; h < heads; ++h) {
        dq.row(i).segment(h * hd, hd) = g(i, h) * inv_sqrt * kv2.row(i).segment(h * hd, hd);
        dk.row(i).segment(h * hd, hd) = g(i, h) * inv_sqrt * qv2.row(i).segment(h * hd, hd);
      }
    }
    t.accumulate(q, dq);
    t.accumulate(k, dk);
  });

  // softmax over the key axis, which has length one per (row, head)
  Matrix weights(n, heads);
  for (Index i = 0; i < weights.size(); ++i) {
    const double x = s.value().data()[i];
    weights.data()[i] = std::exp(x - x) / std::exp(x - x);
  }
  Matrix wv = weights;
  Var w = tape.record(OpKind::custom, std::move(weights), {s}, [s, wv](Tape& t, const Matrix& g) {
    // d softmax: w * (g - sum_keys(w * g)); the key sum has a single term
    Matrix wg = wv.cwiseProduct(g);
    t.accumulate(s, wv.cwiseProduct(g - wg));
  });

  Matrix ctx(n, qv.cols());
  for (Index i = 0; i < n; ++i) {
    for (Index h = 0; h < heads; ++h) {
      ctx.row(i).segment(h * hd, hd) = w.value()(i, h) * v.value().row(i).segment(h * hd, hd);
    }
  }
  return tape.record(OpKind::custom, std::move(ctx), {w, v}, [w, v, heads, hd](Tape& t, const Matrix& g) {
    const Matrix& wv2 = w.value();
    const Matrix& vv = v.value();
    Matrix dw(wv2.rows(), heads);
    Matrix dv(vv.rows(), vv.cols());
    for (Index i = 0; i < vv.rows(); ++i) {
      for (Index h = 0; h < heads; ++h) {
        dw(i, h) = g.row(i).segment(h * hd, hd).dot(vv.row(i).segment(h * hd, hd));
        dv.row(i).segment(h * hd, hd) = wv2(i, h) * g.row(i).segment(h * hd, hd);
      }
    }
    if (t.requires_grad(w)) t.accumulate(w, dw);
    if (t.requires_grad(v)) t.accumulate(v, dv);
  });
}

ModalityPair fuse(Tape& tape, ModelParams& params, ModalityPair h) {
  const Index dim = params.config.model_dim();
  if (h.audio.cols() != dim || h.visual.cols() != dim || h.audio.rows() != h.visual.rows()) {
    fail(ErrorKind::shape, "fuse: expected two n x " + std::to_string(dim) + " inputs, got " +
                               shape_str(h.audio.value()) + " and " + shape_str(h.visual.value()));
  }
  Var ua = cross_attend(tape, params, "fusion/audio_query", h.audio, h.visual);
  Var uv = cross_attend(tape, params, "fusion/visual_query", h.visual, h.audio);
  return {ua, uv};
}

ModalityPair project(Tape& tape, ModelParams& params, ModalityPair u) {
  Var za = l2_normalize_rows(linear(tape, params, "proj/audio", u.audio));
  Var zv = l2_normalize_rows(linear(tape, params, "proj/visual", u.visual));
  return {za, zv};
}

ModalityPair decode(Tape& tape, ModelParams& params, ModalityPair u) {
  ModalityPair out;
  for (int m = 0; m < 2; ++m) {
    const std::string prefix = "decoder/" + modality_name(m);
    Var h = m == 0 ? u.audio : u.visual;
    h = tanh(linear(tape, params, prefix + "/layer0", h));
    h = tanh(linear(tape, params, prefix + "/layer1", h));
    h = linear(tape, params, prefix + "/layer2", h);
    (m == 0 ? out.audio : out.visual) = h;
  }
  return out;
}

Embeddings embed(ModelParams& params, const Matrix& audio, const Matrix& visual, Index chunk) {
  if (audio.rows() != visual.rows()) fail(ErrorKind::shape, "embed: modalities have different row counts");
  const Index n = audio.rows();
  const Index d = params.config.projector.out_dim;
  Embeddings out{Matrix(n, d), Matrix(n, d)};
  Rng unused(0);
  for (Index start = 0; start < n; start += chunk) {
    const Index rows = std::min(chunk, n - start);
    Tape tape;
    ModalityPair x{tape.constant(audio.middleRows(start, rows)), tape.constant(visual.middleRows(start, rows))};
    ModalityPair z = project(tape, params, fuse(tape, params, encode(tape, params, x, Mode::eval, unused)));
    out.audio.middleRows(start, rows) = z.audio.value();
    out.visual.middleRows(start, rows) = z.visual.value();
  }
  return out;
}

}  // namespace hscmae
