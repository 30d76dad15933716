#include "hscmae/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

namespace hscmae {

namespace {

constexpr char kMagic[8] = {'A', 'V', 'F', 'E', 'A', 'T', '0', '1'};
constexpr std::size_t kHeaderBytes = 8 + 4 + 4 + 4 + 1;

static_assert(std::endian::native == std::endian::little, "feature container I/O assumes a little-endian host");

void put_u32(std::string& buf, std::uint32_t v) { buf.append(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(const std::string& buf, std::size_t offset) {
  std::uint32_t v = 0;
  std::memcpy(&v, buf.data() + offset, 4);
  return v;
}

std::uint32_t checked_u32(Index v, const char* what) {
  if (v < 0 || v > static_cast<Index>(UINT32_MAX)) fail(ErrorKind::data, std::string(what) + " does not fit in u32");
  return static_cast<std::uint32_t>(v);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::data, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void FeatureSet::validate() const {
  if (audio.rows() != visual.rows()) {
    fail(ErrorKind::data, "audio has " + std::to_string(audio.rows()) + " rows but visual has " +
                              std::to_string(visual.rows()));
  }
  if (labels && static_cast<Index>(labels->size()) != audio.rows()) {
    fail(ErrorKind::data, "label count " + std::to_string(labels->size()) + " does not match " +
                              std::to_string(audio.rows()) + " rows");
  }
  if (!audio.allFinite() || !visual.allFinite()) fail(ErrorKind::data, "feature matrix contains non-finite values");
}

void save_features(const FeatureSet& set, const std::filesystem::path& path) {
  set.validate();
  const std::uint32_t n = checked_u32(set.size(), "row count");
  std::string buf(kMagic, 8);
  put_u32(buf, n);
  put_u32(buf, checked_u32(set.audio.cols(), "audio dim"));
  put_u32(buf, checked_u32(set.visual.cols(), "visual dim"));
  buf.push_back(set.labels ? 1 : 0);
  for (const Matrix* m : {&set.audio, &set.visual}) {
    for (Index i = 0; i < m->size(); ++i) {
      const float f = static_cast<float>(m->data()[i]);
      buf.append(reinterpret_cast<const char*>(&f), 4);
    }
  }
  if (set.labels) {
    for (int label : *set.labels) {
      if (label < 0) fail(ErrorKind::data, "labels must be non-negative");
      put_u32(buf, static_cast<std::uint32_t>(label));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::data, "cannot write '" + path.string() + "'");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) fail(ErrorKind::data, "write failed for '" + path.string() + "'");
}

FeatureSet load_features(const std::filesystem::path& path) {
  if (path.extension() == ".csv") return load_features_csv(path);
  const std::string buf = read_file(path);
  if (buf.size() < kHeaderBytes) {
    fail(ErrorKind::data, "'" + path.string() + "': truncated header, expected " + std::to_string(kHeaderBytes) +
                              " bytes, got " + std::to_string(buf.size()));
  }
  if (std::memcmp(buf.data(), kMagic, 8) != 0) {
    fail(ErrorKind::data, "'" + path.string() + "': bad magic at offset 0, expected AVFEAT01");
  }
  const std::uint64_t n = get_u32(buf, 8);
  const std::uint64_t da = get_u32(buf, 12);
  const std::uint64_t dv = get_u32(buf, 16);
  const auto flag = static_cast<unsigned char>(buf[20]);
  if (flag > 1) fail(ErrorKind::data, "'" + path.string() + "': label flag at offset 20 must be 0 or 1");
  const bool has_labels = flag == 1;
  const std::uint64_t expected = kHeaderBytes + 4 * (n * da + n * dv) + (has_labels ? 4 * n : 0);
  if (buf.size() != expected) {
    fail(ErrorKind::data, "'" + path.string() + "': expected " + std::to_string(expected) + " bytes for n=" +
                              std::to_string(n) + ", d_a=" + std::to_string(da) + ", d_v=" + std::to_string(dv) +
                              ", got " + std::to_string(buf.size()));
  }

  FeatureSet set;
  set.audio.resize(static_cast<Index>(n), static_cast<Index>(da));
  set.visual.resize(static_cast<Index>(n), static_cast<Index>(dv));
  std::size_t offset = kHeaderBytes;
  for (Matrix* m : {&set.audio, &set.visual}) {
    for (Index i = 0; i < m->size(); ++i) {
      float f = 0.0f;
      std::memcpy(&f, buf.data() + offset, 4);
      if (!std::isfinite(f)) {
        fail(ErrorKind::data, "'" + path.string() + "': non-finite value at byte offset " + std::to_string(offset));
      }
      m->data()[i] = static_cast<double>(f);
      offset += 4;
    }
  }
  if (has_labels) {
    std::vector<int> labels(n);
    for (auto& label : labels) {
      const std::uint32_t v = get_u32(buf, offset);
      if (v > static_cast<std::uint32_t>(INT32_MAX)) {
        fail(ErrorKind::data, "'" + path.string() + "': label out of range at byte offset " + std::to_string(offset));
      }
      label = static_cast<int>(v);
      offset += 4;
    }
    set.labels = std::move(labels);
  }
  return set;
}

void save_features_csv(const FeatureSet& set, const std::filesystem::path& path) {
  set.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::data, "cannot write '" + path.string() + "'");
  std::vector<std::string> header;
  for (Index j = 0; j < set.audio.cols(); ++j) header.push_back("a" + std::to_string(j));
  for (Index j = 0; j < set.visual.cols(); ++j) header.push_back("v" + std::to_string(j));
  if (set.labels) header.push_back("label");
  for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
  out << "\n";
  out.precision(17);
  for (Index i = 0; i < set.size(); ++i) {
    for (Index j = 0; j < set.audio.cols(); ++j) out << (j ? "," : "") << set.audio(i, j);
    for (Index j = 0; j < set.visual.cols(); ++j) out << "," << set.visual(i, j);
    if (set.labels) out << "," << (*set.labels)[static_cast<std::size_t>(i)];
    out << "\n";
  }
}

FeatureSet load_features_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::data, "cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::data, "'" + path.string() + "': missing header row");
  Index da = 0;
  Index dv = 0;
  bool has_labels = false;
  {
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) {
      if (!col.empty() && col.back() == '\r') col.pop_back();
      if (col == "label") {
        has_labels = true;
      } else if (!col.empty() && col[0] == 'a' && dv == 0 && !has_labels) {
        ++da;
      } else if (!col.empty() && col[0] == 'v' && !has_labels) {
        ++dv;
      } else {
        fail(ErrorKind::data, "'" + path.string() + "': unexpected header column '" + col + "'");
      }
    }
  }
  std::vector<double> a_vals;
  std::vector<double> v_vals;
  std::vector<int> labels;
  Index rows = 0;
  const Index width = da + dv + (has_labels ? 1 : 0);
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::stringstream ss(line);
    std::string cell;
    Index col = 0;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double x = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str()) {
        fail(ErrorKind::data, "'" + path.string() + "': unparsable value on data row " + std::to_string(rows + 1));
      }
      if (!std::isfinite(x)) {
        fail(ErrorKind::data, "'" + path.string() + "': non-finite value on data row " + std::to_string(rows + 1) +
                                  ", column " + std::to_string(col));
      }
      if (col < da) {
        a_vals.push_back(x);
      } else if (col < da + dv) {
        v_vals.push_back(x);
      } else if (has_labels && col == da + dv) {
        labels.push_back(static_cast<int>(x));
      }
      ++col;
    }
    if (col != width) {
      fail(ErrorKind::data, "'" + path.string() + "': data row " + std::to_string(rows + 1) + " has " +
                                std::to_string(col) + " columns, expected " + std::to_string(width));
    }
    ++rows;
  }
  FeatureSet set;
  set.audio = Eigen::Map<Matrix>(a_vals.data(), rows, da);
  set.visual = Eigen::Map<Matrix>(v_vals.data(), rows, dv);
  if (has_labels) set.labels = std::move(labels);
  return set;
}

void SynthConfig::validate() const {
  if (classes < 2) fail(ErrorKind::usage, "synthetic data needs at least 2 classes");
  if (per_class < 5) fail(ErrorKind::usage, "synthetic data needs at least 5 samples per class");
  if (d_audio < 1 || d_visual < 1 || latent_dim < 1) fail(ErrorKind::usage, "synthetic dims must be positive");
  if (!(mean_scale > 0.0) || !(noise >= 0.0)) fail(ErrorKind::usage, "synthetic scales must be positive");
}

std::pair<FeatureSet, FeatureSet> generate_synthetic(const SynthConfig& config) {
  config.validate();
  Rng rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](Index r, Index c, double s) {
    Matrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = s * normal(rng);
    return m;
  };
  const double map_scale = 1.0 / std::sqrt(static_cast<double>(config.latent_dim));
  const Matrix map_a = gaussian(config.latent_dim, config.d_audio, map_scale);
  const Matrix map_v = gaussian(config.latent_dim, config.d_visual, map_scale);
  const Matrix centers = gaussian(config.classes, config.latent_dim, config.mean_scale);
  const Matrix mean_a = centers * map_a;
  const Matrix mean_v = centers * map_v;

  const int n = config.classes * config.per_class;
  Matrix audio(n, config.d_audio);
  Matrix visual(n, config.d_visual);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int c = 0; c < config.classes; ++c) {
    for (int s = 0; s < config.per_class; ++s) {
      const int i = c * config.per_class + s;
      audio.row(i) = mean_a.row(c) + gaussian(1, config.d_audio, config.noise);
      visual.row(i) = mean_v.row(c) + gaussian(1, config.d_visual, config.noise);
      labels[static_cast<std::size_t>(i)] = c;
    }
  }
  if (config.warp) visual = visual.array().cube().matrix();

  const int train_per_class = static_cast<int>(std::lround(0.8 * config.per_class));
  std::vector<Index> train_rows;
  std::vector<Index> test_rows;
  for (int c = 0; c < config.classes; ++c) {
    for (int s = 0; s < config.per_class; ++s) {
      (s < train_per_class ? train_rows : test_rows).push_back(c * config.per_class + s);
    }
  }
  std::shuffle(train_rows.begin(), train_rows.end(), rng);
  std::shuffle(test_rows.begin(), test_rows.end(), rng);

  auto take = [&](const std::vector<Index>& rows, Split split) {
    FeatureSet set;
    set.audio = gather_rows(audio, rows);
    set.visual = gather_rows(visual, rows);
    std::vector<int> l;
    for (Index r : rows) l.push_back(labels[static_cast<std::size_t>(r)]);
    set.labels = std::move(l);
    set.split = split;
    return set;
  };
  return {take(train_rows, Split::train), take(test_rows, Split::test)};
}

std::vector<std::vector<Index>> batches(Index n, Index batch_size, std::uint64_t seed, bool drop_last) {
  if (batch_size < 2) fail(ErrorKind::usage, "batch size must be >= 2, got " + std::to_string(batch_size));
  std::vector<Index> order(static_cast<std::size_t>(std::max<Index>(n, 0)));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<Index>> out;
  for (Index start = 0; start < n; start += batch_size) {
    const Index len = std::min(batch_size, n - start);
    if (len < batch_size && drop_last) break;
    out.emplace_back(order.begin() + start, order.begin() + start + len);
  }
  return out;
}

Matrix gather_rows(const Matrix& m, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= m.rows()) fail(ErrorKind::shape, "gather_rows: index out of range");
    out.row(static_cast<Index>(i)) = m.row(rows[i]);
  }
  return out;
}

}  // namespace hscmae
