#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "hscmae/cca_linear.hpp"
#include "hscmae/data_io.hpp"
#include "hscmae/eval.hpp"
#include "support.hpp"

using namespace hscmae;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "hscmae_test_data_io";
  fs::create_directories(dir);
  return dir / name;
}

Matrix float_exact(Matrix m) {
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
  return m;
}

FeatureSet small_set(bool labels) {
  FeatureSet s;
  s.audio = float_exact(testing::randn(7, 3, 1));
  s.visual = float_exact(testing::randn(7, 5, 2));
  if (labels) s.labels = std::vector<int>{0, 1, 2, 0, 1, 2, 3};
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

std::string error_text(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("binary round trip is bit-identical") {
  for (bool labels : {true, false}) {
    const FeatureSet s = small_set(labels);
    const fs::path p = scratch(labels ? "rt_l.bin" : "rt.bin");
    save_features(s, p);
    const FeatureSet r = load_features(p);
    CHECK(std::memcmp(r.audio.data(), s.audio.data(), sizeof(double) * s.audio.size()) == 0);
    CHECK(std::memcmp(r.visual.data(), s.visual.data(), sizeof(double) * s.visual.size()) == 0);
    CHECK(r.labels == s.labels);
    CHECK(fs::file_size(p) == 21 + 4 * (7 * 3 + 7 * 5) + (labels ? 28 : 0));
    const fs::path p2 = scratch("rt_again.bin");
    save_features(r, p2);
    CHECK(slurp(p) == slurp(p2));
  }
}

TEST_CASE("binary header layout") {
  const fs::path p = scratch("layout.bin");
  save_features(small_set(true), p);
  const std::string b = slurp(p);
  CHECK(b.substr(0, 8) == "AVFEAT01");
  std::uint32_t n = 0, da = 0, dv = 0;
  std::memcpy(&n, b.data() + 8, 4);
  std::memcpy(&da, b.data() + 12, 4);
  std::memcpy(&dv, b.data() + 16, 4);
  CHECK(n == 7);
  CHECK(da == 3);
  CHECK(dv == 5);
  CHECK(b[20] == 1);
  float first = 0.0f;
  std::memcpy(&first, b.data() + 21, 4);
  CHECK(static_cast<double>(first) == small_set(true).audio(0, 0));
}

TEST_CASE("malformed binary files") {
  const fs::path p = scratch("bad.bin");
  save_features(small_set(true), p);
  const std::string good = slurp(p);

  SUBCASE("truncated payload names both byte counts") {
    spit(p, good.substr(0, good.size() - 3));
    const std::string msg = error_text([&] { load_features(p); });
    CHECK(msg.find(std::to_string(good.size())) != std::string::npos);
    CHECK(msg.find(std::to_string(good.size() - 3)) != std::string::npos);
  }
  SUBCASE("truncated header") {
    spit(p, good.substr(0, 10));
    CHECK(error_text([&] { load_features(p); }).find("header") != std::string::npos);
  }
  SUBCASE("bad magic") {
    std::string b = good;
    b[3] = 'X';
    spit(p, b);
    CHECK(error_text([&] { load_features(p); }).find("magic") != std::string::npos);
  }
  SUBCASE("NaN payload reports its offset") {
    std::string b = good;
    const float nan = std::numeric_limits<float>::quiet_NaN();
    const std::size_t off = 21 + 4 * 25;  // visual block, element 4
    std::memcpy(b.data() + off, &nan, 4);
    spit(p, b);
    CHECK(error_text([&] { load_features(p); }).find("offset " + std::to_string(off)) != std::string::npos);
  }
  SUBCASE("dimension mismatch against the payload size") {
    std::string b = good;
    const std::uint32_t da = 4;
    std::memcpy(b.data() + 12, &da, 4);
    spit(p, b);
    CHECK_THROWS_AS(load_features(p), Error);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_features(scratch("does_not_exist.bin")), Error);
  }
  try {
    load_features(scratch("does_not_exist.bin"));
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::data);
  }
}

TEST_CASE("CSV round trip and errors") {
  const FeatureSet s = small_set(true);
  const fs::path p = scratch("set.csv");
  save_features_csv(s, p);
  std::ifstream in(p);
  std::string header;
  std::getline(in, header);
  CHECK(header == "a0,a1,a2,v0,v1,v2,v3,v4,label");
  const FeatureSet r = load_features(p);
  CHECK(testing::max_abs_diff(r.audio, s.audio) == 0.0);
  CHECK(testing::max_abs_diff(r.visual, s.visual) == 0.0);
  CHECK(r.labels == s.labels);

  spit(p, "a0,v0\n1.0,2.0\n3.0,nan\n");
  CHECK(error_text([&] { load_features(p); }).find("row 2") != std::string::npos);
  spit(p, "a0,v0\n1.0,2.0\n3.0\n");
  CHECK_THROWS_AS(load_features(p), Error);
  spit(p, "a0,w0\n1.0,2.0\n");
  CHECK_THROWS_AS(load_features(p), Error);
}

TEST_CASE("full-size shaped file loads") {
  FeatureSet s;
  s.audio = Matrix::Constant(1564, 128, 0.25);
  s.visual = Matrix::Constant(1564, 1024, -0.5);
  const fs::path p = scratch("ave_like.bin");
  save_features(s, p);
  const FeatureSet r = load_features(p);
  CHECK(r.size() == 1564);
  CHECK(r.audio.cols() == 128);
  CHECK(r.visual.cols() == 1024);
  CHECK_FALSE(r.labels.has_value());
}

TEST_CASE("synthetic generator") {
  SynthConfig cfg;
  cfg.per_class = 20;
  cfg.seed = 9;
  SUBCASE("deterministic per seed") {
    const auto [a, b] = generate_synthetic(cfg);
    const auto [c, d] = generate_synthetic(cfg);
    CHECK(std::memcmp(a.audio.data(), c.audio.data(), sizeof(double) * a.audio.size()) == 0);
    CHECK(std::memcmp(b.visual.data(), d.visual.data(), sizeof(double) * b.visual.size()) == 0);
    CHECK(a.labels == c.labels);
    cfg.seed = 10;
    CHECK(testing::max_abs_diff(generate_synthetic(cfg).first.audio, a.audio) > 0.0);
  }
  SUBCASE("stratified 80/20 split") {
    const auto [train, test] = generate_synthetic(cfg);
    CHECK(train.size() == 8 * 16);
    CHECK(test.size() == 8 * 4);
    CHECK(train.split == Split::train);
    CHECK(test.split == Split::test);
    std::vector<int> per(8, 0);
    for (int l : *test.labels) ++per[static_cast<std::size_t>(l)];
    for (int c : per) CHECK(c == 4);
  }
  SUBCASE("zero noise collapses classes; retrieval is perfect") {
    cfg.noise = 0.0;
    const auto [train, test] = generate_synthetic(cfg);
    const auto& l = *train.labels;
    for (Index i = 1; i < train.size(); ++i) {
      for (Index j = 0; j < i; ++j) {
        if (l[static_cast<std::size_t>(i)] == l[static_cast<std::size_t>(j)]) {
          CHECK(train.audio.row(i) == train.audio.row(j));
        }
      }
    }
    // 8 class points span 7 centred dims in each view, so linear CCA aligns them exactly
    const auto m = fit_linear_cca(train.audio, train.visual, 7);
    const auto p = transform(m, test.audio, test.visual);
    const auto rep = cross_modal_map(normalize_rows(p.a), normalize_rows(p.v), *test.labels);
    CHECK(rep.map_avg == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("breaking the pairing kills cross-modal correlation") {
    cfg.per_class = 250;
    cfg.d_audio = 4;
    cfg.d_visual = 4;
    cfg.latent_dim = 4;
    cfg.warp = false;
    const auto train = generate_synthetic(cfg).first;
    const double paired = fit_linear_cca(train.audio, train.visual, 1).rho[0];
    std::vector<Index> perm(static_cast<std::size_t>(train.size()));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), Rng(3));
    const double shuffled = fit_linear_cca(train.audio, gather_rows(train.visual, perm), 1).rho[0];
    CHECK(paired > 0.5);
    // largest of 4x4 spurious correlations at n = 1600 stays around 2 * sqrt(4 / n) = 0.1
    CHECK(shuffled < 0.15);
  }
  SUBCASE("config validation") {
    cfg.classes = 1;
    CHECK_THROWS_AS(generate_synthetic(cfg), Error);
    cfg.classes = 3;
    cfg.mean_scale = 0.0;
    CHECK_THROWS_AS(generate_synthetic(cfg), Error);
  }
}

TEST_CASE("mini-batches") {
  SUBCASE("drop-last sizes") {
    const auto b = batches(10, 4, 1);
    REQUIRE(b.size() == 2);
    CHECK(b[0].size() == 4);
    CHECK(b[1].size() == 4);
    CHECK(batches(10, 4, 1, false).back().size() == 2);
  }
  SUBCASE("same seed, same order; emitted indices are the shuffle prefix") {
    CHECK(batches(50, 8, 3) == batches(50, 8, 3));
    CHECK(batches(50, 8, 3) != batches(50, 8, 4));
    const auto full = batches(50, 8, 3, false);
    const auto kept = batches(50, 8, 3);
    std::vector<Index> prefix;
    for (const auto& b : full) prefix.insert(prefix.end(), b.begin(), b.end());
    std::vector<Index> emitted;
    for (const auto& b : kept) emitted.insert(emitted.end(), b.begin(), b.end());
    CHECK(emitted.size() == 48);
    CHECK(std::equal(emitted.begin(), emitted.end(), prefix.begin()));
    CHECK(std::set<Index>(prefix.begin(), prefix.end()).size() == 50);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(batches(10, 1, 0), Error);
    CHECK_THROWS_AS(gather_rows(Matrix::Zero(3, 2), {0, 3}), Error);
  }
}
