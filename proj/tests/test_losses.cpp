#include <cmath>
#include <numeric>

#include "doctest.h"
#include "hscmae/losses.hpp"
#include "support.hpp"

using namespace hscmae;
using testing::randn;
using testing::unit_rows;

namespace {

double dcca_value(const Matrix& a, const Matrix& v, Index r, double eps) {
  Tape t;
  return dcca_loss(t.constant(a), t.constant(v), {r, eps}).item();
}

Matrix random_orthogonal(Index d, std::uint64_t seed) {
  Eigen::HouseholderQR<Matrix> qr(randn(d, d, seed));
  return qr.householderQ() * Matrix::Identity(d, d);
}

}  // namespace

TEST_CASE("dcca on identical views approaches -d") {
  const Matrix z = randn(40, 4, 1);
  CHECK(dcca_value(z, z, 4, 1e-12) == doctest::Approx(-4.0).epsilon(1e-8));
}

TEST_CASE("dcca vanishes under a huge ridge") {
  CHECK(std::abs(dcca_value(randn(30, 3, 2), randn(30, 3, 3), 3, 1e6)) < 1e-5);
}

TEST_CASE("dcca matches a generalized-eigen CCA oracle") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Matrix a = randn(50, 3, 10 + seed);
    const Matrix v = a * randn(3, 3, 20 + seed) + randn(50, 3, 30 + seed);
    const auto rho = testing::cca_generalized_eigen(a, v, 1e-4);
    const double expected = std::accumulate(rho.begin(), rho.end(), 0.0);
    CHECK(-dcca_value(a, v, 3, 1e-4) == doctest::Approx(expected).epsilon(1e-10));
    // top-r truncation
    CHECK(-dcca_value(a, v, 2, 1e-4) == doctest::Approx(rho[0] + rho[1]).epsilon(1e-10));
  }
}

TEST_CASE("dcca stays in [-r, 0] and ignores rotations and offsets") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix a = randn(25, 4, seed), v = randn(25, 4, seed + 50) + 0.5 * a;
    const double l = dcca_value(a, v, 4, 1e-4);
    CHECK(l <= 0.0);
    CHECK(l >= -4.0);
    const Matrix ra = (a * random_orthogonal(4, seed + 1)).rowwise() + randn(1, 4, seed + 2).row(0);
    const Matrix rv = (v * random_orthogonal(4, seed + 3)).rowwise() + randn(1, 4, seed + 4).row(0);
    CHECK(std::abs(dcca_value(ra, rv, 4, 1e-4) - l) < 1e-8);
  }
}

TEST_CASE("dcca closed-form gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Parameter a(randn(20, 4, 100 + seed)), v(randn(20, 4, 200 + seed));
    v.value += 0.7 * a.value;
    Parameter* ps[] = {&a, &v};
    for (Index r : {Index{4}, Index{2}}) {
      const auto rep = grad_check([&](Tape& t) { return dcca_loss(t.param(a), t.param(v), {r, 1e-4}); }, ps);
      CHECK(rep.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("dcca errors") {
  Tape t;
  CHECK_THROWS_AS(dcca_loss(t.constant(randn(1, 3, 1)), t.constant(randn(1, 3, 2)), {3, 1e-4}), Error);
  CHECK_THROWS_AS(dcca_loss(t.constant(randn(5, 3, 1)), t.constant(randn(5, 3, 2)), {4, 1e-4}), Error);
  CHECK_THROWS_AS(dcca_loss(t.constant(randn(5, 3, 1)), t.constant(randn(5, 3, 2)), {3, 0.0}), Error);
}

TEST_CASE("soft InfoNCE closed cases") {
  SUBCASE("single sample") {
    Tape t;
    const Matrix z = unit_rows(randn(1, 3, 1));
    AffinityPair w{AffinityTargets::identity(1), AffinityTargets::identity(1)};
    CHECK(soft_infonce(t.constant(z), t.constant(z), w, 0.05).item() == 0.0);
  }
  SUBCASE("equal similarities give log n") {
    Tape t;
    const Matrix z = unit_rows(Matrix::Ones(5, 3));
    AffinityPair w{AffinityTargets::identity(5), AffinityTargets::identity(5)};
    CHECK(soft_infonce(t.constant(z), t.constant(z), w, 0.05).item() == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  }
}

TEST_CASE("soft InfoNCE matches a straight-line recomputation") {
  const Matrix za = unit_rows(randn(4, 3, 5)), zv = unit_rows(randn(4, 3, 6));
  const AffinityPair w = mine_affinities(za, zv, 2, 0.05);
  Tape t;
  const double got = soft_infonce(t.constant(za), t.constant(zv), w, 0.05).item();
  const Matrix s = za * zv.transpose();
  const double a2v = testing::soft_ce(s / 0.05, w.audio_to_visual.dense());
  const double v2a = testing::soft_ce(s.transpose() / 0.05, w.visual_to_audio.dense());
  CHECK(got == doctest::Approx(0.5 * (a2v + v2a)).epsilon(1e-13));
}

TEST_CASE("soft InfoNCE input validation") {
  Tape t;
  const Matrix z = unit_rows(randn(3, 3, 1));
  AffinityPair ok{AffinityTargets::identity(3), AffinityTargets::identity(3)};
  CHECK_THROWS_AS(soft_infonce(t.constant(z), t.constant(z), ok, 0.0), Error);
  CHECK_THROWS_AS(soft_infonce(t.constant(2.0 * z), t.constant(z), ok, 0.05), Error);
  AffinityPair bad = ok;
  bad.audio_to_visual.weights[1][0] = 0.9;
  CHECK_THROWS_AS(soft_infonce(t.constant(z), t.constant(z), bad, 0.05), Error);
}

TEST_CASE("soft InfoNCE with identity targets equals the paired-only loss") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Parameter a(unit_rows(randn(8, 4, seed))), v(unit_rows(randn(8, 4, seed + 40)));
    AffinityPair id{AffinityTargets::identity(8), AffinityTargets::identity(8)};
    Tape t;
    Var soft = soft_infonce(t.param(a), t.param(v), id, 0.05);
    Tape t2;
    Var single = infonce_single(t2.param(a), t2.param(v), 0.05);
    CHECK(std::abs(soft.item() - single.item()) < 1e-12);

    // gradients agree as well
    a.zero_grad();
    v.zero_grad();
    t.backward(soft);
    const Matrix ga = a.grad;
    a.zero_grad();
    v.zero_grad();
    t2.backward(single);
    CHECK(testing::max_abs_diff(ga, a.grad) < 1e-10);
  }
}

TEST_CASE("contrastive losses gradient-check") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Parameter a(randn(6, 4, seed)), v(randn(6, 4, seed + 9));
    Parameter* ps[] = {&a, &v};
    const AffinityPair w = mine_affinities(unit_rows(randn(6, 4, seed + 20)), unit_rows(randn(6, 4, seed + 21)), 3, 0.05);
    CHECK(grad_check([&](Tape& t) {
            return soft_infonce(l2_normalize_rows(t.param(a)), l2_normalize_rows(t.param(v)), w, 0.5);
          }, ps).max_rel_error < 1e-4);
    CHECK(grad_check([&](Tape& t) {
            return infonce_single(l2_normalize_rows(t.param(a)), l2_normalize_rows(t.param(v)), 0.5);
          }, ps).max_rel_error < 1e-4);
  }
}

TEST_CASE("reconstruction loss") {
  Matrix x(2, 2);
  x << 1, 2, 3, 4;
  Tape t;
  Var xa = t.constant(x), xv = t.constant(x);
  Var zero = t.constant(Matrix::Zero(2, 2));
  CHECK(rec_loss(xa, xv, zero, zero).item() == doctest::Approx(15.0).epsilon(1e-15));
  CHECK(rec_loss(xa, xv, xa, xv).item() == 0.0);
  CHECK_THROWS_AS(rec_loss(xa, xv, t.constant(Matrix::Zero(2, 3)), zero), Error);
  Parameter h(randn(2, 2, 1)), hv(randn(2, 2, 2));
  Parameter* ps[] = {&h, &hv};
  CHECK(grad_check([&](Tape& tt) { return rec_loss(tt.constant(x), tt.constant(x), tt.param(h), tt.param(hv)); }, ps)
            .max_rel_error < 1e-6);
}

TEST_CASE("distillation loss") {
  const Matrix za = unit_rows(randn(5, 3, 1)), zv = unit_rows(randn(5, 3, 2));
  const Matrix ta = unit_rows(randn(5, 3, 3)), tv = unit_rows(randn(5, 3, 4));
  Tape t;
  CHECK(distill_loss(t.constant(za), t.constant(zv), t.constant(za), t.constant(zv)).item() == 0.0);

  Matrix e(2, 2);
  e << 1, 0, 0, 1;
  Matrix f(2, 2);
  f << 0, 1, 1, 0;
  CHECK(distill_loss(t.constant(e), t.constant(e), t.constant(f), t.constant(f)).item() == doctest::Approx(2.0));

  double direct = 0.0;
  for (Index i = 0; i < 5; ++i) direct += (za.row(i) - ta.row(i)).squaredNorm() + (zv.row(i) - tv.row(i)).squaredNorm();
  CHECK(distill_loss(t.constant(za), t.constant(zv), t.constant(ta), t.constant(tv)).item() ==
        doctest::Approx(direct / 10.0).epsilon(1e-14));

  Parameter s(za), teach(ta);
  Tape t2;
  t2.backward(distill_loss(t2.param(s), t2.constant(zv), t2.param(teach), t2.constant(tv)));
  CHECK(teach.grad.isZero(0.0));
  CHECK(testing::max_abs_diff(s.grad, (za - ta) / 5.0) < 1e-14);
}

TEST_CASE("warmup weights and the uncertainty form") {
  ModelParams p(ModelConfig::scaled(4, 4, 4, 1), 0);
  auto bundle_of = [](Tape& t, double value) {
    LossBundle b;
    for (auto& term : b.terms) term = t.constant(Matrix::Constant(1, 1, value));
    return b;
  };
  SUBCASE("epoch 3 of warmup") {
    Tape t;
    LossBundle b = bundle_of(t, 1.0);
    CHECK(total_loss(t, b, p, 3).item() == doctest::Approx(1.45).epsilon(1e-15));
    CHECK(b.weight(LossTerm::cca) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(b.weight(LossTerm::infonce) == 0.05);
  }
  SUBCASE("warmup weights reproduce the fixed vector") {
    for (int e = 1; e <= 5; ++e) {
      CHECK(warmup_weight(LossTerm::rec, e) == 1.0);
      CHECK(warmup_weight(LossTerm::cca, e) == e * 0.1);
      CHECK(warmup_weight(LossTerm::dis, e) == 0.1);
      CHECK(warmup_weight(LossTerm::infonce, e) == 0.05);
    }
  }
  SUBCASE("sigma receives no gradient during warmup") {
    Tape t;
    LossBundle b = bundle_of(t, 2.0);
    p.zero_grad();
    t.backward(total_loss(t, b, p, 2));
    for (LossTerm term : kLossTerms) CHECK(p.at(sigma_name(term)).grad(0, 0) == 0.0);
  }
  SUBCASE("sigma = 0 after warmup sums the losses") {
    Tape t;
    LossBundle b = bundle_of(t, 1.5);
    CHECK(total_loss(t, b, p, 6).item() == doctest::Approx(6.0).epsilon(1e-15));
  }
  SUBCASE("sigma gradient is 1 - exp(-sigma) L") {
    p.at("sigma/rec").value(0, 0) = 0.3;
    p.at("sigma/dis").value(0, 0) = -0.4;
    Tape t;
    LossBundle b = bundle_of(t, 1.0);
    b.terms[0] = t.constant(Matrix::Constant(1, 1, 2.5));
    p.zero_grad();
    const double total = total_loss(t, b, p, 7).item();
    t.backward(total_loss(t, b, p, 7));
    CHECK(p.at("sigma/rec").grad(0, 0) == doctest::Approx(1.0 - std::exp(-0.3) * 2.5).epsilon(1e-14));
    CHECK(p.at("sigma/dis").grad(0, 0) == doctest::Approx(1.0 - std::exp(0.4)).epsilon(1e-14));
    // L = 1, sigma = 0 is stationary
    CHECK(p.at("sigma/cca").grad(0, 0) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(total == doctest::Approx(std::exp(-0.3) * 2.5 + 0.3 + 1.0 + 1.0 + std::exp(0.4) - 0.4).epsilon(1e-14));
  }
  SUBCASE("inactive terms contribute nothing") {
    Tape t;
    LossBundle b = bundle_of(t, 1.0);
    b.active = LossFlags{true, false, true, false};
    p.zero_grad();
    Var total = total_loss(t, b, p, 8);
    CHECK(total.item() == doctest::Approx(2.0).epsilon(1e-15));
    t.backward(total);
    CHECK(p.at("sigma/infonce").grad(0, 0) == 0.0);
    CHECK(b.value(LossTerm::dis) == 0.0);
  }
  SUBCASE("all terms off is an error") {
    Tape t;
    LossBundle b = bundle_of(t, 1.0);
    b.active = LossFlags{false, false, false, false};
    CHECK_THROWS_AS(total_loss(t, b, p, 1), Error);
  }
}
