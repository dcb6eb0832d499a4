#include <cmath>

#include "doctest.h"
#include "hstrack/wavelets.hpp"
#include "test_util.hpp"

using namespace hstrack;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {
double energy(const Tensor& t) {
  double e = 0.0;
  for (double v : t.values()) e += v * v;
  return e;
}
}  // namespace

TEST_CASE("haar1d: equal pair channels put everything in the low branch") {
  Tensor x = Tensor::full({2, 3, 3}, 0.7);
  auto [lo, hi] = haar1d_channels(x);
  for (double v : lo.values()) CHECK(v == doctest::Approx(0.7 * std::sqrt(2.0)).epsilon(1e-14));
  for (double v : hi.values()) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("haar1d: pair [1,3] gives low 2*sqrt(2), high -sqrt(2)") {
  Tensor x = Tensor::from({2, 1, 1}, {1.0, 3.0});
  auto [lo, hi] = haar1d_channels(x);
  CHECK(lo.value() == doctest::Approx(2.0 * std::sqrt(2.0)).epsilon(1e-14));
  CHECK(hi.value() == doctest::Approx(-std::sqrt(2.0)).epsilon(1e-14));
}

TEST_CASE("haar1d: inverse pairing recovers the input") {
  Rng rng(23);
  Tensor x = random_tensor(rng, {6, 4, 5});
  auto [lo, hi] = haar1d_channels(x);
  Tensor back = ihaar1d_channels(lo, hi);
  CHECK(max_abs_diff(x, back) <= 1e-12);
}

TEST_CASE("haar1d rejects odd channel counts") {
  CHECK_THROWS_AS(haar1d_channels(Tensor::zeros({3, 2, 2})), std::invalid_argument);
}

TEST_CASE("haar2d: constant image 1 gives LL=2 and zero details") {
  Tensor x = Tensor::full({1, 4, 4}, 1.0);
  Subbands2D s = haar2d(x);
  for (double v : s.ll.values()) CHECK(v == doctest::Approx(2.0));
  for (double v : s.hl.values()) CHECK(v == doctest::Approx(0.0));
  for (double v : s.lh.values()) CHECK(v == doctest::Approx(0.0));
  for (double v : s.hh.values()) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("haar2d: block [[1,2],[3,4]] maps to LL=5, HL=-1, LH=-2, HH=0") {
  Tensor x = Tensor::from({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  Subbands2D s = haar2d(x);
  CHECK(s.ll.value() == doctest::Approx(5.0));
  CHECK(s.hl.value() == doctest::Approx(-1.0));
  CHECK(s.lh.value() == doctest::Approx(-2.0));
  CHECK(s.hh.value() == doctest::Approx(0.0));
}

TEST_CASE("haar2d preserves energy (orthonormal)") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor(rng, {3, 8, 6});
    Subbands2D s = haar2d(x);
    double es = energy(s.ll) + energy(s.hl) + energy(s.lh) + energy(s.hh);
    CHECK(std::fabs(es - energy(x)) / std::max(1.0, energy(x)) <= 1e-10);
  }
}

TEST_CASE("haar2d rejects odd spatial extents") {
  CHECK_THROWS_AS(haar2d(Tensor::zeros({1, 3, 4})), std::invalid_argument);
  CHECK_THROWS_AS(haar2d(Tensor::zeros({1, 4, 5})), std::invalid_argument);
}

TEST_CASE("ihaar2d is an exact left inverse on random tensors") {
  Rng rng(47);
  for (int trial = 0; trial < 100; ++trial) {
    Shape s = {rng.uniform_int(1, 4), 2 * rng.uniform_int(1, 4), 2 * rng.uniform_int(1, 4)};
    Tensor x = random_tensor(rng, s, -5.0, 5.0);
    Tensor back = ihaar2d(haar2d(x));
    CHECK(max_abs_diff(x, back) <= 1e-10);
  }
}

TEST_CASE("ihaar2d of all-zero subbands is the zero image") {
  Subbands2D s{Tensor::zeros({2, 2, 2}), Tensor::zeros({2, 2, 2}),
               Tensor::zeros({2, 2, 2}), Tensor::zeros({2, 2, 2})};
  Tensor y = ihaar2d(s);
  for (double v : y.values()) CHECK(v == 0.0);
}

TEST_CASE("LL-only synthesis of constant LL=2 gives the constant image 1") {
  Subbands2D s{Tensor::full({1, 2, 2}, 2.0), Tensor::zeros({1, 2, 2}),
               Tensor::zeros({1, 2, 2}), Tensor::zeros({1, 2, 2})};
  Tensor y = ihaar2d(s);
  CHECK(y.shape() == Shape{1, 4, 4});
  for (double v : y.values()) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("ihaar2d rejects mismatched subband shapes") {
  Subbands2D s{Tensor::zeros({1, 2, 2}), Tensor::zeros({1, 2, 2}),
               Tensor::zeros({1, 2, 2}), Tensor::zeros({1, 2, 4})};
  CHECK_THROWS_AS(ihaar2d(s), std::invalid_argument);
}

TEST_CASE("haar2d is exactly linear") {
  Rng rng(53);
  Tensor x = random_tensor(rng, {2, 4, 4});
  Tensor y = random_tensor(rng, {2, 4, 4});
  double alpha = 1.75, beta = -0.5;
  Subbands2D sx = haar2d(x), sy = haar2d(y);
  Subbands2D sc = haar2d(add(mul_scalar(x, alpha), mul_scalar(y, beta)));
  auto lin = [&](const Tensor& a, const Tensor& b, const Tensor& c) {
    Tensor expect = add(mul_scalar(a, alpha), mul_scalar(b, beta));
    CHECK(max_abs_diff(expect, c) <= 1e-12);
  };
  lin(sx.ll, sy.ll, sc.ll);
  lin(sx.hl, sy.hl, sc.hl);
  lin(sx.lh, sy.lh, sc.lh);
  lin(sx.hh, sy.hh, sc.hh);
}

TEST_CASE("round trips hold over 1000 random tensors") {
  Rng rng(61);
  double worst1 = 0.0, worst2 = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    Shape s = {2 * rng.uniform_int(1, 2), 2 * rng.uniform_int(1, 3),
               2 * rng.uniform_int(1, 3)};
    Tensor x = random_tensor(rng, s, -3.0, 3.0);
    auto [lo, hi] = haar1d_channels(x);
    worst1 = std::max(worst1, max_abs_diff(x, ihaar1d_channels(lo, hi)));
    worst2 = std::max(worst2, max_abs_diff(x, ihaar2d(haar2d(x))));
  }
  CHECK(worst1 <= 1e-10);
  CHECK(worst2 <= 1e-10);
}

TEST_CASE("wavelet transforms are differentiable compositions") {
  Rng rng(71);
  Tensor x = random_tensor(rng, {2, 4, 4});
  Tensor w = random_tensor(rng, {2, 4, 4});
  auto f2d = [&](Tape&, const Tensor& t) {
    Subbands2D s = haar2d(t);
    Tensor y = ihaar2d(Subbands2D{mul(s.ll, s.ll), s.hl, mul_scalar(s.lh, 2.0), s.hh});
    return sum_all(mul(y, w));
  };
  CHECK(grad_check(f2d, x, 1e-5) <= 1e-6);

  Tensor whalf = random_tensor(rng, {1, 4, 4});
  auto f1d = [&](Tape&, const Tensor& t) {
    auto [lo, hi] = haar1d_channels(t);
    return sum_all(add(mul(lo, lo), mul(hi, whalf)));
  };
  CHECK(grad_check(f1d, x, 1e-5) <= 1e-6);
}
