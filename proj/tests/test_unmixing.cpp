#include <cmath>

#include "doctest.h"
#include "hstrack/unmixing.hpp"
#include "test_util.hpp"

using namespace hstrack;
using testutil::bit_identical;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

UnmixConfig small_cfg(int bands = 16, int r = 6) {
  UnmixConfig c;
  c.bands = bands;
  c.endmembers = r;
  return c;
}

}  // namespace

TEST_CASE("encode emits simplex abundances of the right shape") {
  Rng rng(3);
  UnmixNet net(small_cfg(), Rng(11));
  Tensor cube = random_tensor(rng, {16, 8, 8}, 0.0, 1.0);
  Tensor a = net.encode(nullptr, cube);
  CHECK(a.shape() == Shape{6, 8, 8});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      double sum = 0.0;
      for (int k = 0; k < 6; ++k) {
        double v = a.at({k, y, x});
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        sum += v;
      }
      CHECK(std::fabs(sum - 1.0) <= 1e-12);
    }
}

TEST_CASE("zero final encoder layer gives uniform abundances") {
  UnmixNet net(small_cfg(), Rng(5));
  net.params().find("unmix.enc3.weight")->assign(Tensor::zeros({6, 16, 1, 1}));
  net.params().find("unmix.enc3.bias")->assign(Tensor::zeros({6}));
  Rng rng(9);
  Tensor cube = random_tensor(rng, {16, 4, 4}, 0.0, 1.0);
  Tensor a = net.encode(nullptr, cube);
  for (double v : a.values()) CHECK(v == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
}

TEST_CASE("encode rejects band mismatch") {
  UnmixNet net(small_cfg(), Rng(5));
  CHECK_THROWS_AS(net.encode(nullptr, Tensor::zeros({12, 4, 4})), std::invalid_argument);
  CHECK_THROWS_AS(net.decode(nullptr, Tensor::zeros({5, 4, 4})), std::invalid_argument);
  CHECK_THROWS_AS(net.adapt(nullptr, Tensor::zeros({5, 4, 4})), std::invalid_argument);
}

TEST_CASE("decode of one-hot abundances reproduces endmember columns exactly") {
  UnmixNet net(small_cfg(16, 4), Rng(21));
  Tensor m = net.endmembers(nullptr);  // [16, 4]
  for (int k = 0; k < 4; ++k) {
    std::vector<double> a(4 * 4, 0.0);
    for (int p = 0; p < 4; ++p) a[static_cast<size_t>(k * 4 + p)] = 1.0;
    Tensor xhat = net.decode(nullptr, Tensor::from({4, 2, 2}, a));
    for (int b = 0; b < 16; ++b)
      for (int p = 0; p < 4; ++p)
        CHECK(xhat.values()[static_cast<size_t>(b * 4 + p)] == m.at({b, k}));
  }
}

TEST_CASE("decode of uniform abundances is the endmember column mean") {
  UnmixNet net(small_cfg(8, 4), Rng(31));
  Tensor m = net.endmembers(nullptr);
  Tensor xhat = net.decode(nullptr, Tensor::full({4, 1, 1}, 0.25));
  for (int b = 0; b < 8; ++b) {
    double mean = 0.0;
    for (int k = 0; k < 4; ++k) mean += m.at({b, k}) / 4.0;
    CHECK(xhat.values()[static_cast<size_t>(b)] == doctest::Approx(mean).epsilon(1e-14));
  }
}

TEST_CASE("decode is exactly linear in the abundances") {
  Rng rng(41);
  UnmixNet net(small_cfg(8, 4), Rng(41));
  Tensor a1 = random_tensor(rng, {4, 3, 3}, 0.0, 1.0);
  Tensor a2 = random_tensor(rng, {4, 3, 3}, 0.0, 1.0);
  Tensor lhs = net.decode(nullptr, add(mul_scalar(a1, 2.0), mul_scalar(a2, -0.5)));
  Tensor rhs = add(mul_scalar(net.decode(nullptr, a1), 2.0),
                   mul_scalar(net.decode(nullptr, a2), -0.5));
  CHECK(max_abs_diff(lhs, rhs) <= 1e-12);
}

TEST_CASE("sad_loss hand values") {
  // identical spectra: angle collapses to ~0 (denominator nudge only)
  Rng rng(51);
  Tensor x = random_tensor(rng, {3, 2, 2}, 0.5, 1.0);
  CHECK(sad_loss(x, x).value() <= 1e-5);

  // orthogonal spectra: pi/2
  Tensor a = Tensor::from({2, 1, 1}, {1.0, 0.0});
  Tensor b = Tensor::from({2, 1, 1}, {0.0, 1.0});
  CHECK(sad_loss(a, b).value() == doctest::Approx(M_PI / 2).epsilon(1e-9));

  // (1,0) vs (1,1): pi/4
  Tensor c = Tensor::from({2, 1, 1}, {1.0, 1.0});
  CHECK(sad_loss(a, c).value() == doctest::Approx(M_PI / 4).epsilon(1e-9));
}

TEST_CASE("sad_loss masks and zero-norm pixels contribute zero") {
  Tensor x = Tensor::from({2, 1, 2}, {1.0, 0.0, 0.0, 0.0});  // second pixel zero
  Tensor y = Tensor::from({2, 1, 2}, {0.0, 0.0, 1.0, 0.0});  // orthogonal at p0
  // p0 angle pi/2, p1 zero-norm -> contributes 0; mean over 2 pixels
  CHECK(sad_loss(x, y).value() == doctest::Approx(M_PI / 4).epsilon(1e-9));

  Tensor empty_mask = Tensor::zeros({1, 1, 2});
  CHECK(sad_loss(x, y, &empty_mask).value() == 0.0);
}

TEST_CASE("mse_loss hand values") {
  Rng rng(61);
  Tensor x = random_tensor(rng, {4, 3, 3});
  CHECK(mse_loss(x, x).value() == 0.0);
  CHECK(mse_loss(add_scalar(x, 2.0), x).value() == doctest::Approx(4.0).epsilon(1e-12));
  Tensor mask = Tensor::zeros({1, 3, 3});
  CHECK(mse_loss(add_scalar(x, 2.0), x, &mask).value() == 0.0);
  CHECK_THROWS_AS(mse_loss(x, Tensor::zeros({4, 2, 2})), std::invalid_argument);
}

TEST_CASE("adaptor: zero weights give zero output, identity passes through") {
  UnmixNet net(small_cfg(16, 6), Rng(71));
  Rng rng(72);
  Tensor a = random_tensor(rng, {6, 5, 5}, 0.0, 1.0);

  net.params().find("unmix.adaptor.weight")->assign(Tensor::zeros({6, 6, 1, 1}));
  net.params().find("unmix.adaptor.bias")->assign(Tensor::zeros({6}));
  Tensor zero_out = net.adapt(nullptr, a);
  for (double v : zero_out.values()) CHECK(v == 0.0);

  std::vector<double> eye(36, 0.0);
  for (int i = 0; i < 6; ++i) eye[static_cast<size_t>(i * 6 + i)] = 1.0;
  net.params().find("unmix.adaptor.weight")->assign(Tensor::from({6, 6, 1, 1}, eye));
  Tensor id_out = net.adapt(nullptr, a);
  CHECK(bit_identical(id_out, a));

  // linearity with zero bias
  Tensor doubled = net.adapt(nullptr, mul_scalar(a, 2.0));
  CHECK(max_abs_diff(doubled, mul_scalar(id_out, 2.0)) <= 1e-12);
}

TEST_CASE("decompose delegates to the channel-wise Haar transform") {
  Rng rng(81);
  UnmixNet net(small_cfg(16, 6), Rng(81));
  Tensor ap = random_tensor(rng, {6, 4, 4});
  auto [lo, hi] = net.decompose(ap);
  CHECK(lo.shape() == Shape{3, 4, 4});
  CHECK(hi.shape() == Shape{3, 4, 4});
  double inv = 1.0 / std::sqrt(2.0);
  CHECK(lo.at({0, 0, 0}) ==
        doctest::Approx((ap.at({0, 0, 0}) + ap.at({1, 0, 0})) * inv).epsilon(1e-14));
  CHECK(hi.at({2, 1, 1}) ==
        doctest::Approx((ap.at({4, 1, 1}) - ap.at({5, 1, 1})) * inv).epsilon(1e-14));
}

TEST_CASE("abundance invariants hold over many random encodes") {
  Rng rng(91);
  UnmixNet net(small_cfg(12, 5), Rng(91));
  for (int trial = 0; trial < 50; ++trial) {
    Tensor cube = random_tensor(rng, {12, 3, 3}, 0.0, 2.0);
    Tensor a = net.encode(nullptr, cube);
    for (int p = 0; p < 9; ++p) {
      double sum = 0.0;
      for (int k = 0; k < 5; ++k) {
        double v = a.values()[static_cast<size_t>(k * 9 + p)];
        CHECK(v >= 0.0);
        sum += v;
      }
      CHECK(std::fabs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("convolutional encoder variant honors the same contract") {
  UnmixConfig cfg = small_cfg(10, 4);
  cfg.encoder = EncoderKind::kConv;
  UnmixNet net(cfg, Rng(101));
  Rng rng(102);
  Tensor cube = random_tensor(rng, {10, 6, 6}, 0.0, 1.0);
  Tensor a = net.encode(nullptr, cube);
  CHECK(a.shape() == Shape{4, 6, 6});
  for (int p = 0; p < 36; ++p) {
    double sum = 0.0;
    for (int k = 0; k < 4; ++k) sum += a.values()[static_cast<size_t>(k * 36 + p)];
    CHECK(std::fabs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("endmember matching is exact on a known permutation") {
  Rng rng(111);
  Tensor truth = random_tensor(rng, {8, 4}, 0.1, 1.0);
  // permute columns 0123 -> 2031 and add small noise
  std::vector<int> perm = {2, 0, 3, 1};
  std::vector<double> est(8 * 4);
  for (int b = 0; b < 8; ++b)
    for (int k = 0; k < 4; ++k)
      est[static_cast<size_t>(b * 4 + k)] =
          truth.at({b, perm[static_cast<size_t>(k)]}) + 0.01 * rng.uniform();
  EndmemberMatch m = match_endmembers(Tensor::from({8, 4}, est), truth);
  CHECK(m.perm == perm);
  CHECK(m.mean_sad <= 0.05);
}

TEST_CASE("losses differentiate through the tape") {
  Rng rng(121);
  Tensor x = random_tensor(rng, {1, 4, 3, 3}, 0.3, 1.0);
  Tensor ref = random_tensor(rng, {1, 4, 3, 3}, 0.3, 1.0);
  auto f = [&](Tape&, const Tensor& t) {
    return add(sad_loss(t, ref), mse_loss(t, ref));
  };
  CHECK(grad_check(f, x, 1e-5) <= 1e-4);
}
