#include <cmath>

#include "doctest.h"
#include "hstrack/objectives.hpp"
#include "hstrack/unmixing.hpp"
#include "test_util.hpp"

using namespace hstrack;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

HeadOutputs make_outputs(const std::vector<double>& cls,
                         const std::vector<double>& offset,
                         const std::vector<double>& size, int g = 8) {
  return HeadOutputs{Tensor::from({1, g, g}, cls), Tensor::from({2, g, g}, offset),
                     Tensor::from({2, g, g}, size)};
}

}  // namespace

TEST_CASE("head shape contract and zero-projection midpoint") {
  Rng rng(7);
  PredictionHead head(HeadConfig{}, Rng(7));
  Tensor x = random_tensor(rng, {64, 8, 8});
  HeadOutputs out = head.forward(nullptr, x, false);
  CHECK(out.cls.shape() == Shape{1, 8, 8});
  CHECK(out.offset.shape() == Shape{2, 8, 8});
  CHECK(out.size.shape() == Shape{2, 8, 8});
  for (double v : out.cls.values()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }

  PredictionHead zp(HeadConfig{}, Rng(9));
  for (const char* b : {"head.cls", "head.offset", "head.size"}) {
    Var* w = zp.params().find(std::string(b) + ".proj.weight");
    Var* bias = zp.params().find(std::string(b) + ".proj.bias");
    w->assign(Tensor::zeros(w->value.shape()));
    bias->assign(Tensor::zeros(bias->value.shape()));
  }
  HeadOutputs mid = zp.forward(nullptr, x, false);
  for (double v : mid.cls.values()) CHECK(v == doctest::Approx(0.5));
  for (double v : mid.offset.values()) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("decode_box hand case: argmax (2,3), offsets 0.5, sizes 0.25") {
  std::vector<double> cls(64, 0.1);
  cls[2 * 8 + 3] = 0.9;
  std::vector<double> offset(128, 0.5);
  std::vector<double> size(128, 0.25);
  BBox b = decode_box(make_outputs(cls, offset, size));
  CHECK(b.x == doctest::Approx(20.0));
  CHECK(b.y == doctest::Approx(12.0));
  CHECK(b.w == doctest::Approx(16.0));
  CHECK(b.h == doctest::Approx(16.0));
}

TEST_CASE("decode_box tie-break and zero-offset corner snap") {
  std::vector<double> cls(64, 0.3);
  std::vector<double> offset(128, 0.0);
  std::vector<double> size(128, 0.125);
  BBox b = decode_box(make_outputs(cls, offset, size));
  // uniform map: argmax at (0,0); zero offsets snap the center to the corner
  CHECK(b.cx() == doctest::Approx(0.0));
  CHECK(b.cy() == doctest::Approx(0.0));
  CHECK(b.w == doctest::Approx(8.0));
}

TEST_CASE("gaussian_target peaks at exactly 1 with the specified width") {
  BBox gt{24, 24, 16, 16};  // center (32,32) -> cell (4,4)
  Tensor m = gaussian_target(gt);
  CHECK(m.at({0, 4, 4}) == 1.0);
  double sigma = std::max(1.0, (16.0 / 8 + 16.0 / 8) / 6.0);
  for (int d = 1; d <= 3; ++d)
    CHECK(m.at({0, 4, 4 + d}) ==
          doctest::Approx(std::exp(-d * d / (2 * sigma * sigma))).epsilon(1e-12));
  // half width: value 0.5 at distance sigma*sqrt(2 ln 2)
  double hw = sigma * std::sqrt(2.0 * std::log(2.0));
  CHECK(std::exp(-hw * hw / (2 * sigma * sigma)) == doctest::Approx(0.5));
  // symmetric box gives a symmetric map
  for (int d = 1; d <= 3; ++d) {
    CHECK(m.at({0, 4, 4 + d}) == m.at({0, 4, 4 - d}));
    CHECK(m.at({0, 4 + d, 4}) == m.at({0, 4 - d, 4}));
  }
  CHECK_THROWS_AS(gaussian_target(BBox{0, 0, 0, 5}), std::invalid_argument);
}

TEST_CASE("focal_loss hand values and positivity") {
  // near-perfect prediction
  Tensor target = gaussian_target(BBox{24, 24, 16, 16});
  std::vector<double> pred(64, 1e-6);
  pred[4 * 8 + 4] = 1.0 - 1e-6;
  // small residual from non-peak cells with gaussian weights
  double loss = focal_loss(Tensor::from({1, 8, 8}, pred), target).value();
  CHECK(loss <= 1e-5);

  // single-cell map, y=1, p=0.5 -> 0.25 ln 2
  Tensor one_target = Tensor::from({1, 1, 1}, {1.0});
  Tensor half = Tensor::from({1, 1, 1}, {0.5});
  CHECK(focal_loss(half, one_target).value() ==
        doctest::Approx(0.25 * std::log(2.0)).epsilon(1e-12));

  Rng rng(13);
  for (int t = 0; t < 20; ++t) {
    Tensor p = random_tensor(rng, {1, 8, 8}, 0.01, 0.99);
    CHECK(focal_loss(p, target).value() >= 0.0);
  }
  CHECK_THROWS_AS(focal_loss(half, Tensor::from({1, 1, 1}, {0.5})), std::invalid_argument);
}

TEST_CASE("giou_loss hand cases") {
  CHECK(giou_loss(BBox{3, 4, 5, 6}, BBox{3, 4, 5, 6}) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(l1_loss(BBox{3, 4, 5, 6}, BBox{3, 4, 5, 6}) == doctest::Approx(0.0));

  // disjoint: IoU 0, enclosing 3, union 2 -> GIoU = -1/3 -> loss 4/3
  CHECK(giou_loss(BBox{0, 0, 1, 1}, BBox{2, 0, 1, 1}) ==
        doctest::Approx(4.0 / 3.0).epsilon(1e-12));

  // nested centered box of half area: GIoU = IoU = 0.5 -> loss 0.5
  double s = std::sqrt(8.0);
  BBox inner{2 - s / 2, 2 - s / 2, s, s};
  CHECK(giou_loss(inner, BBox{0, 0, 4, 4}) == doctest::Approx(0.5).epsilon(1e-12));

  CHECK_THROWS_AS(giou_loss(BBox{0, 0, -1, 1}, BBox{0, 0, 1, 1}), std::invalid_argument);
}

TEST_CASE("giou stays in (-1,1] so the loss stays in [0,2)") {
  Rng rng(17);
  for (int t = 0; t < 200; ++t) {
    BBox a{rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(0.5, 8), rng.uniform(0.5, 8)};
    BBox b{rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(0.5, 8), rng.uniform(0.5, 8)};
    double loss = giou_loss(a, b);
    CHECK(loss >= 0.0);
    CHECK(loss < 2.0);
  }
}

TEST_CASE("l1_loss normalizes center/extent differences by the search size") {
  BBox pred{0, 0, 10, 10};  // center (5,5)
  BBox gt{4, 2, 12, 14};    // center (10,9)
  double expect = (5.0 + 4.0 + 2.0 + 4.0) / 4.0 / 64.0;
  CHECK(l1_loss(pred, gt) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("tracking_loss is near zero for a perfect prediction") {
  BBox gt{24, 26, 16, 12};
  int ic = static_cast<int>(gt.cy() / 8), jc = static_cast<int>(gt.cx() / 8);

  std::vector<double> cls(64, 1e-6);
  cls[static_cast<size_t>(ic * 8 + jc)] = 1.0 - 1e-6;
  std::vector<double> offset(128), size(128);
  for (int i = 0; i < 64; ++i) {
    offset[static_cast<size_t>(i)] = gt.cx() / 8 - jc;        // dx
    offset[static_cast<size_t>(64 + i)] = gt.cy() / 8 - ic;   // dy
    size[static_cast<size_t>(i)] = gt.w / 64.0;
    size[static_cast<size_t>(64 + i)] = gt.h / 64.0;
  }
  HeadOutputs out = make_outputs(cls, offset, size);
  CHECK(tracking_loss(out, gt, LossWeights{}).value() <= 1e-4);
}

TEST_CASE("tracking_loss is additive in the classification term") {
  Rng rng(23);
  BBox gt{20, 20, 16, 16};
  Tensor offset = random_tensor(rng, {2, 8, 8}, 0.1, 0.9);
  Tensor size = random_tensor(rng, {2, 8, 8}, 0.1, 0.9);
  Tensor cls1 = random_tensor(rng, {1, 8, 8}, 0.05, 0.95);
  Tensor cls2 = random_tensor(rng, {1, 8, 8}, 0.05, 0.95);
  HeadOutputs o1{cls1, offset, size};
  HeadOutputs o2{cls2, offset, size};
  Tensor target = gaussian_target(gt);
  double delta_total = tracking_loss(o1, gt, LossWeights{}).value() -
                       tracking_loss(o2, gt, LossWeights{}).value();
  double delta_cls = focal_loss(cls1, target).value() - focal_loss(cls2, target).value();
  CHECK(delta_total == doctest::Approx(delta_cls).epsilon(1e-10));
}

TEST_CASE("target_unmixing_loss reduces to closed forms at extreme masks") {
  Rng rng(29);
  Tensor xt = random_tensor(rng, {4, 4, 4}, 0.2, 1.0);
  Tensor xhat_t = random_tensor(rng, {4, 4, 4}, 0.2, 1.0);
  Tensor xs = random_tensor(rng, {4, 8, 8}, 0.2, 1.0);
  Tensor xhat_s = random_tensor(rng, {4, 8, 8}, 0.2, 1.0);
  double lce = 0.2;

  double rec_t = sad_loss(xhat_t, xt).value() + mse_loss(xhat_t, xt).value();
  double rec_s = sad_loss(xhat_s, xs).value() + mse_loss(xhat_s, xs).value();

  Tensor ones = Tensor::full({1, 8, 8}, 1.0);
  double all_bg = target_unmixing_loss(xhat_t, xt, xhat_s, xs, ones, lce).value();
  CHECK(all_bg == doctest::Approx(rec_t + lce * rec_s).epsilon(1e-10));

  Tensor zeros = Tensor::zeros({1, 8, 8});
  double all_target = target_unmixing_loss(xhat_t, xt, xhat_s, xs, zeros, lce).value();
  CHECK(all_target == doctest::Approx(rec_t + (1 - lce) * rec_s).epsilon(1e-10));

  double perfect = target_unmixing_loss(xt, xt, xs, xs, ones, lce).value();
  CHECK(perfect <= 1e-5);
}

TEST_CASE("mask complementarity: swapped masks with swapped weights agree") {
  Rng rng(31);
  Tensor xt = random_tensor(rng, {3, 2, 2}, 0.2, 1.0);
  Tensor xhat_t = random_tensor(rng, {3, 2, 2}, 0.2, 1.0);
  Tensor xs = random_tensor(rng, {3, 4, 4}, 0.2, 1.0);
  Tensor xhat_s = random_tensor(rng, {3, 4, 4}, 0.2, 1.0);
  std::vector<double> mv(16);
  for (double& v : mv) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
  Tensor v = Tensor::from({1, 4, 4}, mv);
  std::vector<double> inv(16);
  for (size_t i = 0; i < 16; ++i) inv[i] = 1.0 - mv[i];
  Tensor vc = Tensor::from({1, 4, 4}, inv);
  double a = target_unmixing_loss(xhat_t, xt, xhat_s, xs, v, 0.2).value();
  double b = target_unmixing_loss(xhat_t, xt, xhat_s, xs, vc, 0.8).value();
  CHECK(a == doctest::Approx(b).epsilon(1e-10));
}

TEST_CASE("target_unmixing_loss is nonnegative and zero iff exact") {
  Rng rng(37);
  for (int t = 0; t < 10; ++t) {
    Tensor xt = random_tensor(rng, {3, 2, 2}, 0.2, 1.0);
    Tensor xs = random_tensor(rng, {3, 4, 4}, 0.2, 1.0);
    Tensor xhat_t = random_tensor(rng, {3, 2, 2}, 0.2, 1.0);
    Tensor xhat_s = random_tensor(rng, {3, 4, 4}, 0.2, 1.0);
    std::vector<double> mv(16);
    for (double& m : mv) m = rng.uniform() < 0.5 ? 0.0 : 1.0;
    Tensor v = Tensor::from({1, 4, 4}, mv);
    CHECK(target_unmixing_loss(xhat_t, xt, xhat_s, xs, v, 0.3).value() > 0.0);
    CHECK(target_unmixing_loss(xt, xt, xs, xs, v, 0.3).value() <= 1e-5);
  }
  CHECK_THROWS_AS(target_unmixing_loss(Tensor::zeros({3, 2, 2}), Tensor::zeros({3, 2, 2}),
                                       Tensor::zeros({3, 4, 4}), Tensor::zeros({3, 4, 4}),
                                       Tensor::zeros({1, 4, 4}), 1.5),
                  std::invalid_argument);
}

TEST_CASE("total_loss interpolates its two terms") {
  Tensor track = Tensor::scalar(3.0);
  Tensor unmix = Tensor::scalar(5.0);
  CHECK(total_loss(track, unmix, 0.0).value() == 3.0);
  CHECK(total_loss(track, unmix, 1.0).value() == 5.0);
  CHECK(total_loss(track, unmix, 0.5).value() == doctest::Approx(4.0));
  CHECK_THROWS_AS(total_loss(track, unmix, 1.5), std::invalid_argument);
}
