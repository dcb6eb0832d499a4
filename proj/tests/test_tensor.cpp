#include <cmath>
#include <cstring>

#include "doctest.h"
#include "hstrack/nn.hpp"
#include "hstrack/tensor.hpp"
#include "test_util.hpp"

using namespace hstrack;
using testutil::bit_identical;
using testutil::random_tensor;

TEST_CASE("conv2d with identity 1x1 kernel reproduces the input") {
  Rng rng(7);
  Tensor x = random_tensor(rng, {3, 5, 4});
  // kernel [3,3,1,1] = identity channel map
  std::vector<double> k(9, 0.0);
  k[0] = k[4] = k[8] = 1.0;
  Tensor kernel = Tensor::from({3, 3, 1, 1}, k);
  Tensor y = conv2d(x, kernel, nullptr, 1, 0, 1);
  CHECK(bit_identical(x, y));
}

TEST_CASE("softmax of all-zero logits of length 6 is uniform") {
  Tensor x = Tensor::zeros({6});
  Tensor y = softmax(x, 0);
  for (double v : y.values()) CHECK(v == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
}

TEST_CASE("batchnorm eval with identity statistics is identity up to eps") {
  Rng rng(3);
  Params ps;
  BatchNorm2d bn("bn", 4, ps);
  Tensor x = random_tensor(rng, {2, 4, 3, 3});
  Tensor y = bn.forward(nullptr, x, false);
  // running mean 0, var 1, gamma 1, beta 0: y = x / sqrt(1 + eps)
  double scale = 1.0 / std::sqrt(1.0 + 1e-5);
  for (size_t i = 0; i < x.values().size(); ++i)
    CHECK(y.values()[i] == doctest::Approx(x.values()[i] * scale).epsilon(1e-12));
}

TEST_CASE("shape mismatch diagnostics name both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 5});
  try {
    add(a, b);
    FAIL("expected invalid_argument");
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,5]") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(a, Tensor::zeros({4, 2})), std::invalid_argument);
}

TEST_CASE("conv2d rejects groups that do not divide channels") {
  Tensor x = Tensor::zeros({6, 4, 4});
  Tensor k = Tensor::zeros({6, 2, 1, 1});
  CHECK_THROWS_AS(conv2d(x, k, nullptr, 1, 0, 4), std::invalid_argument);
}

TEST_CASE("concat then complementary slicing recovers both operands") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    int axis = rng.uniform_int(0, 2);
    Shape sa = {rng.uniform_int(1, 4), rng.uniform_int(1, 4), rng.uniform_int(1, 4)};
    Shape sb = sa;
    sb[static_cast<size_t>(axis)] = rng.uniform_int(1, 4);
    Tensor a = random_tensor(rng, sa);
    Tensor b = random_tensor(rng, sb);
    Tensor c = concat({a, b}, axis);
    Tensor ra = slice(c, axis, 0, sa[static_cast<size_t>(axis)]);
    Tensor rb = slice(c, axis, sa[static_cast<size_t>(axis)], sb[static_cast<size_t>(axis)]);
    CHECK(bit_identical(a, ra));
    CHECK(bit_identical(b, rb));
  }
}

TEST_CASE("forward determinism: identical inputs give bit-identical outputs") {
  Rng rng(5);
  Tensor x = random_tensor(rng, {4, 6});
  Tensor w = random_tensor(rng, {6, 3});
  Tensor y1 = softmax(matmul(relu(x), w), 1);
  Tensor y2 = softmax(matmul(relu(x), w), 1);
  CHECK(bit_identical(y1, y2));
}

TEST_CASE("grad_check: f(x)=sum(x) has all-ones gradient") {
  Rng rng(1);
  Tensor x = random_tensor(rng, {3, 4});
  auto f = [](Tape&, const Tensor& t) { return sum_all(t); };
  CHECK(grad_check(f, x, 1e-5) <= 1e-10);

  Tape tape;
  Tensor xt = tape.watch(x);
  Tensor y = sum_all(xt);
  tape.backward(y);
  for (double g : tape.grad_of(xt)) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("grad_check: f(x)=sum(x*x) at x=[3] has gradient 6") {
  Tensor x = Tensor::from({1}, {3.0});
  auto f = [](Tape&, const Tensor& t) { return sum_all(mul(t, t)); };
  CHECK(grad_check(f, x, 1e-5) <= 1e-8);

  Tape tape;
  Tensor xt = tape.watch(x);
  tape.backward(sum_all(mul(xt, xt)));
  CHECK(tape.grad_of(xt)[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("grad_check: MSE(softmax(Wx), target) on random 4x4 W") {
  Rng rng(42);
  Tensor w = random_tensor(rng, {4, 4});
  Tensor target = random_tensor(rng, {4, 1}, 0.0, 1.0);
  auto f = [&](Tape&, const Tensor& wt) {
    Tensor x = Tensor::from({4, 1}, {0.3, -0.2, 0.8, 0.1});
    Tensor p = softmax(matmul(wt, x), 0);
    Tensor d = sub(p, target);
    return mean_all(mul(d, d));
  };
  CHECK(grad_check(f, w, 1e-5) <= 1e-5);
}

TEST_CASE("gradient accumulates additively when a leaf is used twice") {
  Tensor x = Tensor::from({2}, {1.5, -0.5});
  Tape tape;
  Tensor xt = tape.watch(x);
  // y = sum(x) + sum(2x): dy/dx = 3
  Tensor y = add(sum_all(xt), sum_all(mul_scalar(xt, 2.0)));
  tape.backward(y);
  for (double g : tape.grad_of(xt)) CHECK(g == doctest::Approx(3.0));
}

TEST_CASE("catalogued ops pass grad_check on random seeds") {
  const double kTol = 1e-4;
  const double kEps = 1e-5;
  for (uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed * 977 + 13);
    Tensor x = random_tensor(rng, {2, 3, 4});
    Tensor other = random_tensor(rng, {2, 3, 4});
    Tensor col = random_tensor(rng, {4});  // broadcast partner

    auto check = [&](const std::string& name,
                     const std::function<Tensor(Tape&, const Tensor&)>& f,
                     const Tensor& at) {
      INFO("op: " << name << " seed " << seed);
      CHECK(grad_check(f, at, kEps) <= kTol);
    };

    check("add", [&](Tape&, const Tensor& t) { return sum_all(add(t, other)); }, x);
    check("add_broadcast",
          [&](Tape&, const Tensor& t) { return sum_all(mul(add(t, col), other)); }, x);
    check("sub", [&](Tape&, const Tensor& t) { return sum_all(mul(sub(t, other), other)); }, x);
    check("mul", [&](Tape&, const Tensor& t) { return sum_all(mul(t, other)); }, x);
    check("div",
          [&](Tape&, const Tensor& t) {
            return sum_all(div(t, add_scalar(mul(other, other), 0.5)));
          },
          x);
    check("maximum", [&](Tape&, const Tensor& t) { return sum_all(maximum(t, other)); }, x);
    check("minimum", [&](Tape&, const Tensor& t) { return sum_all(minimum(t, other)); }, x);
    check("neg", [&](Tape&, const Tensor& t) { return sum_all(neg(t)); }, x);
    check("scalar", [&](Tape&, const Tensor& t) {
      return sum_all(add_scalar(mul_scalar(t, 2.5), -0.75));
    }, x);
    check("relu", [&](Tape&, const Tensor& t) { return sum_all(mul(relu(t), other)); }, x);
    check("leaky_relu",
          [&](Tape&, const Tensor& t) { return sum_all(mul(leaky_relu(t), other)); }, x);
    check("sigmoid", [&](Tape&, const Tensor& t) { return sum_all(mul(sigmoid(t), other)); }, x);
    check("exp", [&](Tape&, const Tensor& t) { return sum_all(hstrack::exp(t)); }, x);
    check("log",
          [&](Tape&, const Tensor& t) { return sum_all(hstrack::log(add_scalar(t, 2.0))); }, x);
    check("sqrt",
          [&](Tape&, const Tensor& t) { return sum_all(hstrack::sqrt(add_scalar(t, 2.0))); }, x);
    check("abs",
          [&](Tape&, const Tensor& t) { return sum_all(hstrack::abs(add_scalar(t, 0.1))); }, x);
    check("acos",
          [&](Tape&, const Tensor& t) { return sum_all(hstrack::acos(mul_scalar(t, 0.7))); }, x);
    check("softmax", [&](Tape&, const Tensor& t) {
      return sum_all(mul(softmax(t, 1), other));
    }, x);
    check("reshape_permute", [&](Tape&, const Tensor& t) {
      return sum_all(mul(reshape(permute(t, {2, 0, 1}), {2, 3, 4}), other));
    }, x);
    check("concat_slice", [&](Tape&, const Tensor& t) {
      Tensor c = concat({t, other}, 1);
      return sum_all(mul(slice(c, 1, 1, 3), slice(c, 1, 2, 3)));
    }, x);
    check("sum_axis", [&](Tape&, const Tensor& t) {
      return sum_all(mul(sum_axis(t, 1), slice(other, 1, 0, 1)));
    }, x);
    check("mean_axis", [&](Tape&, const Tensor& t) {
      return sum_all(mul(mean_axis(t, 2), slice(other, 2, 0, 1)));
    }, x);

    Tensor a2 = random_tensor(rng, {3, 4});
    Tensor b2 = random_tensor(rng, {4, 2});
    check("matmul_lhs",
          [&](Tape&, const Tensor& t) { return sum_all(mul(matmul(t, b2), matmul(t, b2))); },
          a2);
    check("matmul_rhs",
          [&](Tape&, const Tensor& t) { return mean_all(matmul(a2, t)); }, b2);

    Tensor a3 = random_tensor(rng, {2, 3, 4});
    Tensor b3 = random_tensor(rng, {2, 4, 2});
    check("bmm", [&](Tape&, const Tensor& t) { return sum_all(bmm(t, b3)); }, a3);
    check("bmm_rhs", [&](Tape&, const Tensor& t) { return sum_all(bmm(a3, t)); }, b3);

    Tensor img = random_tensor(rng, {2, 4, 6, 6});
    Tensor ker = random_tensor(rng, {4, 2, 3, 3});
    Tensor cb = random_tensor(rng, {4});
    check("conv2d_input", [&](Tape&, const Tensor& t) {
      return sum_all(conv2d(t, ker, &cb, 2, 1, 2));
    }, img);
    check("conv2d_kernel", [&](Tape& tp, const Tensor& t) {
      Tensor bt = tp.watch(cb);
      Tensor y = conv2d(img, t, &bt, 1, 1, 2);
      return sum_all(mul(y, y));
    }, ker);
    check("conv2d_bias", [&](Tape& tp, const Tensor& t) {
      Tensor kt = tp.watch(ker);
      return sum_all(conv2d(img, kt, &t, 1, 0, 2));
    }, cb);

    Tensor q = random_tensor(rng, {2, 3, 4});
    Tensor k = random_tensor(rng, {2, 5, 4});
    Tensor v = random_tensor(rng, {2, 5, 4});
    check("attention_q", [&](Tape&, const Tensor& t) {
      return sum_all(mul(attention(t, k, v), attention(t, k, v)));
    }, q);
    check("attention_k", [&](Tape&, const Tensor& t) {
      return sum_all(attention(q, t, v));
    }, k);
    check("attention_v", [&](Tape&, const Tensor& t) {
      return sum_all(mul(attention(q, k, t), attention(q, k, t)));
    }, v);
  }
}

TEST_CASE("batch norm and layer norm pass grad_check in both modes") {
  Rng rng(91);
  for (uint64_t seed = 0; seed < 3; ++seed) {
    Tensor x = random_tensor(rng, {3, 4, 2, 2});
    {
      Params ps;
      BatchNorm2d bn("bn", 4, ps);
      auto f = [&](Tape& t, const Tensor& xt) {
        return sum_all(mul(bn.forward(&t, xt, true), x));
      };
      CHECK(grad_check(f, x, 1e-5) <= 1e-4);
      auto fe = [&](Tape& t, const Tensor& xt) {
        return sum_all(mul(bn.forward(&t, xt, false), x));
      };
      CHECK(grad_check(fe, x, 1e-5) <= 1e-4);
    }
    {
      Params ps;
      LayerNorm ln("ln", 4, ps);
      Tensor tok = random_tensor(rng, {2, 3, 4});
      auto f = [&](Tape& t, const Tensor& xt) {
        return sum_all(mul(ln.forward(&t, xt), tok));
      };
      CHECK(grad_check(f, tok, 1e-5) <= 1e-4);
    }
  }
}

TEST_CASE("batch size 1 falls back to eval statistics in train mode") {
  Rng rng(17);
  Params ps;
  BatchNorm2d bn("bn", 3, ps);
  Tensor x = random_tensor(rng, {1, 3, 4, 4});
  Tensor train_out = bn.forward(nullptr, x, true);
  Tensor eval_out = bn.forward(nullptr, x, false);
  CHECK(bit_identical(train_out, eval_out));
}

TEST_CASE("tape rejects mixed-tape operations and non-scalar roots") {
  Tape t1, t2;
  Tensor a = t1.watch(Tensor::zeros({2}));
  Tensor b = t2.watch(Tensor::zeros({2}));
  CHECK_THROWS_AS(add(a, b), std::invalid_argument);
  Tensor c = add(a, a);
  CHECK_THROWS_AS(t1.backward(c), std::invalid_argument);
}

TEST_CASE("exp and log clamp their arguments") {
  Tensor big = Tensor::from({2}, {1e4, -1e4});
  Tensor e = hstrack::exp(big);
  CHECK(std::isfinite(e.values()[0]));
  CHECK(std::isfinite(e.values()[1]));
  Tensor tiny = Tensor::from({2}, {0.0, -5.0});
  Tensor l = hstrack::log(tiny);
  CHECK(l.values()[0] == doctest::Approx(std::log(1e-12)));
  CHECK(l.values()[1] == doctest::Approx(std::log(1e-12)));
}

TEST_CASE("AdamW applies decoupled weight decay") {
  Var v("w", Tensor::from({1}, {1.0}));
  AdamW opt({&v}, 0.1, 0.5);
  v.grad[0] = 0.0;  // pure decay step
  opt.step();
  // m=v=0 under zero gradient, so the update is only -lr * wd * w
  CHECK(v.value.values()[0] == doctest::Approx(1.0 - 0.1 * 0.5 * 1.0));
}
