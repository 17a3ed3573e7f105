#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "fairsearch/grad_check.hpp"
#include "fairsearch/ops.hpp"

using namespace fairsearch;

namespace {

// Direct 7-loop convolution, independent of the library's tap-range logic.
Tensor naive_conv(const Tensor& x, const Tensor& w, std::size_t s, std::size_t p, std::size_t d,
                  std::size_t groups) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), Cg = w.dim(1), KH = w.dim(2), KW = w.dim(3);
  const std::size_t OH = (H + 2 * p - d * (KH - 1) - 1) / s + 1;
  const std::size_t OW = (W + 2 * p - d * (KW - 1) - 1) / s + 1;
  Tensor out(Shape{N, O, OH, OW});
  const std::size_t opg = O / groups;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t oh = 0; oh < OH; ++oh)
        for (std::size_t ow = 0; ow < OW; ++ow) {
          double acc = 0.0;
          const std::size_t g = o / opg;
          for (std::size_t ic = 0; ic < Cg; ++ic)
            for (std::size_t kh = 0; kh < KH; ++kh)
              for (std::size_t kw = 0; kw < KW; ++kw) {
                const long ih = static_cast<long>(oh * s + kh * d) - static_cast<long>(p);
                const long iw = static_cast<long>(ow * s + kw * d) - static_cast<long>(p);
                if (ih < 0 || iw < 0 || ih >= static_cast<long>(H) || iw >= static_cast<long>(W)) continue;
                acc += w.at({o, ic, kh, kw}) *
                       x.at({n, g * Cg + ic, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw)});
              }
          out.at({n, o, oh, ow}) = acc;
        }
  return out;
}

Tensor iota_image() {
  Tensor x(Shape{1, 1, 3, 3});
  for (std::size_t i = 0; i < 9; ++i) x[i] = static_cast<double>(i + 1);
  return x;
}

}  // namespace

TEST_CASE("conv2d identity kernel returns the input") {
  Tape t;
  Tensor x = random_tensor({1, 1, 3, 3}, 7);
  Var y = conv2d(t.constant(x), t.constant(Tensor(Shape{1, 1, 1, 1}, 1.0)));
  CHECK(y.value() == x);
}

TEST_CASE("conv2d all-ones 3x3 with padding 1") {
  Tape t;
  const Tensor x(Shape{1, 1, 3, 3}, 1.0);
  const Tensor w(Shape{1, 1, 3, 3}, 1.0);
  Var y = conv2d(t.constant(x), t.constant(w), {1, 1, 1, 1});
  const Tensor oracle = naive_conv(x, w, 1, 1, 1, 1);
  CHECK(y.value() == oracle);
  CHECK(y.value().at({0, 0, 1, 1}) == 9.0);
  CHECK(y.value().at({0, 0, 0, 0}) == 4.0);
  CHECK(y.value().at({0, 0, 2, 2}) == 4.0);
}

TEST_CASE("conv2d dilation 2 covers the dilated 5x5 footprint") {
  Tape t;
  const Tensor x = random_tensor({1, 1, 5, 5}, 11);
  const Tensor w = random_tensor({1, 1, 3, 3}, 12);
  Var y = conv2d(t.constant(x), t.constant(w), {1, 0, 2, 1});
  REQUIRE(y.shape() == Shape{1, 1, 1, 1});
  double dot = 0.0;
  for (std::size_t kh = 0; kh < 3; ++kh)
    for (std::size_t kw = 0; kw < 3; ++kw) dot += w.at({0, 0, kh, kw}) * x.at({0, 0, 2 * kh, 2 * kw});
  CHECK(y.value()[0] == doctest::Approx(dot).epsilon(1e-14));
}

TEST_CASE("conv2d matches the brute-force oracle across strides, groups and dilations") {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t groups = std::uniform_int_distribution<std::size_t>(1, 2)(rng);
    const std::size_t cin = groups * std::uniform_int_distribution<std::size_t>(1, 2)(rng);
    const std::size_t cout = groups * std::uniform_int_distribution<std::size_t>(1, 2)(rng);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
    const std::size_t s = std::uniform_int_distribution<std::size_t>(1, 2)(rng);
    const std::size_t d = std::uniform_int_distribution<std::size_t>(1, 2)(rng);
    const std::size_t p = std::uniform_int_distribution<std::size_t>(0, 2)(rng);
    const std::size_t h = 6 + std::uniform_int_distribution<std::size_t>(0, 3)(rng);
    const Tensor x = random_tensor({2, cin, h, h + 1}, 100 + trial);
    const Tensor w = random_tensor({cout, cin / groups, k, k}, 200 + trial);
    Tape t;
    Var y = conv2d(t.constant(x), t.constant(w), {s, p, d, groups});
    CHECK(max_abs_diff(y.value(), naive_conv(x, w, s, p, d, groups)) < 1e-12);
  }
}

TEST_CASE("conv2d shape errors name the dimension") {
  Tape t;
  Var x = t.constant(Tensor(Shape{1, 3, 4, 4}));
  CHECK_THROWS_WITH_AS(conv2d(x, t.constant(Tensor(Shape{2, 2, 1, 1}))),
                       doctest::Contains("weight dim 1"), ShapeError);
  CHECK_THROWS_WITH_AS(conv2d(x, t.constant(Tensor(Shape{3, 1, 1, 1})), {1, 0, 1, 2}),
                       doctest::Contains("dim 1"), ShapeError);
  CHECK_THROWS_WITH_AS(conv2d(x, t.constant(Tensor(Shape{1, 3, 5, 5}))),
                       doctest::Contains("height"), ShapeError);
}

TEST_CASE("pool2d forward values") {
  Tape t;
  SUBCASE("constant field stays constant under avg pooling") {
    Var y = pool2d(t.constant(Tensor(Shape{2, 3, 4, 4}, 2.5)), PoolKind::avg, 3, 1, 0);
    for (double v : y.value().data()) CHECK(v == doctest::Approx(2.5).epsilon(1e-15));
  }
  SUBCASE("global max of 1..9") {
    Var y = pool2d(t.constant(iota_image()), PoolKind::max, 3, 1, 0);
    REQUIRE(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.value()[0] == 9.0);
  }
  SUBCASE("avg with padding divides by the full window") {
    Var y = pool2d(t.constant(iota_image()), PoolKind::avg, 3, 1, 1);
    // Brute-force window sums over the zero-padded 5x5 field, divisor 9.
    Tensor padded(Shape{5, 5});
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 3; ++c) padded.at({r + 1, c + 1}) = iota_image().at({0, 0, r, c});
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 3; ++c) {
        double s = 0.0;
        for (std::size_t dr = 0; dr < 3; ++dr)
          for (std::size_t dc = 0; dc < 3; ++dc) s += padded.at({r + dr, c + dc});
        CHECK(y.value().at({0, 0, r, c}) == doctest::Approx(s / 9.0).epsilon(1e-15));
      }
    CHECK(y.value().at({0, 0, 1, 1}) == doctest::Approx(5.0));
    CHECK(y.value().at({0, 0, 0, 0}) == doctest::Approx(12.0 / 9.0));
  }
  SUBCASE("invalid window or stride is rejected") {
    Var x = t.constant(iota_image());
    CHECK_THROWS_AS(pool2d(x, PoolKind::max, 0, 1, 0), std::invalid_argument);
    CHECK_THROWS_AS(pool2d(x, PoolKind::max, 3, 0, 0), std::invalid_argument);
    CHECK_THROWS_AS(pool2d(x, PoolKind::avg, 3, 1, 2), std::invalid_argument);
  }
}

TEST_CASE("max pool routes the gradient to the first maximum on ties") {
  Tape t;
  Var x = t.leaf(Tensor(Shape{1, 1, 3, 3}, 1.0), true);
  t.backward(sum(pool2d(x, PoolKind::max, 3, 1, 0)));
  const Tensor& g = t.grad(x);
  CHECK(g[0] == 1.0);
  for (std::size_t i = 1; i < 9; ++i) CHECK(g[i] == 0.0);
}

TEST_CASE("avg pool spreads 1/9 per window cell") {
  Tape t;
  Var x = t.leaf(iota_image(), true);
  t.backward(sum(pool2d(x, PoolKind::avg, 3, 1, 0)));
  for (double v : t.grad(x).data()) CHECK(v == doctest::Approx(1.0 / 9.0).epsilon(1e-15));
}

TEST_CASE("batch_norm2d fixed points and statistics") {
  Tape t;
  SUBCASE("zero-mean unit-variance input is a fixed point") {
    Tensor x(Shape{2, 1, 1, 2}, std::vector<double>{1.0, -1.0, -1.0, 1.0});
    Var y = batch_norm2d(t.constant(x), t.constant(Tensor(Shape{1}, 1.0)),
                         t.constant(Tensor(Shape{1}, 0.0)), 1e-5);
    CHECK(max_abs_diff(y.value(), x) < 1e-5);
  }
  SUBCASE("gamma = 0 gives beta everywhere") {
    Tensor beta(Shape{3}, std::vector<double>{0.5, -2.0, 7.0});
    Var y = batch_norm2d(t.constant(random_tensor({4, 3, 2, 2}, 3)),
                         t.constant(Tensor(Shape{3}, 0.0)), t.constant(beta));
    for (std::size_t i = 0; i < y.value().size(); ++i) {
      CHECK(y.value()[i] == beta[(i / 4) % 3]);
    }
  }
  SUBCASE("per-channel output mean vanishes") {
    Tensor x = random_tensor({5, 2, 3, 3}, 9, -4.0, 10.0);
    Var y = batch_norm2d(t.constant(x), t.constant(Tensor(Shape{2}, 1.0)),
                         t.constant(Tensor(Shape{2}, 0.0)));
    for (std::size_t c = 0; c < 2; ++c) {
      double m = 0.0;
      for (std::size_t n = 0; n < 5; ++n)
        for (std::size_t k = 0; k < 9; ++k) m += y.value()[(n * 2 + c) * 9 + k];
      CHECK(std::abs(m / 45.0) <= 1e-10);
    }
  }
  SUBCASE("single-element statistics are rejected") {
    CHECK_THROWS_AS(batch_norm2d(t.constant(Tensor(Shape{1, 1, 1, 1})), t.constant(Tensor(Shape{1}, 1.0)),
                                 t.constant(Tensor(Shape{1}))),
                    ShapeError);
  }
}

TEST_CASE("linear forward") {
  Tape t;
  const Tensor x = random_tensor({3, 4}, 21);
  SUBCASE("identity weight, zero bias") {
    Tensor eye(Shape{4, 4});
    for (std::size_t i = 0; i < 4; ++i) eye.at({i, i}) = 1.0;
    Var y = linear(t.constant(x), t.constant(eye), t.constant(Tensor(Shape{4})));
    CHECK(y.value() == x);
  }
  SUBCASE("zero input gives bias rows") {
    const Tensor b = random_tensor({2}, 22);
    Var y = linear(t.constant(Tensor(Shape{3, 4})), t.constant(random_tensor({4, 2}, 23)), t.constant(b));
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t k = 0; k < 2; ++k) CHECK(y.value().at({n, k}) == b[k]);
  }
  SUBCASE("naive triple loop") {
    const Tensor w = random_tensor({4, 2}, 24);
    Var y = linear(t.constant(x), t.constant(w));
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t k = 0; k < 2; ++k) {
        double acc = 0.0;
        for (std::size_t d = 0; d < 4; ++d) acc += x.at({n, d}) * w.at({d, k});
        CHECK(y.value().at({n, k}) == doctest::Approx(acc).epsilon(1e-15));
      }
  }
  SUBCASE("inner dimension mismatch") {
    CHECK_THROWS_WITH_AS(linear(t.constant(x), t.constant(Tensor(Shape{3, 2}))),
                         doctest::Contains("weight dim 0"), ShapeError);
  }
}

TEST_CASE("activations") {
  Tape t;
  Var s = softmax(t.constant(Tensor(Shape{3}, 0.0)));
  for (double v : s.value().data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(sigmoid(t.constant(Tensor::scalar(0.0))).value()[0] == 0.5);
  Var r = relu(t.constant(Tensor(Shape{3}, std::vector<double>{-1.0, 0.0, 2.0})));
  CHECK(r.value() == Tensor(Shape{3}, std::vector<double>{0.0, 0.0, 2.0}));

  // Extreme logits stay finite.
  Var big = softmax(t.constant(Tensor(Shape{2}, std::vector<double>{1000.0, -1000.0})));
  CHECK(big.value().all_finite());
  CHECK(sigmoid(t.constant(Tensor::scalar(-800.0))).value().all_finite());
}

TEST_CASE("softmax rows sum to one and ignore constant shifts") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Tape t;
    const Tensor x = random_tensor({4, 8}, seed, -30.0, 30.0);
    Tensor shifted = x;
    const double c = (static_cast<double>(seed) - 25.0) * 3.7;
    for (auto& v : shifted.data()) v += c;
    Var a = softmax(t.constant(x));
    Var b = softmax(t.constant(shifted));
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < 8; ++k) s += a.value()[r * 8 + k];
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
    CHECK(max_abs_diff(a.value(), b.value()) <= 1e-12);
  }
}

TEST_CASE("backward closed forms") {
  SUBCASE("sum of squares") {
    Tape t;
    const Tensor x0 = random_tensor({5}, 31);
    Var x = t.leaf(x0, true);
    t.backward(sum(mul(x, x)));
    for (std::size_t i = 0; i < 5; ++i) CHECK(t.grad(x)[i] == doctest::Approx(2.0 * x0[i]).epsilon(1e-15));
  }
  SUBCASE("linear map gives column sums") {
    Tape t;
    const Tensor A = random_tensor({3, 4}, 32);
    Var x = t.leaf(random_tensor({4, 1}, 33), true);
    t.backward(sum(linear(t.constant(A), x)));
    for (std::size_t j = 0; j < 4; ++j) {
      const double col = A.at({0, j}) + A.at({1, j}) + A.at({2, j});
      CHECK(t.grad(x)[j] == doctest::Approx(col).epsilon(1e-15));
    }
  }
  SUBCASE("non-scalar root is rejected") {
    Tape t;
    Var x = t.leaf(Tensor(Shape{2}), true);
    CHECK_THROWS_AS(t.backward(scale(x, 2.0)), ShapeError);
  }
  SUBCASE("leaves without requires_grad get zero gradients") {
    Tape t;
    Var a = t.leaf(Tensor(Shape{2}, 1.0), false);
    Var b = t.leaf(Tensor(Shape{2}, 3.0), true);
    t.backward(sum(mul(a, b)));
    CHECK(t.grad(a) == Tensor(Shape{2}));
    CHECK(t.grad(b) == Tensor(Shape{2}, 1.0));
  }
}

TEST_CASE("a tensor consumed twice accumulates both adjoints") {
  const Tensor x0 = random_tensor({2, 3}, 41);
  auto g = [](Var v) { return sum(mul(sigmoid(v), v)); };
  Tape once, twice;
  Var a = once.leaf(x0, true);
  once.backward(g(a));
  Var b = twice.leaf(x0, true);
  twice.backward(add(g(b), g(b)));
  for (std::size_t i = 0; i < x0.size(); ++i) CHECK(twice.grad(b)[i] == doctest::Approx(2.0 * once.grad(a)[i]).epsilon(1e-14));
}

TEST_CASE("backward visits the tape in reverse order") {
  Tape t;
  Var x = t.leaf(Tensor::scalar(3.0), true);
  std::vector<int> order;
  Var y = t.record(Tensor::scalar(6.0), {x}, [&](const BackwardContext& c) {
    order.push_back(1);
    (*c.input_grad(0))[0] += 2.0 * c.out_grad()[0];
  });
  Var z = t.record(Tensor::scalar(12.0), {y}, [&](const BackwardContext& c) {
    order.push_back(2);
    (*c.input_grad(0))[0] += 2.0 * c.out_grad()[0];
  });
  t.backward(z);
  CHECK(order == std::vector<int>{2, 1});
  CHECK(t.grad(x)[0] == 4.0);
}

TEST_CASE("grad_check closed-form and constant programs") {
  const Tensor x = random_tensor({6}, 51);
  CHECK(grad_check([](Tape&, Var v) { return sum(mul(v, v)); }, x, 1e-5) <= 1e-8);
  CHECK(grad_check([](Tape& t, Var v) { return sum(mul(v, t.constant(Tensor(Shape{6})))); }, x, 1e-5) == 0.0);
}

TEST_CASE("every primitive agrees with central differences (3 seeds)") {
  const auto results = run_grad_checks(primitive_grad_cases(), 3, 1e-4, 1e-5);
  for (const auto& r : results) {
    INFO(r.name << " max_rel_err=" << r.max_rel_error);
    CHECK(r.passed);
  }
}

TEST_CASE("a corrupted backward rule is reported by name") {
  auto cases = primitive_grad_cases();
  cases.push_back({"broken_square", [](std::uint64_t seed) -> std::pair<TensorProgram, Tensor> {
                     return {[](Tape& t, Var v) {
                               Tensor out = v.value();
                               for (auto& e : out.data()) e = e * e;
                               Var sq = t.record(std::move(out), {v}, [](const BackwardContext& c) {
                                 // Deliberately wrong: drops the factor 2.
                                 for (std::size_t i = 0; i < c.input(0).size(); ++i) {
                                   (*c.input_grad(0))[i] += c.input(0)[i] * c.out_grad()[i];
                                 }
                               });
                               return sum(sq);
                             },
                             random_tensor({4}, seed, 1.0, 2.0)};
                   }});
  const auto results = run_grad_checks(cases, 1, 1e-4);
  std::ostringstream os;
  CHECK_FALSE(print_grad_report(os, results));
  CHECK(os.str().find("FAIL broken_square") != std::string::npos);
}

TEST_CASE("forward passes are bit-identical on identical inputs") {
  const Tensor x = random_tensor({2, 3, 6, 6}, 61);
  const Tensor w = random_tensor({3, 1, 3, 3}, 62);
  auto run = [&] {
    Tape t;
    Var y = conv2d(t.constant(x), t.constant(w), {1, 2, 2, 3});
    y = batch_norm2d(y, t.constant(Tensor(Shape{3}, 1.0)), t.constant(Tensor(Shape{3})));
    return pool2d(relu(y), PoolKind::avg, 3, 2, 1).value();
  };
  CHECK(run() == run());
}
