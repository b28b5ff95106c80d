#include <cmath>
#include <functional>
#include <string>

#include "doctest.h"
#include "test_util.hpp"
#include "trinet/autodiff.hpp"
#include "trinet/gradcheck.hpp"

using namespace trinet;
using namespace trinet::ad;
using trinet::testing::random_tensor;

namespace {

// Keeps values at least `gap` away from zero, preserving sign.
Tensor<double> away_from_zero(Tensor<double> t, double gap) {
  for (auto& v : t.data()) v = v >= 0 ? v + gap : v - gap;
  return t;
}

// sum(op(x) * w) with a fixed random weight, so every output element matters.
ScalarFn<double> weighted(std::function<Var<double>(Var<double>)> op, std::uint64_t seed) {
  return [op, seed](Tape<double>& tape, Var<double> x) {
    Var<double> y = op(x);
    Var<double> w = tape.constant(random_tensor<double>(y.shape(), seed ^ 0x9e37u, 0.5, 1.5));
    return sum(y * w);
  };
}

}  // namespace

TEST_CASE("conv2d forward examples") {
  Tape<double> tape;
  Var<double> x = tape.constant(Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4}));
  Var<double> k = tape.constant(Tensor<double>({1, 1, 2, 2}, 1.0));
  Var<double> y = conv2d(x, k, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.value()[0] == 10.0);

  Tensor<double> img = random_tensor<double>({2, 1, 3, 5}, 4);
  Var<double> id = conv2d(tape.constant(img), tape.constant(Tensor<double>({1, 1, 1, 1}, 1.0)), 1, 0);
  CHECK(id.value() == img);
}

TEST_CASE("conv2d output extents and shape errors") {
  Tape<float> tape;
  Var<float> x = tape.constant(Tensor<float>({2, 3, 8, 16}));
  CHECK(conv2d(x, tape.constant(Tensor<float>({4, 3, 3, 3})), 2, 1).shape() == Shape{2, 4, 4, 8});
  CHECK(conv2d(x, tape.constant(Tensor<float>({4, 3, 3, 3})), 1, 1).shape() == Shape{2, 4, 8, 16});
  try {
    conv2d(x, tape.constant(Tensor<float>({4, 2, 3, 3})), 1, 1);
    FAIL("expected channel mismatch");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("channel") != std::string::npos);
  }
  CHECK_THROWS_AS(conv2d(x, tape.constant(Tensor<float>({4, 3, 11, 3})), 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(conv2d(x, tape.constant(Tensor<float>({4, 3, 3, 3})), 0, 0), std::invalid_argument);
}

TEST_CASE("upsample2x preserves constants and interpolates monotonically") {
  Tape<double> tape;
  Var<double> c = upsample2x(tape.constant(Tensor<double>({1, 2, 3, 2}, 7.0)));
  CHECK(c.shape() == Shape{1, 2, 6, 4});
  for (double v : c.value().data()) CHECK(v == doctest::Approx(7.0).epsilon(1e-15));

  Var<double> r = upsample2x(tape.constant(Tensor<double>({1, 1, 1, 2}, {0.0, 2.0})));
  // Output centres map to -0.25 (clamped), 0.25, 0.75, 1.25 (clamped).
  const Tensor<double>& v = r.value();
  const double expect[4] = {0.0, 0.5, 1.5, 2.0};
  for (int row = 0; row < 2; ++row)
    for (int x = 0; x < 4; ++x) CHECK(v.at(0, 0, row, x) == doctest::Approx(expect[x]));
}

TEST_CASE("pointwise examples") {
  Tape<double> tape;
  CHECK(sigmoid(tape.constant(Tensor<double>::scalar(0.0))).item() == 0.5);
  CHECK(mean(tape.constant(Tensor<double>({4}, {1, 2, 3, 4}))).item() == 2.5);

  Var<double> x = tape.leaf(Tensor<double>({2}, {1.0, 2.0}));
  Var<double> m = mean(x * x);
  tape.backward(m);
  const Tensor<double> g = tape.grad(x);
  CHECK(g[0] == doctest::Approx(1.0));
  CHECK(g[1] == doctest::Approx(2.0));
}

TEST_CASE("log rejects non-positive input") {
  Tape<double> tape;
  CHECK_THROWS_AS(log(tape.constant(Tensor<double>({2}, {1.0, 0.0}))), std::domain_error);
  CHECK_THROWS_AS(log(tape.constant(Tensor<double>({1}, {-3.0}))), std::domain_error);
}

TEST_CASE("non-finite results raise instead of propagating") {
  Tape<float> tape;
  CHECK_THROWS(exp(tape.constant(Tensor<float>({1}, {1000.0f}))));
  CHECK_THROWS(div(tape.constant(Tensor<float>({1}, {1.0f})), tape.constant(Tensor<float>({1}, {0.0f}))));
}

TEST_CASE("backward examples") {
  SUBCASE("sum gives ones") {
    Tape<double> tape;
    Var<double> x = tape.leaf(random_tensor<double>({2, 3, 4, 5}, 1));
    tape.backward(sum(x));
    const Tensor<double> g = tape.grad(x);
    for (double v : g.data()) CHECK(v == 1.0);
  }
  SUBCASE("mse at its minimum has zero gradient") {
    Tape<double> tape;
    Tensor<double> t = random_tensor<double>({3, 4}, 2);
    Var<double> x = tape.leaf(t);
    Var<double> y = tape.constant(t);
    tape.backward(mean(square(x - y)));
    const Tensor<double> g = tape.grad(x);
    for (double v : g.data()) CHECK(v == 0.0);
  }
  SUBCASE("unreachable leaves report zero") {
    Tape<double> tape;
    Var<double> x = tape.leaf(random_tensor<double>({3}, 3));
    Var<double> unused = tape.leaf(random_tensor<double>({2, 2}, 4));
    tape.backward(sum(x));
    const Tensor<double> g = tape.grad(unused);
    CHECK(g.shape() == Shape{2, 2});
    for (double v : g.data()) CHECK(v == 0.0);
  }
  SUBCASE("non-scalar root") {
    Tape<double> tape;
    Var<double> x = tape.leaf(random_tensor<double>({3}, 3));
    CHECK_THROWS_AS(tape.backward(x * 2.0), std::invalid_argument);
  }
}

TEST_CASE("tape replay and forward determinism") {
  auto build = [](Tape<float>& tape, Var<float>& x) {
    x = tape.leaf(random_tensor<float>({2, 3, 6, 8}, 11));
    Var<float> k = tape.constant(random_tensor<float>({4, 3, 3, 3}, 12));
    return mean(elu(conv2d(x, k, 2, 1)) * sigmoid(avg_pool2(upsample2x(avg_pool2(conv2d(x, k, 1, 1))))));
  };
  Tape<float> t1, t2;
  Var<float> x1, x2;
  Var<float> r1 = build(t1, x1);
  Var<float> r2 = build(t2, x2);
  CHECK(r1.item() == r2.item());
  t1.backward(r1);
  const Tensor<float> g_first = t1.grad(x1);
  t1.backward(r1);
  CHECK(t1.grad(x1) == g_first);
  t2.backward(r2);
  CHECK(t2.grad(x2) == g_first);
}

TEST_CASE("finite_diff_check examples") {
  ScalarFn<double> f_sum = [](Tape<double>&, Var<double> x) { return sum(x); };
  CHECK(finite_diff_check(f_sum, random_tensor<double>({2, 5}, 5), 1e-6).max_rel_error < 1e-8);

  ScalarFn<double> f_msq = [](Tape<double>&, Var<double> x) { return mean(x * x); };
  CHECK(finite_diff_check(f_msq, Tensor<double>({3}, {1, 2, 3}), 1e-5).max_rel_error < 1e-6);

  ScalarFn<double> f_clamp = [](Tape<double>&, Var<double> x) { return sum(square(clamp(x, -0.5, 0.5))); };
  CHECK(finite_diff_check(f_clamp, Tensor<double>({4}, {-0.9, -0.2, 0.3, 0.8}), 1e-6).max_rel_error < 1e-4);

  ScalarFn<double> f_bad = [](Tape<double>& tape, Var<double> x) {
    return sum(x) * tape.constant(Tensor<double>::scalar(std::numeric_limits<double>::infinity()));
  };
  CHECK_THROWS(finite_diff_check(f_bad, Tensor<double>({2}, {1.0, 2.0}), 1e-6));
  CHECK_THROWS_AS(finite_diff_check(f_sum, Tensor<double>({2}, {1.0, 2.0}), 0.0), std::invalid_argument);
}

TEST_CASE("clamp knot gradient convention") {
  Tape<double> tape;
  Var<double> x = tape.leaf(Tensor<double>({4}, {-1.0, 0.0, 1.0, 2.0}));
  tape.backward(sum(clamp(x, 0.0, 1.0)));
  const Tensor<double> g = tape.grad(x);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 1.0);
  CHECK(g[2] == 1.0);
  CHECK(g[3] == 0.0);
}

// Every primitive against central differences, 20 seeds, 64-bit.
TEST_CASE("primitive gradients match finite differences") {
  struct Case {
    const char* name;
    std::function<Var<double>(Var<double>)> op;
    Shape shape;
    std::function<Tensor<double>(std::uint64_t)> input;
  };
  auto plain = [](Shape s) {
    return [s](std::uint64_t seed) { return random_tensor<double>(s, seed); };
  };
  auto nonzero = [](Shape s) {
    return [s](std::uint64_t seed) { return away_from_zero(random_tensor<double>(s, seed), 0.1); };
  };
  const Shape img{2, 2, 4, 6};
  std::vector<Case> cases = {
      {"add", [](Var<double> x) { return x + x * 0.5; }, img, plain(img)},
      {"sub", [](Var<double> x) { return x - square(x); }, img, plain(img)},
      {"mul", [](Var<double> x) { return x * exp(x); }, img, plain(img)},
      {"div", [](Var<double> x) { return x / (square(x) + 1.0); }, img, plain(img)},
      {"scalar broadcast", [](Var<double> x) { return x * mean(x); }, img, plain(img)},
      {"abs", [](Var<double> x) { return abs(x); }, img, nonzero(img)},
      {"exp", [](Var<double> x) { return exp(x); }, img, plain(img)},
      {"log", [](Var<double> x) { return log(square(x)); }, img, nonzero(img)},
      {"sigmoid", [](Var<double> x) { return sigmoid(x * 3.0); }, img, plain(img)},
      {"elu", [](Var<double> x) { return elu(x); }, img, nonzero(img)},
      {"clamp", [](Var<double> x) { return clamp(x, -0.55, 0.55); }, img,
       [img](std::uint64_t seed) {
         Tensor<double> t = random_tensor<double>(img, seed);
         for (auto& v : t.data())
           if (std::abs(std::abs(v) - 0.55) < 0.02) v *= 0.5;
         return t;
       }},
      {"mean", [](Var<double> x) { return mean(square(x)) * x; }, img, plain(img)},
      {"box_mean3", [](Var<double> x) { return box_mean3(x); }, img, plain(img)},
      {"upsample2x", [](Var<double> x) { return upsample2x(x); }, img, plain(img)},
      {"avg_pool2", [](Var<double> x) { return avg_pool2(x); }, img, plain(img)},
      {"channel_mean", [](Var<double> x) { return channel_mean(x); }, img, plain(img)},
      {"diff_x", [](Var<double> x) { return diff_x(x); }, img, plain(img)},
      {"diff_y", [](Var<double> x) { return diff_y(x); }, img, plain(img)},
      {"flip_x", [](Var<double> x) { return flip_x(x) * x; }, img, plain(img)},
      {"concat/slice",
       [](Var<double> x) { return slice_channels(concat_channels<double>({x, square(x)}), 1, 2); },
       img, plain(img)},
      {"conv2d input",
       [](Var<double> x) {
         Var<double> k = x.tape()->constant(random_tensor<double>({3, 2, 3, 3}, 77));
         return conv2d(x, k, 2, 1);
       },
       img, plain(img)},
      {"conv2d kernel",
       [](Var<double> k) {
         Var<double> x = k.tape()->constant(random_tensor<double>({2, 2, 5, 7}, 78));
         return conv2d(x, k, 1, 1);
       },
       Shape{3, 2, 3, 3}, plain(Shape{3, 2, 3, 3})},
      {"channel bias",
       [](Var<double> b) {
         Var<double> x = b.tape()->constant(random_tensor<double>({2, 3, 2, 2}, 79));
         return add_channel_bias(x, b) * x;
       },
       Shape{3}, plain(Shape{3})},
  };
  for (const auto& c : cases) {
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const auto r = finite_diff_check<double>(weighted(c.op, seed), c.input(seed), 1e-6);
      worst = std::max(worst, r.max_rel_error);
    }
    INFO(c.name << " worst rel err " << worst);
    CHECK(worst < 1e-4);
  }
}
