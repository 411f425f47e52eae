#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "hedge/errors.hpp"
#include "hedge/graph.hpp"
#include "hedge/rng.hpp"

using namespace hedge;

namespace {

Array make(std::vector<int64_t> shape, std::vector<double> vals) {
  Array a(shape);
  REQUIRE(a.data.size() == vals.size());
  a.data = std::move(vals);
  return a;
}

}  // namespace

TEST_SUITE_BEGIN("graph");

TEST_CASE("leaf passes through forward unchanged") {
  Graph g;
  const int x = g.input("x", {2, 2});
  g.set_leaf("x", make({2, 2}, {1.0, -2.0, 3.5, 0.0}));
  g.forward();
  CHECK(g.value(x).data == std::vector<double>{1.0, -2.0, 3.5, 0.0});
}

TEST_CASE("pointwise hand values") {
  Graph g;
  const int x = g.input("x", {3});
  const int sig = g.sigmoid(x);
  const int sp = g.softplus(x);
  const int rl = g.relu(x);
  const int sq = g.square(x);
  g.set_leaf("x", make({3}, {0.0, 1.0, -2.0}));
  g.forward();
  CHECK(g.value(sig).data[0] == 0.5);
  CHECK(g.value(sig).data[1] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-14));
  CHECK(g.value(sp).data[0] == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(g.value(rl).data == std::vector<double>{0.0, 1.0, 0.0});
  CHECK(g.value(sq).data == std::vector<double>{0.0, 1.0, 4.0});
}

TEST_CASE("d(x*x)/dx at 3 is 6") {
  Graph g;
  const int x = g.input("x", {1});
  const int y = g.sum_all(g.mul(x, x));
  g.set_leaf("x", make({1}, {3.0}));
  g.forward();
  CHECK(g.value(y).data[0] == 9.0);
  g.backward(y);
  CHECK(g.grad(x).data[0] == 6.0);
}

TEST_CASE("affine equals a hand matrix product") {
  Graph g;
  const int x = g.input("x", {2, 3});
  const int w = g.param("w", {3, 2});
  const int b = g.param("b", {2});
  const int y = g.affine(x, w, b);
  g.set_leaf("x", make({2, 3}, {1, 2, 3, 4, 5, 6}));
  g.set_leaf("w", make({3, 2}, {0.5, -1, 2, 0.25, -0.5, 3}));
  g.set_leaf("b", make({2}, {10, -10}));
  g.forward();
  // row 0: [1 2 3] . cols -> (0.5+4-1.5, -1+0.5+9) + b
  const std::vector<double> want = {13.0, -1.5, 19.0, 5.25};
  REQUIRE(g.value(y).shape == std::vector<int64_t>{2, 2});
  for (int i = 0; i < 4; ++i)
    CHECK(g.value(y).data[i] == doctest::Approx(want[i]).epsilon(1e-9));
}

TEST_CASE("conv2d hand example, valid padding") {
  Graph g;
  const int x = g.input("x", {1, 1, 3, 3});
  const int k = g.param("k", {1, 1, 2, 2});
  const int b = g.param("b", {1});
  const int y = g.conv2d(x, k, b);
  g.set_leaf("x", make({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
  g.set_leaf("k", make({1, 1, 2, 2}, {1, 0, 0, -1}));
  g.set_leaf("b", make({1}, {0.5}));
  g.forward();
  REQUIRE(g.value(y).shape == std::vector<int64_t>{1, 1, 2, 2});
  // each output: top-left - bottom-right + 0.5
  CHECK(g.value(y).data == std::vector<double>{-3.5, -3.5, -3.5, -3.5});
}

TEST_CASE("broadcast add sums gradients over the broadcast axis") {
  Graph g;
  const int x = g.input("x", {2, 3});
  const int b = g.param("b", {3});
  const int y = g.sum_all(g.add(x, b));
  g.set_leaf("x", make({2, 3}, {1, 2, 3, 4, 5, 6}));
  g.set_leaf("b", make({3}, {10, 20, 30}));
  g.forward();
  CHECK(g.value(y).data[0] == 141.0);  // sum(x) + 2 * sum(b)
  g.backward(y);
  CHECK(g.grad(b).data == std::vector<double>{2.0, 2.0, 2.0});
  CHECK(g.grad(x).data == std::vector<double>(6, 1.0));
}

TEST_CASE("max_pool2 breaks ties toward the first maximum") {
  Graph g;
  const int x = g.input("x", {1, 1, 2, 2});
  const int y = g.sum_all(g.max_pool2(x));
  g.set_leaf("x", make({1, 1, 2, 2}, {7.0, 7.0, 3.0, 7.0}));
  g.forward();
  CHECK(g.value(y).data[0] == 7.0);
  g.backward(y);
  CHECK(g.grad(x).data == std::vector<double>{1.0, 0.0, 0.0, 0.0});
}

TEST_CASE("reparameterize treats the noise as a constant") {
  Graph g;
  const int mu = g.param("mu", {1, 1, 2});
  const int sg = g.param("sg", {1, 1, 2});
  const int eps = g.input("eps", {1, 3, 2});
  const int z = g.reparameterize(mu, sg, eps);
  const int y = g.sum_all(z);
  g.set_leaf("mu", make({1, 1, 2}, {1.0, -1.0}));
  g.set_leaf("sg", make({1, 1, 2}, {0.5, 2.0}));
  g.set_leaf("eps", make({1, 3, 2}, {1, 1, -1, 2, 0, 0.5}));
  g.forward();
  // z = mu + sg*eps broadcast over the draw axis
  CHECK(g.value(z).data[0] == 1.5);
  CHECK(g.value(z).data[3] == 3.0);
  g.backward(y);
  CHECK(g.grad(mu).data == std::vector<double>{3.0, 3.0});
  CHECK(g.grad(sg).data == std::vector<double>{0.0, 3.5});
  CHECK(g.grad(eps).data == std::vector<double>(6, 0.0));
}

TEST_CASE("clamp gradient is zero outside the open interval") {
  Graph g;
  const int x = g.input("x", {4});
  const int y = g.sum_all(g.clamp(x, -1.0, 1.0));
  g.set_leaf("x", make({4}, {-2.0, -0.5, 0.5, 3.0}));
  g.forward();
  CHECK(g.value(y).data[0] == doctest::Approx(-1.0 - 0.5 + 0.5 + 1.0));
  g.backward(y);
  CHECK(g.grad(x).data == std::vector<double>{0.0, 1.0, 1.0, 0.0});
}

TEST_CASE("logsumexp is shift-stable") {
  Graph g;
  const int x = g.input("x", {1, 2});
  const int y = g.logsumexp(x, 1);
  g.set_leaf("x", make({1, 2}, {1000.0, 1001.0}));
  g.forward();
  CHECK(g.value(y).data[0] ==
        doctest::Approx(1001.0 + std::log1p(std::exp(-1.0))).epsilon(1e-14));
}

TEST_CASE("reductions over chosen axes") {
  Graph g;
  const int x = g.input("x", {2, 3});
  const int s0 = g.sum_axes(x, {0});
  const int m1 = g.mean_axes(x, {1});
  const int sa = g.sum_all(x);
  const int ma = g.mean_all(x);
  g.set_leaf("x", make({2, 3}, {1, 2, 3, 4, 5, 6}));
  g.forward();
  CHECK(g.value(s0).shape == std::vector<int64_t>{3});
  CHECK(g.value(s0).data == std::vector<double>{5, 7, 9});
  CHECK(g.value(m1).shape == std::vector<int64_t>{2});
  CHECK(g.value(m1).data == std::vector<double>{2, 5});
  CHECK(g.value(sa).data[0] == 21);
  CHECK(g.value(ma).data[0] == 3.5);
}

TEST_CASE("slice and concat invert each other") {
  Graph g;
  const int x = g.input("x", {2, 4});
  const int left = g.slice(x, 1, 0, 1);
  const int right = g.slice(x, 1, 1, 4);
  const int back = g.concat({left, right}, 1);
  g.set_leaf("x", make({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8}));
  g.forward();
  CHECK(g.value(left).shape == std::vector<int64_t>{2, 1});
  CHECK(g.value(back).data == g.value(x).data);

  const int y = g.sum_all(g.mul(back, back));
  g.forward();
  g.backward(y);
  for (int i = 0; i < 8; ++i) CHECK(g.grad(x).data[i] == 2.0 * (i + 1));
}

TEST_CASE("finite differences agree on a small composite") {
  Graph g;
  const int x = g.input("x", {2, 3});
  const int w = g.param("w", {3, 2});
  const int b = g.param("b", {2});
  const int y = g.mean_all(g.sigmoid(g.affine(x, w, b)));
  Rng rng(77);
  for (const char* name : {"x", "w", "b"}) {
    Array& leaf = g.leaf(g.leaf_id(name));
    for (double& v : leaf.data) v = rng.uniform(-1.0, 1.0);
  }
  for (const char* name : {"x", "w", "b"}) {
    const FdReport rep =
        g.finite_difference_check(y, g.leaf_id(name), 1e-5, 1e-6);
    CHECK(rep.pass);
  }
}

TEST_CASE("finite differences flag a kink (negative control)") {
  // relu at exactly zero: the numeric slope is 0.5, the analytic pick is a
  // subgradient, so the check must fail rather than paper over it.
  Graph g;
  const int x = g.input("x", {1});
  const int y = g.sum_all(g.relu(x));
  g.set_leaf("x", make({1}, {0.0}));
  const FdReport rep = g.finite_difference_check(y, x, 1e-5, 1e-3);
  CHECK(!rep.pass);
  CHECK(rep.max_rel_err > 0.1);
}

TEST_CASE("error surfaces") {
  Graph g;
  const int x = g.input("x", {2});
  const int y = g.sum_all(g.exp_(x));
  const int v = g.relu(x);

  SUBCASE("backward before forward") {
    CHECK_THROWS_AS(g.backward(y), ForwardNotRun);
  }
  SUBCASE("backward needs a scalar") {
    g.set_leaf("x", make({2}, {0.0, 0.0}));
    g.forward();
    CHECK_THROWS_AS(g.backward(v), NotScalarOutput);
  }
  SUBCASE("leaf shape is pinned") {
    CHECK_THROWS_AS(g.set_leaf("x", make({3}, {1, 2, 3})), ShapeMismatch);
    CHECK_THROWS_AS(g.leaf_id("nope"), Error);
  }
  SUBCASE("duplicate leaf names rejected") {
    CHECK_THROWS_AS(g.input("x", {2}), Error);
  }
  SUBCASE("finite check raises only when armed") {
    g.set_leaf("x", make({2}, {1.0, 710.0}));  // exp(710) overflows
    CHECK_NOTHROW(g.forward());
    g.set_check_finite(true);
    CHECK_THROWS_AS(g.forward(), NonFiniteValue);
  }
}

TEST_CASE("incompatible shapes refuse to build") {
  Graph g;
  const int a = g.input("a", {2, 3});
  const int b = g.input("b", {2});
  CHECK_THROWS_AS(g.add(a, b), ShapeMismatch);
  CHECK_THROWS_AS(g.reshape(a, {4, 2}), ShapeMismatch);
  CHECK_THROWS_AS(g.max_pool2(g.input("c", {1, 1, 3, 4})), ShapeMismatch);
}

TEST_CASE("broadcast_shapes follows the trailing rule") {
  CHECK(broadcast_shapes({2, 3}, {3}) == std::vector<int64_t>{2, 3});
  CHECK(broadcast_shapes({4, 1, 5}, {2, 5}) == std::vector<int64_t>{4, 2, 5});
  CHECK(broadcast_shapes({3}, {1}) == std::vector<int64_t>{3});
  CHECK_THROWS_AS(broadcast_shapes({2, 3}, {4}), ShapeMismatch);
}

TEST_SUITE_END();
