#include <doctest.h>

#include <cmath>

#include "grad_check.hpp"
#include "qadv/autodiff.hpp"
#include "qadv/error.hpp"
#include "qadv/ops.hpp"

using namespace qadv;
using qadv::testing::max_relative_error;
using qadv::testing::random_tensor;
using qadv::testing::spaced_tensor;

namespace {

// Random projection r . op(inputs), evaluated in double from float outputs.
struct PrimitiveCase {
  OpKind kind;
  std::vector<Tensor> inputs;
  OpParams params;
};

double projected(const PrimitiveCase& c, const std::vector<Tensor>& inputs, const Tensor& r) {
  const Tensor out = forward_primitive(c.kind, inputs, c.params);
  return dot(out, r);
}

double check_primitive(const PrimitiveCase& c, Rng& rng) {
  const Tensor out = forward_primitive(c.kind, c.inputs, c.params);
  const Tensor r = random_tensor(rng, out.shape(), 0.0);

  Tape tape;
  std::vector<Var> leaves;
  for (const auto& t : c.inputs) leaves.push_back(tape.leaf(t));
  Var y;
  switch (leaves.size()) {
    case 1: y = tape.apply(c.kind, {leaves[0]}, c.params); break;
    case 2: y = tape.apply(c.kind, {leaves[0], leaves[1]}, c.params); break;
    default: y = tape.apply(c.kind, {leaves[0], leaves[1], leaves[2]}, c.params); break;
  }
  const std::pair<Var, Tensor> seed{y, r};
  const Gradients g = backward(tape, std::span(&seed, 1));

  double worst = 0.0;
  for (std::size_t k = 0; k < c.inputs.size(); ++k) {
    auto f = [&](const Tensor& probe) {
      auto ins = c.inputs;
      ins[k] = probe;
      return projected(c, ins, r);
    };
    const Tensor fd = finite_difference_gradient(f, c.inputs[k], 1e-3);
    worst = std::max(worst, max_relative_error(g[leaves[k]], fd));
  }
  return worst;
}

}  // namespace

TEST_CASE("forward primitives: trivial identities") {
  SUBCASE("1x1 identity conv leaves the input unchanged") {
    Rng rng(1);
    const Tensor x = random_tensor(rng, {3, 4, 5});
    Tensor k({3, 3, 1, 1});
    for (std::size_t c = 0; c < 3; ++c) k[c * 3 + c] = 1.0f;
    const Tensor y = ops::conv2d(x, k, Tensor({3}), 1, 0);
    CHECK(y == x);
  }
  SUBCASE("softmax of zeros is uniform") {
    const Tensor y = ops::softmax(Tensor::vector({0.0f, 0.0f}));
    CHECK(y[0] == doctest::Approx(0.5));
    CHECK(y[1] == doctest::Approx(0.5));
  }
  SUBCASE("identity dense") {
    const Tensor w({2, 2}, {1, 0, 0, 1});
    const Tensor y = ops::dense(Tensor::vector({1, 2}), w, Tensor({2}));
    CHECK(y == Tensor::vector({1, 2}));
  }
  SUBCASE("output shapes follow convolution arithmetic") {
    const Tensor y = ops::conv2d(Tensor({2, 9, 9}), Tensor({4, 2, 3, 3}), Tensor({4}), 2, 1);
    CHECK(y.shape() == Shape{4, 5, 5});
    CHECK(ops::max_pool(Tensor({2, 9, 9}), 2, 2).shape() == Shape{2, 4, 4});
  }
}

TEST_CASE("forward primitives: errors") {
  const Tensor x({3});
  const Tensor bad_w({2, 4});
  const std::vector<Tensor> ins{x, bad_w, Tensor({2})};
  CHECK_THROWS_AS(forward_primitive(OpKind::Dense, ins), InvalidArgument);
  Tensor nan_in = Tensor::vector({1.0f, std::nanf("")});
  const std::vector<Tensor> one{nan_in};
  CHECK_THROWS_AS(forward_primitive(OpKind::Relu, one), NumericDomainError);
}

TEST_CASE("softmax rows are non-negative and sum to one") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x({4, 6});
    for (auto& v : x.data()) v = float(rng.uniform(-30, 30));
    const Tensor p = ops::softmax(x);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t i = 0; i < 6; ++i) {
        CHECK(p[r * 6 + i] >= 0.0f);
        s += p[r * 6 + i];
      }
      CHECK(std::abs(s - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("forward is bit-deterministic") {
  Rng rng(3);
  const std::vector<Tensor> ins{random_tensor(rng, {2, 6, 6}), random_tensor(rng, {3, 2, 3, 3}),
                                random_tensor(rng, {3})};
  OpParams p;
  p.padding = 1;
  CHECK(forward_primitive(OpKind::Conv2d, ins, p) == forward_primitive(OpKind::Conv2d, ins, p));
}

TEST_CASE("backward: calculus examples") {
  SUBCASE("d/dx x^2 at 1 is 2") {
    Tape t;
    const Var x = t.leaf(Tensor::scalar(1.0f), "x");
    const Var y = t.sum(t.mul(x, x));
    const auto g = backward(t, y);
    CHECK(g["x"][0] == doctest::Approx(2.0));
    CHECK(g[y][0] == 1.0f);
  }
  SUBCASE("dead relu has zero gradient") {
    Tape t;
    const Var x = t.leaf(Tensor::scalar(-1.0f), "x");
    const auto g = backward(t, t.sum(t.relu(x)));
    CHECK(g["x"][0] == 0.0f);
  }
  SUBCASE("relu subgradient at zero is zero") {
    Tape t;
    const Var x = t.leaf(Tensor::scalar(0.0f), "x");
    CHECK(backward(t, t.sum(t.relu(x)))["x"][0] == 0.0f);
  }
  SUBCASE("loss from another tape is rejected") {
    Tape a, b;
    const Var x = a.leaf(Tensor::scalar(1.0f));
    const Var l = a.sum(x);
    CHECK_THROWS_AS(backward(b, l), InvalidArgument);
  }
  SUBCASE("non-scalar loss is rejected") {
    Tape t;
    const Var x = t.leaf(Tensor::vector({1, 2}));
    CHECK_THROWS_AS(backward(t, t.relu(x)), InvalidArgument);
  }
}

TEST_CASE("every differentiable primitive matches central differences") {
  Rng rng(11);
  OpParams conv;
  conv.stride = 1;
  conv.padding = 1;
  OpParams strided;
  strided.stride = 2;
  strided.padding = 1;
  OpParams pool;
  pool.pool = 2;
  pool.stride = 2;
  OpParams ce;
  ce.label = 2;
  OpParams soft;
  soft.label = -1;
  soft.soft_target = Tensor::vector({0.1f, 0.2f, 0.3f, 0.4f});
  OpParams sc;
  sc.factor = -2.5f;

  const std::vector<PrimitiveCase> cases{
      {OpKind::Dense, {random_tensor(rng, {5}), random_tensor(rng, {3, 5}), random_tensor(rng, {3})}, {}},
      {OpKind::Conv2d,
       {random_tensor(rng, {2, 5, 5}), random_tensor(rng, {3, 2, 3, 3}), random_tensor(rng, {3})},
       conv},
      {OpKind::Conv2d,
       {random_tensor(rng, {2, 6, 6}), random_tensor(rng, {2, 2, 3, 3}), random_tensor(rng, {2})},
       strided},
      {OpKind::DepthwiseConv2d,
       {random_tensor(rng, {3, 5, 5}), random_tensor(rng, {3, 3, 3}), random_tensor(rng, {3})},
       conv},
      {OpKind::Relu, {random_tensor(rng, {10})}, {}},
      {OpKind::MaxPool, {spaced_tensor(rng, {2, 4, 4})}, pool},
      {OpKind::AvgPool, {random_tensor(rng, {2, 4, 4})}, pool},
      {OpKind::Softmax, {random_tensor(rng, {6})}, {}},
      {OpKind::Add, {random_tensor(rng, {7}), random_tensor(rng, {7})}, {}},
      {OpKind::Flatten, {random_tensor(rng, {2, 2, 3})}, {}},
      {OpKind::CrossEntropy, {random_tensor(rng, {4})}, ce},
      {OpKind::CrossEntropy, {random_tensor(rng, {4})}, soft},
      {OpKind::Mul, {random_tensor(rng, {5}), random_tensor(rng, {5})}, {}},
      {OpKind::Sum, {random_tensor(rng, {5})}, {}},
      {OpKind::Scale, {random_tensor(rng, {5})}, sc},
  };
  for (const auto& c : cases) {
    CAPTURE(op_name(c.kind));
    CHECK(check_primitive(c, rng) < 1e-3);
  }
}

TEST_CASE("random two-layer conv net: backward matches finite differences") {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = random_tensor(rng, {2, 6, 6});
    const Tensor k1 = random_tensor(rng, {3, 2, 3, 3}), b1 = random_tensor(rng, {3});
    const Tensor k2 = random_tensor(rng, {2, 3, 3, 3}), b2 = random_tensor(rng, {2});
    auto build = [&](Tape& t, const Tensor& xin) {
      const Var xv = t.leaf(xin, "x");
      const Var h = t.relu(t.conv2d(xv, t.leaf(k1, "k1"), t.leaf(b1, "b1"), 1, 1));
      const Var o = t.conv2d(h, t.leaf(k2, "k2"), t.leaf(b2, "b2"), 1, 0);
      return t.sum(t.mul(o, t.constant(Tensor(t.value(o).shape(), 0.3f))));
    };
    Tape tape;
    const auto g = backward(tape, build(tape, x));
    auto f = [&](const Tensor& probe) {
      Tape t;
      return double(t.value(build(t, probe))[0]);
    };
    const Tensor fd = finite_difference_gradient(f, x, 1e-3);
    CHECK(max_relative_error(g["x"], fd) < 1e-3);
  }
}

TEST_CASE("chain rule on dense-relu-dense matches the closed form") {
  Rng rng(9);
  const Tensor x = random_tensor(rng, {4});
  const Tensor w1 = random_tensor(rng, {5, 4}), b1 = random_tensor(rng, {5});
  const Tensor w2 = random_tensor(rng, {1, 5}), b2 = random_tensor(rng, {1});
  Tape t;
  const Var xv = t.leaf(x, "x");
  const Var h = t.relu(t.dense(xv, t.leaf(w1), t.leaf(b1)));
  const Var y = t.sum(t.dense(h, t.leaf(w2), t.leaf(b2)));
  const auto g = backward(t, y);
  const Tensor pre = ops::dense(x, w1, b1);
  for (std::size_t j = 0; j < 4; ++j) {
    double expect = 0.0;
    for (std::size_t i = 0; i < 5; ++i)
      if (pre[i] > 0.0f) expect += double(w2[i]) * w1[i * 4 + j];
    CHECK(g["x"][j] == doctest::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("tape bookkeeping") {
  SUBCASE("adjoints replay in strict reverse execution order") {
    Tape t;
    const Var x = t.leaf(Tensor::vector({0.5f, -0.25f}), "x");
    const Var y = t.sum(t.scale(t.relu(t.add(x, x)), 2.0f));
    std::vector<OpKind> visited;
    const std::pair<Var, Tensor> seed{y, Tensor::scalar(1.0f)};
    backward(t, std::span(&seed, 1), [&](OpKind k) { visited.push_back(k); });
    auto executed = t.executed_ops();
    std::reverse(executed.begin(), executed.end());
    CHECK(visited == executed);
  }
  SUBCASE("a tape nobody records on stays empty") {
    Tape t;
    const std::vector<Tensor> in{Tensor::vector({1, 2})};
    (void)forward_primitive(OpKind::Softmax, in);
    CHECK(t.size() == 0);
  }
}

TEST_CASE("finite differences") {
  SUBCASE("exact on the quadratic example") {
    auto f = [](const Tensor& x) { return double(x[0]) * double(x[0]); };
    const Tensor g = finite_difference_gradient(f, Tensor::scalar(1.0f), 0.1);
    CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-6));
  }
  SUBCASE("exact slope for linear functions at any step") {
    auto f = [](const Tensor& x) { return 3.0 * x[0] - 0.5 * x[1]; };
    for (double h : {1e-4, 1e-2, 0.5}) {
      const Tensor g = finite_difference_gradient(f, Tensor::vector({0.25f, 0.75f}), h);
      CHECK(g[0] == doctest::Approx(3.0).epsilon(1e-6));
      CHECK(g[1] == doctest::Approx(-0.5).epsilon(1e-6));
    }
  }
  SUBCASE("non-finite value names the coordinate") {
    auto f = [](const Tensor& x) { return x[1] > 0.6f ? std::nan("") : 0.0; };
    try {
      finite_difference_gradient(f, Tensor::vector({0.0f, 0.55f}), 0.1);
      FAIL("expected NumericDomainError");
    } catch (const NumericDomainError& e) {
      CHECK(std::string(e.what()).find("coordinate 1") != std::string::npos);
    }
  }
  SUBCASE("h must be positive") {
    auto f = [](const Tensor&) { return 0.0; };
    CHECK_THROWS_AS(finite_difference_gradient(f, Tensor::scalar(0), 0.0), InvalidArgument);
  }
}
