#include <cmath>
#include <cstring>
#include <string>

#include "delib/autodiff.hpp"
#include "delib/gradcheck.hpp"
#include "delib/rng.hpp"
#include "doctest.h"

using namespace delib;

namespace {

Tensor random_tensor(int r, int c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(r, c);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Projects an arbitrary output onto a scalar with fixed random weights so every
// output coordinate contributes to the checked gradient.
Var project(Graph& g, Var out, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor& v = out.value();
  Var w = g.constant(random_tensor(v.rows(), v.cols(), rng));
  return sum(mul(out, w));
}

}  // namespace

TEST_CASE("primitive examples") {
  Graph g;
  Rng rng(1);
  Tensor a = random_tensor(3, 4, rng);
  Var i3 = g.constant(Tensor::identity(3));
  Var av = g.constant(a);
  CHECK(matmul(i3, av).value() == a);

  Var z = g.constant(Tensor::row({0, 0, 0, 0}));
  const Tensor& s = softmax(z).value();
  for (double p : s.values()) CHECK(p == 0.25);

  CHECK(tanh(g.constant(Tensor::scalar(0.0))).value().item() == 0.0);
}

TEST_CASE("shape mismatch names both shapes") {
  Graph g;
  Var a = g.constant(Tensor(2, 3));
  Var b = g.constant(Tensor(4, 5));
  try {
    matmul(a, b);
    FAIL("expected ContractViolation");
  } catch (const ContractViolation& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x5]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, g.constant(Tensor(3, 2))), ContractViolation);
  CHECK_THROWS_AS(lookup(a, 2), ContractViolation);
}

TEST_CASE("numeric domain errors") {
  Graph g;
  CHECK_THROWS_AS(log(g.constant(Tensor::row({1.0, 0.0}))), NumericDomainError);
  CHECK_THROWS_AS(log(g.constant(Tensor::row({-2.0}))), NumericDomainError);
  CHECK_THROWS_AS(exp(g.constant(Tensor::scalar(1000.0))), NumericDomainError);
  Tensor bad = Tensor::row({1.0, std::nan("")});
  CHECK_THROWS_AS(g.constant(bad), NumericDomainError);
  Tensor p = Tensor::row({1.0, std::numeric_limits<double>::infinity()});
  Var pv = g.param("p", p);
  CHECK_THROWS_AS(softmax(pv), NumericDomainError);
}

TEST_CASE("backward basics") {
  ParameterTable params;
  params.add("x", Tensor(2, 3, 0.5));
  params.add("unused", Tensor(1, 2, 7.0));
  Graph g;
  Var x = g.param("x", params.at("x"));
  GradientMap grads = g.backward(sum(x), params);
  CHECK(grads.size() == 2);
  for (double v : grads.at("x").values()) CHECK(v == 1.0);
  CHECK(grads.at("unused") == Tensor(1, 2));

  CHECK_THROWS_AS(g.backward(x, params), ContractViolation);
}

TEST_CASE("softmax cross-entropy gradient at uniform logits") {
  const int V = 5, k = 3;
  ParameterTable params;
  params.add("logits", Tensor(1, V));
  Graph g;
  Var logits = g.param("logits", params.at("logits"));
  Var loss = scale(pick(log_softmax(logits), k), -1.0);
  GradientMap grads = g.backward(loss, params);
  for (int j = 0; j < V; ++j) {
    CHECK(grads.at("logits")(0, j) == doctest::Approx(1.0 / V - (j == k ? 1.0 : 0.0)).epsilon(1e-15));
  }
}

// straight_through is excluded: its backward is a surrogate by construction.
TEST_CASE("every primitive matches central differences") {
  Rng rng(7);
  const GradCheckOptions opts{.step = 1e-5, .tol = 1e-6, .scale_floor = 1e-2};
  struct Case {
    Primitive kind;
    std::vector<std::pair<int, int>> shapes;
    PrimitiveArgs args;
    bool positive = false;
  };
  const std::vector<Case> cases = {
      {Primitive::matmul, {{2, 3}, {3, 4}}, {}},
      {Primitive::add, {{2, 3}, {2, 3}}, {}},
      {Primitive::sub, {{2, 3}, {2, 3}}, {}},
      {Primitive::mul, {{2, 3}, {2, 3}}, {}},
      {Primitive::add_row, {{3, 4}, {1, 4}}, {}},
      {Primitive::tanh, {{2, 3}}, {}},
      {Primitive::sigmoid, {{2, 3}}, {}},
      {Primitive::exp, {{2, 3}}, {}},
      {Primitive::log, {{2, 3}}, {}, true},
      {Primitive::concat_rows, {{1, 3}, {2, 3}}, {}},
      {Primitive::concat_cols, {{2, 1}, {2, 3}}, {}},
      {Primitive::lookup, {{4, 3}}, {.index = 2}},
      {Primitive::sum, {{3, 3}}, {}},
      {Primitive::softmax, {{2, 5}}, {}},
      {Primitive::log_softmax, {{2, 5}}, {}},
      {Primitive::scale, {{2, 3}}, {.factor = -1.7, .shift = 0.3}},
      {Primitive::transpose, {{2, 3}}, {}},
      {Primitive::pick, {{2, 3}}, {.index = 4}},
  };
  for (std::size_t c = 0; c < cases.size(); ++c) {
    const Case& tc = cases[c];
    CAPTURE(primitive_name(tc.kind));
    for (int trial = 0; trial < 5; ++trial) {
      ParameterTable params;
      for (std::size_t i = 0; i < tc.shapes.size(); ++i) {
        auto [r, k] = tc.shapes[i];
        params.add("in" + std::to_string(i),
                   tc.positive ? random_tensor(r, k, rng, 0.2, 2.0) : random_tensor(r, k, rng, -2.0, 2.0));
      }
      const std::uint64_t wseed = 100 * c + trial;
      auto build = [&](Graph& g) {
        std::vector<Var> ins;
        for (std::size_t i = 0; i < tc.shapes.size(); ++i) {
          ins.push_back(g.param("in" + std::to_string(i), params.at("in" + std::to_string(i))));
        }
        return project(g, g.apply(tc.kind, ins, tc.args), wseed);
      };
      GradCheckReport rep = finite_diff_check(build, params, 0, opts);
      CHECK_MESSAGE(rep.passed, rep.summary());
    }
  }
}

TEST_CASE("softmax rows are stochastic") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Graph g;
    Var x = g.constant(random_tensor(4, 7, rng, -30.0, 30.0));
    const Tensor& p = softmax(x).value();
    for (int r = 0; r < p.rows(); ++r) {
      double s = 0.0;
      for (int c = 0; c < p.cols(); ++c) {
        CHECK(p(r, c) >= 0.0);
        s += p(r, c);
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("backward is linear") {
  Rng rng(11);
  ParameterTable params;
  params.add("x", random_tensor(2, 3, rng));
  auto f = [&](Graph& g) { return sum(tanh(g.param("x", params.at("x")))); };
  auto h = [&](Graph& g) { return sum(exp(scale(g.param("x", params.at("x")), 0.5))); };
  const double a = 0.7, b = -1.3;
  Graph gf, gh, gc;
  GradientMap df = gf.backward(f(gf), params);
  GradientMap dh = gh.backward(h(gh), params);
  GradientMap dc = gc.backward(add(scale(f(gc), a), scale(h(gc), b)), params);
  GradientMap expect;
  expect.accumulate(df, a);
  expect.accumulate(dh, b);
  CHECK(max_abs_difference(dc, expect) < 1e-12);
}

TEST_CASE("repeated embedding rows accumulate") {
  ParameterTable params;
  params.add("E", Tensor(3, 2, 1.0));
  Graph g;
  Var e = g.param("E", params.at("E"));
  Var loss = sum(add(lookup(e, 1), add(lookup(e, 1), lookup(e, 2))));
  GradientMap grads = g.backward(loss, params);
  CHECK(grads.at("E")(0, 0) == 0.0);
  CHECK(grads.at("E")(1, 0) == 2.0);
  CHECK(grads.at("E")(2, 1) == 1.0);
}

TEST_CASE("straight-through forwards the hard value and routes gradient to the soft input") {
  ParameterTable params;
  params.add("soft", Tensor::row({0.2, 0.5, 0.3}));
  Graph g;
  Var soft = g.param("soft", params.at("soft"));
  Var hard = g.constant(Tensor::row({0.0, 1.0, 0.0}));
  Var st = straight_through(soft, hard);
  CHECK(st.value() == Tensor::row({0.0, 1.0, 0.0}));
  GradientMap grads = g.backward(pick(st, 1), params);
  CHECK(grads.at("soft") == Tensor::row({0.0, 1.0, 0.0}));
}

TEST_CASE("graph replay is deterministic") {
  Rng rng(5);
  ParameterTable params;
  params.add("W", random_tensor(4, 4, rng));
  params.add("x", random_tensor(1, 4, rng));
  auto run = [&] {
    Graph g;
    Var w = g.param("W", params.at("W"));
    Var h = g.param("x", params.at("x"));
    for (int i = 0; i < 5; ++i) h = tanh(matmul(h, w));
    return pick(log_softmax(h), 2).value().item();
  };
  const double a = run(), b = run();
  CHECK(std::memcmp(&a, &b, sizeof a) == 0);
}

TEST_CASE("finite_diff_check examples") {
  ParameterTable params;
  params.add("x", Tensor::row({1.0, 2.0}));
  auto sq = [&](Graph& g) {
    Var x = g.param("x", params.at("x"));
    return sum(mul(x, x));
  };
  {
    Graph g;
    GradientMap grads = g.backward(sq(g), params);
    CHECK(grads.at("x") == Tensor::row({2.0, 4.0}));
  }
  GradCheckReport rep = finite_diff_check(sq, params, 0, {.step = 1e-5, .tol = 1e-8});
  CHECK(rep.passed);

  GradientMap zero = GradientMap::zeros_like(params);
  GradCheckReport flat = finite_diff_check([] { return 3.5; }, params, zero, {.tol = 1e-8});
  CHECK(flat.passed);
  CHECK(params.at("x") == Tensor::row({1.0, 2.0}));

  int calls = 0;
  auto noisy = [&] { return static_cast<double>(++calls); };
  CHECK_THROWS_AS(finite_diff_check(noisy, params, zero), VerificationInvalid);
  CHECK_THROWS_AS(finite_diff_check(sq, params, 0, {.step = 0.0}), ContractViolation);
}

TEST_CASE("parameter tables deep-copy and alias on request") {
  ParameterTable a;
  a.add("w", Tensor(1, 2, 1.0));
  ParameterTable b;
  b.share("w", a.handle("w"));
  b.at("w")[0] = 5.0;
  CHECK(a.at("w")[0] == 5.0);
  ParameterTable c = a;
  c.at("w")[0] = -1.0;
  CHECK(a.at("w")[0] == 5.0);
  CHECK_THROWS_AS(a.add("w", Tensor(1, 1)), ContractViolation);
  ParameterTable u = ParameterTable::view_union(a, b);
  CHECK(u.size() == 1);
  CHECK_THROWS_AS(ParameterTable::view_union(a, c), ContractViolation);
}
