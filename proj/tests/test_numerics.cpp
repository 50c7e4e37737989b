#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "unisa/autograd.hpp"
#include "unisa/error.hpp"
#include "unisa/gradcheck.hpp"

using namespace unisa;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t({r, c});
  for (double& v : t.data()) v = n(rng);
  return t;
}

}  // namespace

TEST_CASE("matmul hand products") {
  Graph g;
  Var id = g.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  Var b = g.constant(Tensor::matrix(2, 2, {5, 6, 7, 8}));
  CHECK(matmul(id, b).value() == Tensor::matrix(2, 2, {5, 6, 7, 8}));

  Var row = g.constant(Tensor::matrix(1, 2, {1, 2}));
  Var col = g.constant(Tensor::matrix(2, 1, {3, 4}));
  CHECK(matmul(row, col).value().item() == 11.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Graph g;
  Var a = g.constant(Tensor({2, 3}));
  Var b = g.constant(Tensor({2, 3}));
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[2x3]", msg.find("[2x3]") + 1) != std::string::npos);
  }
}

TEST_CASE("matmul gradients match central differences") {
  std::mt19937_64 rng(7);
  Parameter a("a", random_matrix(3, 4, rng));
  Parameter b("b", random_matrix(4, 2, rng));
  Parameter w("w", random_matrix(3, 2, rng));
  Parameter* ps[] = {&a, &b};
  const double err = finite_diff_check(
      [&](Graph& g) {
        Var c = matmul(g.param(a), g.param(b));
        CHECK(c.value().shape() == std::vector<std::size_t>{3, 2});
        return sum(mul(c, g.param(w)));
      },
      ps);
  CHECK(err <= 1e-6);
}

TEST_CASE("softmax cross entropy reference values") {
  Graph g;
  std::size_t t0[] = {0};
  CHECK(softmax_cross_entropy(g.constant(Tensor::matrix(1, 4, {0.3, 0.3, 0.3, 0.3})), t0).value().item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));

  std::size_t t2[] = {2};
  CHECK(softmax_cross_entropy(g.constant(Tensor::matrix(1, 3, {0, 0, 1e6})), t2).value().item() ==
        doctest::Approx(0.0));

  // -log(e^3 / (e^1 + e^2 + e^3)) evaluated directly.
  const double expected = -std::log(std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  const double got = softmax_cross_entropy(g.constant(Tensor::matrix(1, 3, {1, 2, 3})), t2).value().item();
  CHECK(got == doctest::Approx(expected).epsilon(1e-12));
  CHECK(got == doctest::Approx(0.40761).epsilon(1e-5));

  std::size_t bad[] = {3};
  CHECK_THROWS_AS(softmax_cross_entropy(g.constant(Tensor::matrix(1, 3, {1, 2, 3})), bad), IndexError);
}

TEST_CASE("softmax cross entropy gradient") {
  std::mt19937_64 rng(11);
  const std::size_t targets[] = {1, 4};
  const double err = finite_diff_check(
      [&](Graph&, Var x) { return softmax_cross_entropy(x, targets); }, random_matrix(2, 5, rng), 1e-5);
  CHECK(err <= 1e-6);
}

TEST_CASE("backward basics") {
  Parameter x("x", Tensor::matrix(1, 3, {1, 2, 3}));
  {
    Graph g;
    g.backward(sum(g.param(x)));
  }
  CHECK(x.grad == Tensor::matrix(1, 3, {1, 1, 1}));

  x.zero_grad();
  {
    Graph g;
    Var v = g.param(x);
    g.backward(sum(mul(v, v)));
  }
  CHECK(x.grad == Tensor::matrix(1, 3, {2, 4, 6}));

  // Repeated backward accumulates.
  x.zero_grad();
  {
    Graph g;
    Var v = g.param(x);
    Var loss = sum(mul(v, v));
    g.backward(loss);
    g.backward(loss);
  }
  CHECK(x.grad == Tensor::matrix(1, 3, {4, 8, 12}));

  Graph g;
  CHECK_THROWS_AS(g.backward(g.param(x)), ContractError);
}

TEST_CASE("backward is deterministic after zeroing") {
  std::mt19937_64 rng(3);
  Parameter w("w", random_matrix(4, 3, rng));
  const Tensor input = random_matrix(5, 4, rng);
  auto run = [&] {
    w.zero_grad();
    Graph g;
    Var h = softmax_rows(matmul(g.constant(input), g.param(w)));
    g.backward(sum(mul(h, h)));
    return w.grad;
  };
  const Tensor first = run();
  CHECK(run() == first);
}

TEST_CASE("composite matmul -> layernorm -> softmax-CE gradient") {
  std::mt19937_64 rng(5);
  Parameter x("x", random_matrix(3, 6, rng));
  Parameter w("w", random_matrix(6, 5, rng));
  Parameter gamma("gamma", random_matrix(1, 5, rng));
  Parameter beta("beta", random_matrix(1, 5, rng));
  const std::size_t targets[] = {0, 3, 4};
  Parameter* ps[] = {&x, &w, &gamma, &beta};
  const double err = finite_diff_check(
      [&](Graph& g) {
        Var h = layer_norm(matmul(g.param(x), g.param(w)), g.param(gamma), g.param(beta));
        return softmax_cross_entropy(h, targets);
      },
      ps);
  CHECK(err <= 1e-4);
}

TEST_CASE("finite_diff_check on x^2") {
  const double err = finite_diff_check([](Graph&, Var x) { return sum(mul(x, x)); }, Tensor::scalar(3.0));
  CHECK(err <= 1e-8);
}

TEST_CASE("finite_diff_check rejects non-finite evaluations") {
  CHECK_THROWS_AS(finite_diff_check([](Graph&, Var x) { return scale(x, std::nan("")); }, Tensor::scalar(1.0)),
                  NumericError);
}

TEST_CASE("every op passes the gradient check") {
  std::mt19937_64 rng(19);
  Parameter a("a", random_matrix(4, 6, rng));
  Parameter b("b", random_matrix(4, 6, rng));
  Parameter row("row", random_matrix(1, 6, rng));
  Parameter table("table", random_matrix(7, 6, rng));
  Parameter w("w", random_matrix(5, 6, rng));
  const int ids[] = {3, 0, 3, 6};
  const std::size_t rows[] = {2, 0};
  const std::size_t cols[] = {4, 1, 1};
  Parameter* ps[] = {&a, &b, &row, &table, &w};

  const double err = finite_diff_check(
      [&](Graph& g) {
        Var av = g.param(a), bv = g.param(b);
        std::mt19937_64 drop(99);
        Var e = embedding(g.param(table), ids);
        Var x = add(av, e);
        x = sub(x, scale(bv, 0.5));
        x = add_row(x, g.param(row));
        x = gelu(x);
        x = dropout(x, 0.25, drop);
        x = replace_rows(x, g.param(row), rows);
        Var heads[] = {slice_cols(x, 0, 3), slice_cols(x, 3, 3)};
        x = concat_cols(heads);
        Var att = softmax_rows(matmul_nt(x, g.param(w)));
        Var parts[] = {att, gather_rows(att, rows)};
        Var stacked = concat_rows(parts);
        Var picked = gather_cols(stacked, cols);
        Var pooled = mean_rows(x, rows);
        Var dist = pairwise_distance(x);
        Var ratio = safe_div(row_sum(mul(dist, dist)), row_sum(dist));
        return add(add(sum(mul(picked, picked)), sum(mul(pooled, pooled))), sum(ratio));
      },
      ps);
  CHECK(err <= 1e-4);
}

TEST_CASE("softmax rows sum to one") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor p = softmax_rows(random_matrix(6, 9, rng, 10.0));
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double s = 0.0;
      for (double v : p.row(i)) s += v;
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("pairwise distance at coincident rows has zero gradient") {
  Parameter a("a", Tensor::matrix(2, 2, {1, 1, 1, 1}));
  Graph g;
  g.backward(sum(pairwise_distance(g.param(a))));
  CHECK(a.grad.all_finite());
  for (double v : a.grad.data()) CHECK(v == 0.0);
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor({0, 2}), DimensionError);
  Tensor t({2, 3}, 1.5);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.all_finite());
}
