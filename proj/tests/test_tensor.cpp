#include <cmath>
#include <vector>

#include "alab/errors.hpp"
#include "alab/tensor.hpp"
#include "doctest.h"

using namespace alab;

namespace {

Tensor param(Matrix m) { return Tensor(std::move(m), true); }

// Weighted sum with a fixed random mask so every output entry matters.
Var weighted_sum(Var y, std::uint64_t seed) {
  Prng rng(seed);
  Matrix w = Matrix::random_normal(y.rows(), y.cols(), 1.0, rng);
  return sum(mul(y, y.tape()->constant(std::move(w))));
}

}  // namespace

TEST_CASE("matmul examples") {
  Tape t;
  Tensor i3(Matrix::identity(3));
  Prng rng(1);
  Tensor m(Matrix::random_normal(3, 5, 1.0, rng));
  CHECK(matmul(t.leaf(i3), t.leaf(m)).value() == m.value);

  Tensor a(Matrix::from_rows({{1, 2}, {3, 4}}));
  Tensor b(Matrix::from_rows({{1}, {1}}));
  CHECK(matmul(t.leaf(a), t.leaf(b)).value() == Matrix::from_rows({{3}, {7}}));

  Tensor x(Matrix(2, 3)), y(Matrix(2, 3));
  try {
    matmul(t.leaf(x), t.leaf(y));
    FAIL("expected dimension error");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
  }
}

TEST_CASE("elementwise, sigmoid, log-softmax, gather_nll examples") {
  Tape t;
  CHECK(sigmoid(t.constant(Matrix(1, 1, 0.0))).item() == 0.5);

  Var ls = log_softmax_rows(t.constant(Matrix(1, 4, 3.25)));
  for (double v : ls.value().values()) CHECK(v == doctest::Approx(std::log(0.25)).epsilon(1e-15));

  Var logp = t.constant(Matrix::from_rows({{std::log(0.7), std::log(0.3)}}));
  std::vector<std::size_t> tgt{0};
  Var nll = gather_nll(logp, tgt, {true});
  CHECK(nll.item() == doctest::Approx(0.356674943938732).epsilon(1e-14));

  CHECK_THROWS_AS(gather_nll(logp, tgt, {false}), DegenerateBatchError);
  CHECK_THROWS_AS(add(t.constant(Matrix(2, 2)), t.constant(Matrix(2, 3))), DimensionError);
}

TEST_CASE("exp of log-softmax rows sums to one") {
  Prng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Tape t;
    Var ls = log_softmax_rows(t.constant(Matrix::random_normal(4, 9, 5.0, rng)));
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (double v : ls.value().row(r)) s += std::exp(v);
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("backward examples") {
  SUBCASE("loss = sum(W x) gives dW = 1 * x^T") {
    Prng rng(5);
    Tensor w = param(Matrix::random_normal(3, 4, 1.0, rng));
    Tensor x(Matrix::random_normal(4, 1, 1.0, rng));
    Tape t;
    t.backward(sum(matmul(t.leaf(w), t.leaf(x))));
    REQUIRE(w.grad);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 4; ++c) CHECK((*w.grad)(r, c) == x.value(c, 0));
    CHECK_FALSE(x.grad);
  }
  SUBCASE("loss independent of W gives zero grad") {
    Tensor w = param(Matrix(2, 2, 1.0));
    Tensor u = param(Matrix(2, 2, 1.0));
    Tape t;
    t.leaf(w);
    t.backward(sum(t.leaf(u)));
    REQUIRE(w.grad);
    CHECK(*w.grad == Matrix(2, 2, 0.0));
  }
  SUBCASE("two uses of one leaf sum their gradients") {
    Prng rng(9);
    Tensor w = param(Matrix::random_normal(3, 3, 1.0, rng));
    auto f = [&](Tape& t) {
      Var a = t.leaf(w);
      Var b = t.leaf(w);
      return weighted_sum(matmul(a, b), 11);
    };
    Tensor* ps[] = {&w};
    const auto rep = finite_diff_check(f, ps, 1e-5, 1e-4);
    CHECK(rep.passed);
    CHECK(rep.max_rel_error < 1e-6);
  }
  SUBCASE("non-scalar loss is rejected and a tape is single-use") {
    Tensor w = param(Matrix(2, 2, 1.0));
    Tape t;
    Var y = t.leaf(w);
    CHECK_THROWS_AS(t.backward(y), ContractError);
    Var s = sum(y);
    t.backward(s);
    CHECK_THROWS_AS(t.backward(s), ContractError);
  }
}

TEST_CASE("non-finite values surface as errors") {
  Tape t;
  Tensor bad(Matrix(1, 1, std::nan("")));
  CHECK_THROWS_AS(t.leaf(bad), NonFiniteError);
  CHECK_THROWS_AS(scale(t.constant(Matrix(1, 1, 1e308)), 1e10), NonFiniteError);
}

TEST_CASE("finite differences: constant function reports zero error") {
  Tensor w = param(Matrix(2, 2, 0.3));
  Tensor* ps[] = {&w};
  const auto rep = finite_diff_check([](Tape& t) { return t.constant(Matrix(1, 1, 2.0)); }, ps, 1e-5, 1e-4);
  CHECK(rep.max_rel_error == 0.0);
  CHECK(rep.checked == 4);
}

TEST_CASE("finite differences: half squared norm of W x") {
  Prng rng(17);
  Tensor w = param(Matrix::random_normal(4, 4, 1.0, rng));
  Tensor x(Matrix::random_normal(4, 1, 1.0, rng));
  auto f = [&](Tape& t) {
    Var y = matmul(t.leaf(w), t.leaf(x));
    return scale(sum(mul(y, y)), 0.5);
  };
  Tensor* ps[] = {&w};
  CHECK(finite_diff_check(f, ps, 1e-5, 1e-4).max_rel_error < 1e-4);
}

TEST_CASE("matmul associativity on unit-scale 8x8 triples") {
  Prng rng(23);
  for (int i = 0; i < 50; ++i) {
    Matrix a = Matrix::random_normal(8, 8, 1.0, rng);
    Matrix b = Matrix::random_normal(8, 8, 1.0, rng);
    Matrix c = Matrix::random_normal(8, 8, 1.0, rng);
    CHECK(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) < 1e-9);
  }
}

TEST_CASE("tape replay is bit-deterministic") {
  auto run = [](std::uint64_t seed) {
    Prng rng(seed);
    Tensor w = param(Matrix::random_normal(5, 5, 1.0, rng));
    Tensor x(Matrix::random_normal(3, 5, 1.0, rng));
    Tape t;
    Var h = silu(matmul_nt(t.leaf(x), t.leaf(w)));
    std::vector<std::size_t> tg{1, 2, 0};
    Var loss = gather_nll(log_softmax_rows(h), tg, {true, true, false});
    t.backward(loss);
    return std::make_pair(loss.item(), *w.grad);
  };
  const auto a = run(99);
  const auto b = run(99);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

// Every op, 20 seeds each, against central differences.
TEST_CASE("every op matches finite differences over 20 seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Prng rng(1000 + seed);
    Tensor a = param(Matrix::random_normal(3, 4, 1.0, rng));
    Tensor b = param(Matrix::random_normal(4, 5, 1.0, rng));
    Tensor c = param(Matrix::random_normal(3, 4, 1.0, rng));
    Tensor d = param(Matrix::random_normal(5, 4, 1.0, rng));
    Tensor g = param(Matrix::random_normal(1, 4, 1.0, rng));
    Tensor sq = param(Matrix::random_normal(4, 4, 1.0, rng));
    std::vector<std::size_t> targets{1, 0, 3};
    std::vector<std::size_t> ids{2, 0, 2, 1};

    struct Case {
      const char* name;
      std::function<Var(Tape&)> f;
      std::vector<Tensor*> ps;
    };
    const std::uint64_t ws = seed * 31 + 7;
    std::vector<Case> cases = {
        {"matmul", [&](Tape& t) { return weighted_sum(matmul(t.leaf(a), t.leaf(b)), ws); }, {&a, &b}},
        {"matmul_nt", [&](Tape& t) { return weighted_sum(matmul_nt(t.leaf(a), t.leaf(d)), ws); }, {&a, &d}},
        {"add", [&](Tape& t) { return weighted_sum(add(t.leaf(a), t.leaf(c)), ws); }, {&a, &c}},
        {"sub", [&](Tape& t) { return weighted_sum(sub(t.leaf(a), t.leaf(c)), ws); }, {&a, &c}},
        {"mul", [&](Tape& t) { return weighted_sum(mul(t.leaf(a), t.leaf(c)), ws); }, {&a, &c}},
        {"scale", [&](Tape& t) { return weighted_sum(scale(t.leaf(a), -1.7), ws); }, {&a}},
        {"sigmoid", [&](Tape& t) { return weighted_sum(sigmoid(t.leaf(a)), ws); }, {&a}},
        {"silu", [&](Tape& t) { return weighted_sum(silu(t.leaf(a)), ws); }, {&a}},
        {"log_sigmoid", [&](Tape& t) { return weighted_sum(log_sigmoid(t.leaf(a)), ws); }, {&a}},
        {"transpose", [&](Tape& t) { return weighted_sum(transpose(t.leaf(a)), ws); }, {&a}},
        {"log_softmax_rows", [&](Tape& t) { return weighted_sum(log_softmax_rows(t.leaf(a)), ws); }, {&a}},
        {"causal_softmax_rows", [&](Tape& t) { return weighted_sum(causal_softmax_rows(t.leaf(sq)), ws); }, {&sq}},
        {"gather_nll",
         [&](Tape& t) { return gather_nll(log_softmax_rows(t.leaf(a)), targets, {true, false, true}); },
         {&a}},
        {"rmsnorm_rows", [&](Tape& t) { return weighted_sum(rmsnorm_rows(t.leaf(a), t.leaf(g)), ws); }, {&a, &g}},
        {"embedding", [&](Tape& t) { return weighted_sum(embedding(t.leaf(c), ids), ws); }, {&c}},
        {"slice_cols", [&](Tape& t) { return weighted_sum(slice_cols(t.leaf(b), 1, 3), ws); }, {&b}},
        {"concat_cols",
         [&](Tape& t) {
           Var parts[] = {t.leaf(a), t.leaf(c), t.leaf(a)};
           return weighted_sum(concat_cols(parts), ws);
         },
         {&a, &c}},
        {"sum", [&](Tape& t) { return sum(mul(t.leaf(a), t.leaf(a))); }, {&a}},
    };
    for (auto& cs : cases) {
      CAPTURE(cs.name);
      CAPTURE(seed);
      const auto rep = finite_diff_check(cs.f, cs.ps, 1e-5, 1e-4);
      CHECK(rep.max_rel_error < 1e-4);
    }
  }
}
