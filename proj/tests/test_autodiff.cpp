#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "xda/error.hpp"
#include "xda/gradcheck.hpp"
#include "xda/rng.hpp"
#include "xda/tape.hpp"

using namespace xda;

namespace {

Tensor random_tensor(Rng& rng, std::vector<int64_t> shape, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = rng.uniform(-scale, scale);
  return t;
}

// Independent per-pair loop oracle for the distance matrix.
std::vector<double> pairwise_oracle(const Tensor& a, const Tensor& b) {
  const int64_t m = a.dim(0), n = b.dim(0), d = a.dim(1);
  std::vector<double> out(static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (int64_t k = 0; k < d; ++k) {
        const double diff = a(i, k) - b(j, k);
        s += diff * diff;
      }
      out[static_cast<size_t>(i * n + j)] = std::sqrt(s);
    }
  return out;
}

struct FiniteCheckGuard {
  FiniteCheckGuard() { Tape::set_finite_checks(true); }
  ~FiniteCheckGuard() { Tape::set_finite_checks(false); }
};

}  // namespace

TEST_CASE("affine forward matches hand-computed cases") {
  FiniteCheckGuard guard;
  Tape t;

  SUBCASE("identity weights pass the input through") {
    Tensor x = Tensor::of({1, 2}, {1, 2});
    Tensor w = Tensor::of({2, 2}, {1, 0, 0, 1});
    Tensor b = Tensor::of({2}, {0, 0});
    Var y = affine(t, t.leaf(x), t.leaf(w), t.leaf(b));
    CHECK(t.value(y).data == std::vector<double>{1, 2});
  }

  SUBCASE("zero input yields the bias") {
    Tensor x = Tensor::of({1, 2}, {0, 0});
    Tensor w = Tensor::of({2, 2}, {5, -3, 2, 8});
    Tensor b = Tensor::of({2}, {3, 4});
    Var y = affine(t, t.leaf(x), t.leaf(w), t.leaf(b));
    CHECK(t.value(y).data == std::vector<double>{3, 4});
  }

  SUBCASE("hand matrix multiply") {
    // [1,1] * [[2,3],[4,5]] + [1,1] = [2+4+1, 3+5+1] = [7,9]
    Tensor x = Tensor::of({1, 2}, {1, 1});
    Tensor w = Tensor::of({2, 2}, {2, 3, 4, 5});
    Tensor b = Tensor::of({2}, {1, 1});
    Var y = affine(t, t.leaf(x), t.leaf(w), t.leaf(b));
    CHECK(t.value(y).data == std::vector<double>{7, 9});
  }

  SUBCASE("shape mismatch names both shapes") {
    Tensor x = Tensor::of({1, 3}, {1, 2, 3});
    Tensor w = Tensor::of({2, 2}, {1, 0, 0, 1});
    Tensor b = Tensor::of({2}, {0, 0});
    CHECK_THROWS_WITH_AS(affine(t, t.leaf(x), t.leaf(w), t.leaf(b)),
                         doctest::Contains("[1,3]"), DimensionError);
  }
}

TEST_CASE("relu forward and gradient") {
  FiniteCheckGuard guard;
  Tape t;
  Tensor x = Tensor::of({3}, {-1, 0, 2});
  x.requires_grad = true;
  Var y = relu(t, t.leaf(x));
  CHECK(t.value(y).data == std::vector<double>{0, 0, 2});

  Var loss = sum_all(t, y);
  t.backward(loss);
  CHECK(x.grad == std::vector<double>{0, 0, 1});

  Tape t2;
  Tensor pos = Tensor::of({4}, {0.5, 1, 2, 3});
  Var same = relu(t2, t2.leaf(pos));
  CHECK(t2.value(same).data == pos.data);
}

TEST_CASE("sigmoid values and saturation") {
  FiniteCheckGuard guard;
  Tape t;
  Tensor x = Tensor::of({3}, {0.0, -100.0, 100.0});
  x.requires_grad = true;
  Var y = sigmoid(t, t.leaf(x));
  const Tensor& yv = t.value(y);
  CHECK(yv(0) == doctest::Approx(0.5));
  CHECK(yv(1) > 0.0);
  CHECK(yv(1) <= 1e-40);
  CHECK(std::isfinite(yv(1)));
  CHECK(yv(2) <= 1.0);
  CHECK(std::isfinite(yv(2)));

  // d sigma/dx at 0 is 0.25
  Var s = sum_all(t, y);
  t.backward(s);
  CHECK(x.grad[0] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("pairwise_euclidean against the per-pair loop oracle") {
  FiniteCheckGuard guard;

  SUBCASE("3-4-5 triangle") {
    Tape t;
    Tensor a = Tensor::of({1, 2}, {0, 0});
    Tensor b = Tensor::of({1, 2}, {3, 4});
    Var d = pairwise_euclidean(t, t.leaf(a), t.leaf(b));
    CHECK(t.value(d).item() == doctest::Approx(5.0).epsilon(1e-15));
  }

  SUBCASE("identical sets have a zero diagonal") {
    Rng rng(7);
    Tensor a = random_tensor(rng, {4, 3});
    Tape t;
    Var aa = t.leaf(a);
    Var d = pairwise_euclidean(t, aa, aa);
    for (int64_t i = 0; i < 4; ++i) CHECK(t.value(d)(i, i) == 0.0);
  }

  SUBCASE("fixed oracle case") {
    Tape t;
    Tensor a = Tensor::of({2, 2}, {0, 0, 1, 0});
    Tensor b = Tensor::of({1, 2}, {0, 1});
    Var d = pairwise_euclidean(t, t.leaf(a), t.leaf(b));
    CHECK(t.value(d)(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(t.value(d)(1, 0) ==
          doctest::Approx(1.4142135623730951).epsilon(1e-15));
  }

  SUBCASE("random instances match the oracle and transpose symmetry") {
    Rng rng(123);
    for (int rep = 0; rep < 20; ++rep) {
      const int64_t m = 1 + static_cast<int64_t>(rng.below(5));
      const int64_t n = 1 + static_cast<int64_t>(rng.below(5));
      const int64_t dd = 1 + static_cast<int64_t>(rng.below(4));
      Tensor a = random_tensor(rng, {m, dd});
      Tensor b = random_tensor(rng, {n, dd});
      Tape t;
      Var fwd = pairwise_euclidean(t, t.leaf(a), t.leaf(b));
      Var rev = pairwise_euclidean(t, t.leaf(b), t.leaf(a));
      const auto oracle = pairwise_oracle(a, b);
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
          CHECK(t.value(fwd)(i, j) ==
                doctest::Approx(oracle[static_cast<size_t>(i * n + j)])
                    .epsilon(1e-14));
          CHECK(t.value(fwd)(i, j) == t.value(rev)(j, i));
        }
    }
  }

  SUBCASE("feature dimension mismatch") {
    Tape t;
    Tensor a = Tensor::of({1, 2}, {0, 0});
    Tensor b = Tensor::of({1, 3}, {1, 2, 3});
    CHECK_THROWS_AS(pairwise_euclidean(t, t.leaf(a), t.leaf(b)),
                    DimensionError);
  }
}

TEST_CASE("backward basics") {
  FiniteCheckGuard guard;

  SUBCASE("loss = sum(x) gives all-ones gradient") {
    Tape t;
    Rng rng(3);
    Tensor x = random_tensor(rng, {3, 4});
    x.requires_grad = true;
    Var loss = sum_all(t, t.leaf(x));
    t.backward(loss);
    CHECK(x.grad == std::vector<double>(12, 1.0));
  }

  SUBCASE("loss = 0 * x gives exact zeros") {
    Tape t;
    Rng rng(4);
    Tensor x = random_tensor(rng, {5});
    x.requires_grad = true;
    Var loss = sum_all(t, scale(t, t.leaf(x), 0.0));
    t.backward(loss);
    CHECK(x.grad == std::vector<double>(5, 0.0));
  }

  SUBCASE("unused parameters receive exact zeros") {
    Tape t;
    Tensor x = Tensor::of({2}, {1, 2});
    Tensor unused = Tensor::of({3}, {4, 5, 6});
    x.requires_grad = true;
    unused.requires_grad = true;
    Var xl = t.leaf(x);
    t.leaf(unused);
    t.backward(sum_all(t, xl));
    CHECK(x.grad == std::vector<double>{1, 1});
    CHECK(unused.grad == std::vector<double>{0, 0, 0});
  }

  SUBCASE("non-scalar loss is rejected") {
    Tape t;
    Tensor x = Tensor::of({2}, {1, 2});
    x.requires_grad = true;
    Var xl = t.leaf(x);
    CHECK_THROWS_AS(t.backward(xl), ContractError);
  }
}

TEST_CASE("composite graphs match central finite differences") {
  FiniteCheckGuard guard;
  Rng rng(99);

  for (int rep = 0; rep < 12; ++rep) {
    const int64_t batch = 2 + static_cast<int64_t>(rng.below(3));
    const int64_t in = 2 + static_cast<int64_t>(rng.below(3));
    const int64_t hid = 2 + static_cast<int64_t>(rng.below(3));
    Tensor x = random_tensor(rng, {batch, in});
    Tensor w1 = random_tensor(rng, {in, hid}, 0.8);
    Tensor b1 = random_tensor(rng, {hid}, 0.3);
    Tensor w2 = random_tensor(rng, {hid, hid}, 0.8);
    Tensor b2 = random_tensor(rng, {hid}, 0.3);

    Tensor* params[] = {&x, &w1, &b1, &w2, &b2};
    auto build = [&](Tape& t) {
      Var h = relu(t, affine(t, t.leaf(x), t.leaf(w1), t.leaf(b1)));
      Var o = sigmoid(t, affine(t, h, t.leaf(w2), t.leaf(b2)));
      Var d = pairwise_euclidean(t, o, h);
      return mean_all(t, d);
    };
    CHECK(grad_check(params, build, 1e-5) < 1e-6);
  }
}

TEST_CASE("elementwise ops differentiate correctly") {
  FiniteCheckGuard guard;
  Rng rng(55);
  Tensor a = random_tensor(rng, {4});
  Tensor b = random_tensor(rng, {4});
  Tensor* params[] = {&a, &b};

  auto build = [&](Tape& t) {
    Var av = t.leaf(a);
    Var bv = t.leaf(b);
    Var u = add(t, mul(t, av, bv), scale(t, sub(t, av, bv), 0.5));
    return mean_all(t, add_const(t, u, 2.0));
  };
  CHECK(grad_check(params, build, 1e-5) < 1e-8);
}

TEST_CASE("gather_rows gathers and scatter-adds") {
  FiniteCheckGuard guard;
  Tape t;
  Tensor x = Tensor::of({3, 2}, {1, 2, 3, 4, 5, 6});
  x.requires_grad = true;
  Var g = gather_rows(t, t.leaf(x), {2, 0, 2});
  CHECK(t.value(g).data == std::vector<double>{5, 6, 1, 2, 5, 6});

  t.backward(sum_all(t, g));
  CHECK(x.grad == std::vector<double>{1, 1, 0, 0, 2, 2});

  Tape t2;
  Tensor y = Tensor::of({2, 2}, {1, 2, 3, 4});
  CHECK_THROWS_AS(gather_rows(t2, t2.leaf(y), {5}), ContractError);
  CHECK_THROWS_AS(gather_rows(t2, t2.leaf(y), {}), ContractError);
}

TEST_CASE("bce_mean values and contract") {
  FiniteCheckGuard guard;

  SUBCASE("p=0.5, y=1 is ln 2") {
    Tape t;
    Tensor p = Tensor::of({1}, {0.5});
    Var loss = bce_mean(t, t.leaf(p), Tensor::of({1}, {1}));
    CHECK(t.value(loss).item() ==
          doctest::Approx(0.6931471805599453).epsilon(1e-12));
  }

  SUBCASE("non-binary labels are rejected") {
    Tape t;
    Tensor p = Tensor::of({1}, {0.5});
    CHECK_THROWS_AS(bce_mean(t, t.leaf(p), Tensor::of({1}, {0.5})),
                    ContractError);
  }

  SUBCASE("gradient matches finite differences") {
    Rng rng(11);
    Tensor logits = random_tensor(rng, {6}, 1.5);
    Tensor labels = Tensor::zeros({6});
    for (int i = 0; i < 6; ++i) labels(i) = i % 2;
    Tensor* params[] = {&logits};
    auto build = [&](Tape& t) {
      return bce_mean(t, sigmoid(t, t.leaf(logits)), labels);
    };
    CHECK(grad_check(params, build, 1e-5) < 1e-7);
  }
}

TEST_CASE("conv2d forward and gradient") {
  FiniteCheckGuard guard;

  SUBCASE("averaging kernel on a constant image") {
    Tape t;
    Tensor x = Tensor::full({1, 4, 4}, 2.0);
    Tensor k = Tensor::full({1, 3, 3}, 1.0 / 9.0);
    Tensor b = Tensor::of({1}, {1.0});
    Var y = conv2d(t, t.leaf(x), t.leaf(k), t.leaf(b));
    CHECK(t.value(y).shape == std::vector<int64_t>{1, 1, 2, 2});
    for (double v : t.value(y).data) CHECK(v == doctest::Approx(3.0));
  }

  SUBCASE("gradient matches finite differences") {
    Rng rng(21);
    Tensor x = random_tensor(rng, {2, 5, 5});
    Tensor k = random_tensor(rng, {3, 3, 3}, 0.5);
    Tensor b = random_tensor(rng, {3}, 0.2);
    Tensor* params[] = {&x, &k, &b};
    auto build = [&](Tape& t) {
      Var c = relu(t, conv2d(t, t.leaf(x), t.leaf(k), t.leaf(b)));
      return mean_all(t, flatten_rows(t, c));
    };
    CHECK(grad_check(params, build, 1e-5) < 1e-6);
  }
}

TEST_CASE("grad_check utility") {
  SUBCASE("quadratic is exact to tight tolerance") {
    Tensor x = Tensor::of({3}, {1.0, -2.0, 0.5});
    Tensor* params[] = {&x};
    auto build = [&](Tape& t) {
      Var xv = t.leaf(x);
      return sum_all(t, mul(t, xv, xv));
    };
    CHECK(grad_check(params, build, 1e-5) < 1e-8);
  }

  SUBCASE("a wrong gradient rule is detected (negative control)") {
    Tensor x = Tensor::of({2}, {0.7, -0.3});
    Tensor* params[] = {&x};
    auto build = [&](Tape& t) {
      Var xv = t.leaf(x);
      // forward: sum(2x); backward deliberately claims d/dx = 1
      Tensor out = Tensor::scalar(2.0 * (x.data[0] + x.data[1]));
      const Var ins[] = {xv};
      Var wrong = t.node(std::move(out), ins,
                         [xv](Tape& tp, const std::vector<double>& dy) {
                           auto& dx = tp.adjoint(xv);
                           for (double& v : dx) v += dy[0];
                         });
      return wrong;
    };
    CHECK(grad_check(params, build, 1e-5) > 1e-2);
  }

  SUBCASE("non-finite loss reports coordinates") {
    Tensor x = Tensor::of({1}, {std::numeric_limits<double>::infinity()});
    Tensor* params[] = {&x};
    auto build = [&](Tape& t) { return sum_all(t, t.leaf(x)); };
    CHECK_THROWS_AS(grad_check(params, build, 1e-5), ContractError);
  }
}

TEST_CASE("forward evaluation is bit-identical across runs") {
  Rng rng(2024);
  Tensor x = random_tensor(rng, {4, 6});
  Tensor w = random_tensor(rng, {6, 5});
  Tensor b = random_tensor(rng, {5});

  auto run = [&]() {
    Tape t;
    Var h = sigmoid(t, affine(t, t.leaf(x), t.leaf(w), t.leaf(b)));
    Var d = pairwise_euclidean(t, h, h);
    return t.value(mean_all(t, d)).item();
  };
  const double first = run();
  for (int i = 0; i < 5; ++i) {
    const double again = run();
    CHECK(std::memcmp(&first, &again, sizeof(double)) == 0);
  }
}
