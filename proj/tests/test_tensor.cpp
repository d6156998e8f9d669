#include <cmath>
#include <random>

#include "doctest.h"
#include "ldmrec/errors.hpp"
#include "ldmrec/kernels.hpp"
#include "ldmrec/tape.hpp"
#include "test_util.hpp"

using namespace ldmrec;
using ldmrec::testing::check_gradients;
using ldmrec::testing::max_abs_diff;
using ldmrec::testing::random_matrix;

namespace {

// Naive triple loop, written independently of the kernels.
DenseMatrix triple_loop(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j)
      for (std::size_t k = 0; k < a.cols(); ++k) c(i, j) += a(i, k) * b(k, j);
  return c;
}

}  // namespace

TEST_CASE("matmul: identity and hand arithmetic") {
  DenseMatrix a{{1, 2}, {3, 4}};
  CHECK(kernels::matmul(DenseMatrix::identity(2), a) == a);
  DenseMatrix ones{{1}, {1}};
  CHECK(kernels::matmul(a, ones) == DenseMatrix{{3}, {7}});
}

TEST_CASE("matmul: random 5x4 * 4x3 matches triple loop") {
  std::mt19937_64 rng(7);
  auto a = random_matrix(5, 4, rng);
  auto b = random_matrix(4, 3, rng);
  CHECK(max_abs_diff(kernels::matmul(a, b), triple_loop(a, b)) < 1e-14);
}

TEST_CASE("matmul: shape mismatch is a dimension error") {
  CHECK_THROWS_AS(kernels::matmul(DenseMatrix(2, 3), DenseMatrix(2, 3)), DimensionError);
  Tape t;
  auto a = t.constant(DenseMatrix(2, 3));
  CHECK_THROWS_AS(ag::add(a, t.constant(DenseMatrix(3, 2))), DimensionError);
}

TEST_CASE("omp kernels agree with serial reference for several worker counts") {
  std::mt19937_64 rng(11);
  auto a = random_matrix(67, 45, rng);
  auto b = random_matrix(45, 38, rng);
  auto bt = random_matrix(38, 45, rng);
  auto a2 = random_matrix(67, 38, rng);
  for (int w : {1, 2, 4}) {
    kernels::set_num_workers(w);
    DenseMatrix s(67, 38), p(67, 38);
    kernels::serial::matmul(a, b, s);
    kernels::omp::matmul(a, b, p);
    CHECK(max_abs_diff(s, p) < 1e-12);
    kernels::serial::matmul_bt(a, bt, s);
    kernels::omp::matmul_bt(a, bt, p);
    CHECK(max_abs_diff(s, p) < 1e-12);
    DenseMatrix s2(45, 38), p2(45, 38);
    kernels::serial::matmul_at(a, a2, s2);
    kernels::omp::matmul_at(a, a2, p2);
    CHECK(max_abs_diff(s2, p2) < 1e-12);
  }
  kernels::set_num_workers(1);
}

TEST_CASE("matmul associativity and identity") {
  std::mt19937_64 rng(3);
  auto a = random_matrix(4, 5, rng);
  auto b = random_matrix(5, 3, rng);
  auto c = random_matrix(3, 6, rng);
  auto left = kernels::matmul(kernels::matmul(a, b), c);
  auto right = kernels::matmul(a, kernels::matmul(b, c));
  CHECK(max_abs_diff(left, right) < 1e-12);
  CHECK(max_abs_diff(kernels::matmul(a, DenseMatrix::identity(5)), a) < 1e-12);
}

TEST_CASE("elementwise values") {
  Tape t;
  auto z = t.constant(DenseMatrix{{0.0}});
  CHECK(ag::sigmoid(z).value()[0] == doctest::Approx(0.5));
  auto m1 = t.constant(DenseMatrix{{-1.0}});
  CHECK(ag::leaky_relu(m1, 0.01).value()[0] == doctest::Approx(-0.01));
  auto big = t.constant(DenseMatrix{{-1e6, 1e6}});
  auto s = ag::sigmoid(big).value();
  CHECK(s[0] == 0.0);
  CHECK(s[1] == 1.0);
}

TEST_CASE("tanh gradient at 0.3 matches central difference") {
  ParamSet p;
  p.add("x", DenseMatrix{{0.3}});
  Tape t(&p);
  auto g = t.backward(ag::sum(ag::tanh(t.param("x"))));
  const double h = 1e-5;
  const double fd = (std::tanh(0.3 + h) - std::tanh(0.3 - h)) / (2 * h);
  CHECK(std::abs(g[0][0] - fd) < 1e-6);
}

TEST_CASE("leaky_relu derivative at exactly zero is the positive branch") {
  ParamSet p;
  p.add("x", DenseMatrix{{0.0, -2.0}});
  Tape t(&p);
  auto g = t.backward(ag::sum(ag::leaky_relu(t.param("x"), 0.2)));
  CHECK(g[0][0] == 1.0);
  CHECK(g[0][1] == doctest::Approx(0.2));
}

TEST_CASE("backward: sum(W x) has outer-product gradient") {
  std::mt19937_64 rng(5);
  ParamSet p;
  p.add("W", random_matrix(3, 4, rng));
  const DenseMatrix x = random_matrix(4, 1, rng);
  Tape t(&p);
  auto g = t.backward(ag::sum(ag::matmul(t.param("W"), t.constant(x))));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(g[0](i, j) == doctest::Approx(x[j]).epsilon(1e-12));
  auto fd = check_gradients(p, [&](Tape& t) { return ag::sum(ag::matmul(t.param("W"), t.constant(x))); });
  CHECK(fd.max_rel < 1e-5);
}

TEST_CASE("backward: parameter outside the loss gets zero gradient") {
  ParamSet p;
  p.add("W", DenseMatrix{{1, 2}, {3, 4}});
  p.add("unused", DenseMatrix{{5, 6}});
  Tape t(&p);
  auto g = t.backward(ag::sum(t.param("W")));
  CHECK(g[1] == DenseMatrix(1, 2));
  Tape t2(&p);
  auto g2 = t2.backward(ag::sum(t2.constant(DenseMatrix{{1.0}})));
  CHECK(g2[0] == DenseMatrix(2, 2));
}

TEST_CASE("backward twice on one tape is rejected") {
  ParamSet p;
  p.add("W", DenseMatrix{{1.0}});
  Tape t(&p);
  auto loss = ag::sum(t.param("W"));
  t.backward(loss);
  CHECK_THROWS_AS(t.backward(loss), UsageError);
  CHECK_THROWS_AS(ag::sum(t.param("W")), UsageError);
}

TEST_CASE("backward requires a scalar loss") {
  ParamSet p;
  p.add("W", DenseMatrix{{1.0, 2.0}});
  Tape t(&p);
  CHECK_THROWS_AS(t.backward(t.param("W")), UsageError);
}

TEST_CASE("FC -> sigmoid -> MSE chain on 3x3 toy matches finite differences") {
  std::mt19937_64 rng(9);
  ParamSet p;
  p.add("W", random_matrix(3, 3, rng));
  p.add("b", random_matrix(1, 3, rng));
  const DenseMatrix x = random_matrix(3, 3, rng);
  const DenseMatrix y = random_matrix(3, 3, rng, 0.0, 1.0);
  auto loss = [&](Tape& t) {
    auto h = ag::sigmoid(ag::linear(t.constant(x), t.param("W"), t.param("b")));
    return ag::weighted_mean(ag::row_mse(h, t.constant(y)), std::vector<double>{1.0, 1.0, 1.0});
  };
  CHECK(check_gradients(p, loss).max_rel < 1e-5);
}

TEST_CASE("property: every primitive matches finite differences on random tensors") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 10; ++trial) {
    ParamSet p;
    p.add("a", random_matrix(3, 4, rng));
    p.add("b", random_matrix(3, 4, rng));
    p.add("w", random_matrix(5, 4, rng));
    p.add("r", random_matrix(1, 5, rng));
    p.add("table", random_matrix(6, 2, rng));
    const std::vector<std::size_t> idx{4, 0, 4};
    const std::vector<double> weights{0.5, 2.0, 1.5};
    const DenseMatrix target = random_matrix(3, 7, rng);
    auto loss = [&](Tape& t) {
      auto a = t.param("a");
      auto b = t.param("b");
      auto prod = ag::mul(ag::tanh(a), ag::sigmoid(b));
      auto diff = ag::sub(ag::leaky_relu(prod, 0.1), ag::affine(a, 0.5, 0.25));
      auto mixed = ag::add(diff, b);
      auto hidden = ag::linear(mixed, t.param("w"), t.param("r"));  // 3x5
      auto z = ag::gather_rows(t.param("table"), idx);                 // 3x2
      auto wide = ag::concat_cols(hidden, z);                          // 3x7
      auto back = ag::matmul(ag::tanh(wide), ag::matmul_bt(t.constant(DenseMatrix::identity(7)),
                                                           t.constant(DenseMatrix::identity(7))));
      return ag::weighted_mean(ag::row_mse(back, t.constant(target)), weights);
    };
    auto r = check_gradients(p, loss);
    CHECK(r.max_rel < 1e-5);
  }
}

TEST_CASE("adjoints are linear: grad of a sum equals sum of grads") {
  std::mt19937_64 rng(17);
  ParamSet p;
  p.add("W", random_matrix(3, 3, rng));
  const DenseMatrix x1 = random_matrix(2, 3, rng);
  const DenseMatrix x2 = random_matrix(2, 3, rng);
  auto l1 = [&](Tape& t) { return ag::sum(ag::tanh(ag::matmul(t.constant(x1), t.param("W")))); };
  auto l2 = [&](Tape& t) { return ag::sum(ag::sigmoid(ag::matmul(t.constant(x2), t.param("W")))); };
  Tape ta(&p), tb(&p), tc(&p);
  auto g1 = ta.backward(l1(ta));
  auto g2 = tb.backward(l2(tb));
  auto g12 = tc.backward(ag::add(l1(tc), l2(tc)));
  g1.accumulate(g2);
  CHECK(max_abs_diff(g1[0], g12[0]) < 1e-12);
}

TEST_CASE("non-finite values are rejected") {
  Tape t;
  CHECK_THROWS_AS(t.constant(DenseMatrix{{std::nan("")}}), NumericError);
  auto big = t.constant(DenseMatrix{{1e300}});
  CHECK_THROWS_AS(ag::mul(big, big), NumericError);
}
