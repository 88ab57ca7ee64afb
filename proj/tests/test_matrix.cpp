#include <cmath>

#include "doctest.h"
#include "sdlstm/matrix.hpp"
#include "sdlstm/threading.hpp"
#include "sdlstm/verify.hpp"

using namespace sdlstm;

namespace {

Matrix<double> random_matrix(index rows, index cols, Rng& rng) {
  Matrix<double> m(rows, cols);
  for (double& v : m.data()) v = rng.next_uniform(-1.0, 1.0);
  return m;
}

}  // namespace

TEST_CASE("matmul matches a hand-computed product") {
  const Matrix<double> a = Matrix<double>::from_rows({{1, 2, 3}, {4, 5, 6}});
  const Matrix<double> b = Matrix<double>::from_rows({{7, 8}, {9, 10}, {11, 12}});
  const Matrix<double> c = matmul(a, b);
  CHECK(c.rows() == 2);
  CHECK(c.cols() == 2);
  CHECK(c(0, 0) == 58.0);
  CHECK(c(0, 1) == 64.0);
  CHECK(c(1, 0) == 139.0);
  CHECK(c(1, 1) == 154.0);
}

TEST_CASE("blocked matmul agrees with the naive triple loop across shapes") {
  Rng rng(21);
  // Spans both block boundaries: kb 64, nb 512.
  for (const auto& [r, k, c] : {std::tuple<index, index, index>{1, 1, 1},
                                {3, 5, 7},
                                {8, 64, 65},
                                {2, 65, 513},
                                {20, 128, 512},
                                {5, 200, 70}}) {
    const Matrix<double> a = random_matrix(r, k, rng);
    const Matrix<double> b = random_matrix(k, c, rng);
    const Matrix<double> got = matmul(a, b);
    const Matrix<double> want = naive_matmul(a, b);
    for (index i = 0; i < got.size(); ++i) {
      CHECK(rel_error(got.data()[i], want.data()[i]) < 1e-12);
    }
  }
}

TEST_CASE("matmul accumulate adds onto the existing output") {
  Rng rng(3);
  const Matrix<double> a = random_matrix(4, 6, rng);
  const Matrix<double> b = random_matrix(6, 5, rng);
  Matrix<double> out = random_matrix(4, 5, rng);
  const Matrix<double> base = out;
  matmul_into(out, a, b, true);
  const Matrix<double> prod = matmul(a, b);
  for (index i = 0; i < out.size(); ++i) {
    CHECK(out.data()[i] == doctest::Approx(base.data()[i] + prod.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("matmul rejects mismatched shapes") {
  const Matrix<double> a(2, 3);
  const Matrix<double> b(4, 2);
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("results are identical for any kernel thread count") {
  Rng rng(8);
  const Matrix<double> a = random_matrix(37, 130, rng);
  const Matrix<double> b = random_matrix(130, 513, rng);
  const Matrix<double> single = matmul(a, b);
  set_kernel_threads(4);
  const Matrix<double> multi = matmul(a, b);
  set_kernel_threads(1);
  for (index i = 0; i < single.size(); ++i) CHECK(single.data()[i] == multi.data()[i]);
}

TEST_CASE("transpose") {
  const Matrix<double> a = Matrix<double>::from_rows({{1, 2, 3}, {4, 5, 6}});
  const Matrix<double> t = transpose(a);
  CHECK(t.rows() == 3);
  CHECK(t.cols() == 2);
  CHECK(t(0, 1) == 4.0);
  CHECK(t(2, 0) == 3.0);
  const Matrix<double> back = transpose(t);
  for (index i = 0; i < a.size(); ++i) CHECK(a.data()[i] == back.data()[i]);
}

TEST_CASE("elementwise ops") {
  const Matrix<double> a = Matrix<double>::from_rows({{1, -2}, {3, 4}});
  const Matrix<double> b = Matrix<double>::from_rows({{5, 6}, {-7, 8}});
  const Matrix<double> sum = elementwise(ElemwiseOp::add, a, b);
  const Matrix<double> diff = elementwise(ElemwiseOp::sub, a, b);
  const Matrix<double> prod = elementwise(ElemwiseOp::hadamard, a, b);
  CHECK(sum(0, 0) == 6.0);
  CHECK(sum(1, 0) == -4.0);
  CHECK(diff(0, 1) == -8.0);
  CHECK(prod(1, 1) == 32.0);
  CHECK(prod(0, 1) == -12.0);
}

TEST_CASE("activations match the scalar definitions") {
  Rng rng(5);
  const Matrix<double> x = random_matrix(3, 4, rng);
  const Matrix<double> s = activate(Activation::sigmoid, x);
  const Matrix<double> th = activate(Activation::tanh, x);
  for (index i = 0; i < x.size(); ++i) {
    CHECK(s.data()[i] == doctest::Approx(1.0 / (1.0 + std::exp(-x.data()[i]))).epsilon(1e-15));
    CHECK(th.data()[i] == doctest::Approx(std::tanh(x.data()[i])).epsilon(1e-15));
  }
}

TEST_CASE("activation gradients are computed from the activated value") {
  Rng rng(6);
  const Matrix<double> x = random_matrix(2, 5, rng);
  const Matrix<double> up = random_matrix(2, 5, rng);
  const Matrix<double> s = activate(Activation::sigmoid, x);
  const Matrix<double> th = activate(Activation::tanh, x);
  const Matrix<double> gs = activation_grad(Activation::sigmoid, s, up);
  const Matrix<double> gt = activation_grad(Activation::tanh, th, up);
  for (index i = 0; i < x.size(); ++i) {
    const double sv = s.data()[i];
    const double tv = th.data()[i];
    CHECK(gs.data()[i] == doctest::Approx(sv * (1.0 - sv) * up.data()[i]).epsilon(1e-14));
    CHECK(gt.data()[i] == doctest::Approx((1.0 - tv * tv) * up.data()[i]).epsilon(1e-14));
  }
}

TEST_CASE("gather and scatter columns") {
  const Matrix<double> x = Matrix<double>::from_rows({{1, 2, 3, 4}, {5, 6, 7, 8}});
  const std::vector<index> keep{0, 2};
  const Matrix<double> g = gather_columns(x, keep);
  CHECK(g.rows() == 2);
  CHECK(g.cols() == 2);
  CHECK(g(0, 1) == 3.0);
  CHECK(g(1, 0) == 5.0);

  const Matrix<double> back = scatter_columns(g, keep, 4);
  CHECK(back(0, 0) == 1.0);
  CHECK(back(0, 1) == 0.0);  // dropped columns come back as exact zeros
  CHECK(back(0, 2) == 3.0);
  CHECK(back(1, 3) == 0.0);

  Matrix<double> accum = Matrix<double>::from_rows({{10, 10, 10, 10}, {10, 10, 10, 10}});
  scatter_columns_into(accum, g, keep, 4, 2.0, true);
  CHECK(accum(0, 0) == 12.0);   // 10 + 2 * 1
  CHECK(accum(0, 1) == 10.0);   // untouched by accumulate
  CHECK(accum(1, 2) == 24.0);   // 10 + 2 * 7
}

TEST_CASE("gather and scatter rows") {
  const Matrix<double> x = Matrix<double>::from_rows({{1, 2}, {3, 4}, {5, 6}});
  const std::vector<index> keep{1, 2};
  const Matrix<double> g = gather_rows(x, keep);
  CHECK(g.rows() == 2);
  CHECK(g(0, 0) == 3.0);
  CHECK(g(1, 1) == 6.0);

  const Matrix<double> back = scatter_rows(g, keep, 3);
  CHECK(back(0, 0) == 0.0);
  CHECK(back(1, 0) == 3.0);
  CHECK(back(2, 1) == 6.0);

  Matrix<double> accum(3, 2);
  accum.fill(1.0);
  scatter_rows_into(accum, g, keep, 3, 3.0, true);
  CHECK(accum(0, 0) == 1.0);
  CHECK(accum(1, 0) == 10.0);  // 1 + 3 * 3
  CHECK(accum(2, 1) == 19.0);  // 1 + 3 * 6
}

TEST_CASE("keep indices are validated") {
  CHECK_NOTHROW(check_keep_indices({0, 1, 3}, 4));
  CHECK_THROWS_AS(check_keep_indices({0, 4}, 4), ValueError);
  CHECK_THROWS_AS(check_keep_indices({1, 1}, 4), ValueError);
  CHECK_THROWS_AS(check_keep_indices({2, 1}, 4), ValueError);
}

TEST_CASE("resize zero-fills even at an unchanged shape") {
  // Scatter with accumulate=false relies on this.
  Matrix<double> m(2, 2);
  m.fill(7.0);
  m.resize(2, 2);
  for (index i = 0; i < m.size(); ++i) CHECK(m.data()[i] == 0.0);
}

TEST_CASE("from_rows shapes and ragged rejection") {
  const Matrix<double> m = Matrix<double>::from_rows({{1, 2, 3}});
  CHECK(m.rows() == 1);
  CHECK(m.cols() == 3);
  CHECK_THROWS_AS(Matrix<double>::from_rows({{1, 2}, {3}}), ShapeError);
}
