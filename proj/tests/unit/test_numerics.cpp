// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "common/test_util.hpp"
#include "rqmoe/errors.hpp"
#include "rqmoe/numerics.hpp"

using namespace rqmoe;

TEST_CASE("matmul small example") {
  const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  const Matrix b = Matrix::from_rows({{5, 6}, {7, 8}});
  CHECK(matmul(a, b) == Matrix::from_rows({{19, 22}, {43, 50}}));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const Matrix a(2, 3);
  const Matrix b(2, 3);
  try {
    (void)matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
  }
}

TEST_CASE("matvec rejects wrong length") {
  const std::vector<double> x{1.0, 2.0};
  CHECK_THROWS_AS((void)matvec(Matrix(3, 3), x), ShapeError);
}

TEST_CASE("identity product is bit-exact") {
  CounterRng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.uniform_below(12);
    const Matrix a = testing::random_matrix(rng, n, n, -1e3, 1e3);
    CHECK(matmul(Matrix::identity(n), a) == a);
    CHECK(matmul(a, Matrix::identity(n)) == a);
  }
}

TEST_CASE("matrix rejects non-finite values and bad lengths") {
  CHECK_THROWS_AS(Matrix(2, 2, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Matrix(1, 2, {1, std::numeric_limits<double>::quiet_NaN()}), ArgumentError);
  CHECK_THROWS_AS(Matrix(1, 1, {std::numeric_limits<double>::infinity()}), ArgumentError);
  CHECK_THROWS_AS(Matrix::from_rows({{1, 2}, {3}}), ShapeError);
}

TEST_CASE("softmax examples") {
  const std::vector<double> z{0.0, 0.0};
  const auto p = softmax_row(z);
  CHECK(p[0] == 0.5);
  CHECK(p[1] == 0.5);

  const std::vector<double> big{1000.0, 1000.0, 1000.0};
  for (double v : softmax_row(big)) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  const std::vector<double> l{0.0, std::log(3.0), std::log(9.0)};
  const auto q = softmax_row(l);
  CHECK(q[0] == doctest::Approx(1.0 / 13.0).epsilon(1e-14));
  CHECK(q[2] == doctest::Approx(9.0 / 13.0).epsilon(1e-14));

  const std::vector<double> empty;
  CHECK_THROWS_AS((void)softmax_row(empty), ArgumentError);
}

TEST_CASE("softmax sums to one and is shift invariant") {
  CounterRng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.uniform_below(16);
    std::vector<double> v(n);
    for (double& x : v) x = -20.0 + 40.0 * rng.uniform();
    const auto p = softmax_row(v);
    double sum = 0.0;
    for (double x : p) {
      CHECK(x >= 0.0);
      sum += x;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);

    const double c = -50.0 + 100.0 * rng.uniform();
    std::vector<double> shifted(v);
    for (double& x : shifted) x += c;
    const auto ps = softmax_row(shifted);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(ps[i] - p[i]) <= 1e-12);
  }
}

TEST_CASE("topk orders by value with lower index on ties") {
  const std::vector<double> s{0.1, 0.7, 0.2};
  CHECK(topk_indices(s, 2) == std::vector<std::size_t>{1, 2});
  const std::vector<double> tie{0.5, 0.5, 0.5};
  CHECK(topk_indices(tie, 2) == std::vector<std::size_t>{0, 1});
  CHECK_THROWS_AS((void)topk_indices(s, 0), ArgumentError);
  CHECK_THROWS_AS((void)topk_indices(s, 4), ArgumentError);
}

TEST_CASE("topk over full length is a permutation sorted descending") {
  CounterRng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.uniform_below(20);
    std::vector<double> v(n);
    // Coarse values so ties are common.
    for (double& x : v) x = static_cast<double>(rng.uniform_below(5));
    const auto idx = topk_indices(v, n);
    std::vector<std::size_t> sorted(idx);
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < n; ++i) CHECK(sorted[i] == i);
    for (std::size_t i = 1; i < n; ++i) {
      CHECK(v[idx[i - 1]] >= v[idx[i]]);
      if (v[idx[i - 1]] == v[idx[i]]) CHECK(idx[i - 1] < idx[i]);
    }
  }
}

TEST_CASE("column norms example and scaling") {
  const Matrix x = Matrix::from_rows({{3, 0}, {4, 1}});
  CHECK(col_l2_norms(x) == std::vector<double>{5.0, 1.0});

  CounterRng rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix a = testing::random_matrix(rng, 1 + rng.uniform_below(8), 1 + rng.uniform_below(8));
    const double c = 0.1 + 10.0 * rng.uniform();
    std::vector<double> scaled(a.values());
    for (double& v : scaled) v *= c;
    const auto n1 = col_l2_norms(a);
    const auto n2 = col_l2_norms(Matrix(a.rows(), a.cols(), scaled));
    for (std::size_t j = 0; j < n1.size(); ++j)
      CHECK(std::abs(n2[j] - c * n1[j]) <= 1e-12 * (1.0 + c * n1[j]));
  }
}
