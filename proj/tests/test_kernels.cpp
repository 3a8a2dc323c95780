#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <vector>

#include "graphnav/kernels.hpp"
#include "graphnav/rng.hpp"

using namespace graphnav;

namespace {

std::vector<double> random_matrix(int r, int c, Rng& rng) {
  std::vector<double> m(static_cast<size_t>(r) * c);
  for (auto& v : m) v = rng.uniform(-1.0, 1.0);
  return m;
}

// Independent naive oracle: plain j-inner dot products.
std::vector<double> naive_nn(const std::vector<double>& a, const std::vector<double>& b,
                             int m, int k, int n) {
  std::vector<double> c(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int l = 0; l < k; ++l)
        acc += a[static_cast<size_t>(i) * k + l] * b[static_cast<size_t>(l) * n + j];
      c[static_cast<size_t>(i) * n + j] = acc;
    }
  return c;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("matmul_nn matches the naive oracle") {
  Rng rng(11);
  for (auto [m, k, n] : {std::tuple{3, 4, 2}, {17, 33, 9}, {64, 64, 64}}) {
    auto a = random_matrix(m, k, rng);
    auto b = random_matrix(k, n, rng);
    std::vector<double> c(static_cast<size_t>(m) * n);
    kernels::matmul_nn(a.data(), b.data(), c.data(), m, k, n);
    auto ref = naive_nn(a, b, m, k, n);
    for (size_t i = 0; i < c.size(); ++i)
      CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-13));
  }
}

TEST_CASE("nt and tn layouts agree with explicit transposition") {
  Rng rng(12);
  const int m = 7, k = 13, n = 5;
  auto a = random_matrix(m, k, rng);
  auto bt = random_matrix(n, k, rng);  // interpreted as B^T
  std::vector<double> b(static_cast<size_t>(k) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j)
      b[static_cast<size_t>(j) * n + i] = bt[static_cast<size_t>(i) * k + j];

  std::vector<double> c1(static_cast<size_t>(m) * n), c2(c1.size());
  kernels::matmul_nt(a.data(), bt.data(), c1.data(), m, k, n);
  kernels::matmul_nn(a.data(), b.data(), c2.data(), m, k, n);
  for (size_t i = 0; i < c1.size(); ++i)
    CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-13));

  // tn: C = A^T * B with A stored [k x m]
  auto at = random_matrix(k, m, rng);
  std::vector<double> a2(static_cast<size_t>(m) * k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < m; ++j)
      a2[static_cast<size_t>(j) * k + i] = at[static_cast<size_t>(i) * m + j];
  auto bm = random_matrix(k, n, rng);
  std::vector<double> c3(static_cast<size_t>(m) * n), c4(c3.size());
  kernels::matmul_tn(at.data(), bm.data(), c3.data(), m, k, n);
  kernels::matmul_nn(a2.data(), bm.data(), c4.data(), m, k, n);
  for (size_t i = 0; i < c3.size(); ++i)
    CHECK(c3[i] == doctest::Approx(c4[i]).epsilon(1e-13));
}

TEST_CASE("accumulate variants add on top of existing output") {
  Rng rng(13);
  const int m = 6, k = 8, n = 4;
  auto a = random_matrix(m, k, rng);
  auto b = random_matrix(k, n, rng);
  std::vector<double> base = random_matrix(m, n, rng);
  auto c = base;
  kernels::matmul_nn_acc(a.data(), b.data(), c.data(), m, k, n);
  auto prod = naive_nn(a, b, m, k, n);
  for (size_t i = 0; i < c.size(); ++i)
    CHECK(c[i] == doctest::Approx(base[i] + prod[i]).epsilon(1e-12));
}

TEST_CASE("dispatch path is bitwise identical to the serial reference") {
  Rng rng(14);
  // Sizes straddle the parallel grain threshold.
  for (auto [m, k, n] : {std::tuple{4, 8, 4}, {48, 48, 48}, {128, 128, 96}}) {
    auto a = random_matrix(m, k, rng);
    auto b = random_matrix(k, n, rng);
    std::vector<double> c_par(static_cast<size_t>(m) * n), c_ser(c_par.size());
    kernels::matmul_nn(a.data(), b.data(), c_par.data(), m, k, n);
    kernels::serial::matmul_nn(a.data(), b.data(), c_ser.data(), m, k, n);
    CHECK(bitwise_equal(c_par, c_ser));

    auto bt = random_matrix(n, k, rng);
    kernels::matmul_nt(a.data(), bt.data(), c_par.data(), m, k, n);
    kernels::serial::matmul_nt(a.data(), bt.data(), c_ser.data(), m, k, n);
    CHECK(bitwise_equal(c_par, c_ser));

    auto at = random_matrix(k, m, rng);
    auto bm = random_matrix(k, n, rng);
    kernels::matmul_tn(at.data(), bm.data(), c_par.data(), m, k, n);
    kernels::serial::matmul_tn(at.data(), bm.data(), c_ser.data(), m, k, n);
    CHECK(bitwise_equal(c_par, c_ser));
  }
}

TEST_CASE("thread limit can be pinned and restored") {
  const int before = kernels::max_threads();
  kernels::set_max_threads(1);
  CHECK(kernels::max_threads() == 1);
  CHECK_FALSE(kernels::parallel_available());
  Rng rng(15);
  const int m = 96, k = 96, n = 96;
  auto a = random_matrix(m, k, rng);
  auto b = random_matrix(k, n, rng);
  std::vector<double> c1(static_cast<size_t>(m) * n), c2(c1.size());
  kernels::matmul_nn(a.data(), b.data(), c1.data(), m, k, n);
  kernels::set_max_threads(before);
  kernels::matmul_nn(a.data(), b.data(), c2.data(), m, k, n);
  CHECK(bitwise_equal(c1, c2));
}

TEST_CASE("gelu forward/backward dispatch matches serial bitwise") {
  Rng rng(16);
  const size_t n = 1 << 15;
  std::vector<double> x(n), y1(n), y2(n), dy(n), dx1(n, 0.25), dx2(n, 0.25);
  for (auto& v : x) v = rng.uniform(-3.0, 3.0);
  for (auto& v : dy) v = rng.uniform(-1.0, 1.0);
  kernels::gelu_forward(x.data(), y1.data(), n);
  kernels::serial::gelu_forward(x.data(), y2.data(), n);
  CHECK(bitwise_equal(y1, y2));
  kernels::gelu_backward_acc(x.data(), dy.data(), dx1.data(), n);
  kernels::serial::gelu_backward_acc(x.data(), dy.data(), dx2.data(), n);
  CHECK(bitwise_equal(dx1, dx2));
}
