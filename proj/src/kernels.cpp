#include "graphnav/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace graphnav::kernels {

namespace {

std::atomic<int> g_max_threads{
#ifdef _OPENMP
    0  // 0 = resolve from omp_get_max_threads() on first use
#else
    1
#endif
};

int resolve_max_threads() {
  int v = g_max_threads.load(std::memory_order_relaxed);
  if (v > 0) return v;
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

// Work sizes below this many multiply-adds are not worth a parallel region.
constexpr long long kParallelGrain = 1 << 16;

bool go_parallel(long long flops) {
#ifdef _OPENMP
  return resolve_max_threads() > 1 && flops >= kParallelGrain && !omp_in_parallel();
#else
  (void)flops;
  return false;
#endif
}

// --- shared row routines ------------------------------------------------
// One output row per call; the k-loop order fixes the reduction order of
// every output element, which is what makes serial and parallel runs agree
// bitwise.

inline void row_nn(const double* __restrict a, const double* __restrict b,
                   double* __restrict c, int i, int k, int n, bool accumulate) {
  double* __restrict crow = c + static_cast<size_t>(i) * n;
  if (!accumulate) std::memset(crow, 0, sizeof(double) * static_cast<size_t>(n));
  const double* __restrict arow = a + static_cast<size_t>(i) * k;
  for (int l = 0; l < k; ++l) {
    const double av = arow[l];
    const double* __restrict brow = b + static_cast<size_t>(l) * n;
    for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

inline void row_nt(const double* __restrict a, const double* __restrict b,
                   double* __restrict c, int i, int k, int n, bool accumulate) {
  const double* __restrict arow = a + static_cast<size_t>(i) * k;
  double* __restrict crow = c + static_cast<size_t>(i) * n;
  for (int j = 0; j < n; ++j) {
    const double* __restrict brow = b + static_cast<size_t>(j) * k;
    double acc = 0.0;
    for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
    crow[j] = accumulate ? crow[j] + acc : acc;
  }
}

inline void row_tn(const double* __restrict a, const double* __restrict b,
                   double* __restrict c, int i, int k, int n, int m, bool accumulate) {
  double* __restrict crow = c + static_cast<size_t>(i) * n;
  if (!accumulate) std::memset(crow, 0, sizeof(double) * static_cast<size_t>(n));
  for (int l = 0; l < k; ++l) {
    const double av = a[static_cast<size_t>(l) * m + i];
    const double* __restrict brow = b + static_cast<size_t>(l) * n;
    for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

inline double gelu_one(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_grad_one(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

}  // namespace

int max_threads() { return resolve_max_threads(); }

void set_max_threads(int n) { g_max_threads.store(std::max(1, n), std::memory_order_relaxed); }

bool parallel_available() {
#ifdef _OPENMP
  return resolve_max_threads() > 1;
#else
  return false;
#endif
}

namespace serial {

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) row_nn(a, b, c, i, k, n, false);
}
void matmul_nn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) row_nn(a, b, c, i, k, n, true);
}
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) row_nt(a, b, c, i, k, n, false);
}
void matmul_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) row_nt(a, b, c, i, k, n, true);
}
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) row_tn(a, b, c, i, k, n, m, false);
}
void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) row_tn(a, b, c, i, k, n, m, true);
}

void gelu_forward(const double* x, double* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = gelu_one(x[i]);
}
void gelu_backward_acc(const double* x, const double* dy, double* dx, size_t n) {
  for (size_t i = 0; i < n; ++i) dx[i] += gelu_grad_one(x[i]) * dy[i];
}

}  // namespace serial

#ifdef _OPENMP
#define GRAPHNAV_PAR_ROWS(m, flops, body)                         \
  do {                                                            \
    if (go_parallel(flops)) {                                     \
      _Pragma("omp parallel for schedule(static)")                \
      for (int i = 0; i < (m); ++i) { body; }                     \
    } else {                                                      \
      for (int i = 0; i < (m); ++i) { body; }                     \
    }                                                             \
  } while (0)
#else
#define GRAPHNAV_PAR_ROWS(m, flops, body)                         \
  do {                                                            \
    (void)go_parallel(0);                                         \
    for (int i = 0; i < (m); ++i) { body; }                       \
  } while (0)
#endif

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n) {
  GRAPHNAV_PAR_ROWS(m, 1LL * m * k * n, row_nn(a, b, c, i, k, n, false));
}
void matmul_nn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  GRAPHNAV_PAR_ROWS(m, 1LL * m * k * n, row_nn(a, b, c, i, k, n, true));
}
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  GRAPHNAV_PAR_ROWS(m, 1LL * m * k * n, row_nt(a, b, c, i, k, n, false));
}
void matmul_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  GRAPHNAV_PAR_ROWS(m, 1LL * m * k * n, row_nt(a, b, c, i, k, n, true));
}
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  GRAPHNAV_PAR_ROWS(m, 1LL * m * k * n, row_tn(a, b, c, i, k, n, m, false));
}
void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  GRAPHNAV_PAR_ROWS(m, 1LL * m * k * n, row_tn(a, b, c, i, k, n, m, true));
}

void gelu_forward(const double* x, double* y, size_t n) {
  const long long work = static_cast<long long>(n) * 8;  // tanh is pricey
  if (go_parallel(work)) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long i = 0; i < static_cast<long long>(n); ++i)
      y[i] = gelu_one(x[i]);
  } else {
    serial::gelu_forward(x, y, n);
  }
}

void gelu_backward_acc(const double* x, const double* dy, double* dx, size_t n) {
  const long long work = static_cast<long long>(n) * 8;
  if (go_parallel(work)) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long i = 0; i < static_cast<long long>(n); ++i)
      dx[i] += gelu_grad_one(x[i]) * dy[i];
  } else {
    serial::gelu_backward_acc(x, dy, dx, n);
  }
}

}  // namespace graphnav::kernels
