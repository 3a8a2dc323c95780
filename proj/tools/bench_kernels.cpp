// Times the OpenMP kernel path against the serial reference on the matmul
// layouts the training loop actually uses, and reports GFLOP/s plus the
// parallel speedup. Results are checked bitwise while timing: the two paths
// share row kernels, so any divergence is a bug.
//
// Usage: bench_kernels [reps]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include "graphnav/kernels.hpp"
#include "graphnav/rng.hpp"

using namespace graphnav;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Case {
  const char* name;
  int m, k, n;
};

using Fn = void (*)(const double*, const double*, double*, int, int, int);

double time_matmul(Fn fn, const std::vector<double>& a, const std::vector<double>& b,
                   std::vector<double>& c, int m, int k, int n, int reps) {
  fn(a.data(), b.data(), c.data(), m, k, n);  // warm-up
  const auto t0 = Clock::now();
  for (int r = 0; r < reps; ++r) fn(a.data(), b.data(), c.data(), m, k, n);
  return seconds_since(t0) / reps;
}

}  // namespace

int main(int argc, char** argv) {
  const int reps = argc > 1 ? std::atoi(argv[1]) : 20;
  std::printf("threads available: %d (OpenMP %s)\n", kernels::max_threads(),
              kernels::parallel_available() ? "active" : "inactive or single-core");
  std::printf("%-28s %10s %12s %12s %9s\n", "case", "GFLOP", "serial GF/s", "omp GF/s",
              "speedup");

  const Case cases[] = {
      {"decoder row [18x128x128]", 18, 128, 128},
      {"decoder mlp [18x128x512]", 18, 128, 512},
      {"batch fwd  [128x128x512]", 128, 128, 512},
      {"square     [256x256x256]", 256, 256, 256},
      {"square     [512x512x512]", 512, 512, 512},
  };

  Rng rng(1234);
  for (const auto& cs : cases) {
    std::vector<double> a(static_cast<size_t>(cs.m) * cs.k);
    std::vector<double> b(static_cast<size_t>(cs.k) * cs.n);
    std::vector<double> c_ser(static_cast<size_t>(cs.m) * cs.n);
    std::vector<double> c_par(c_ser.size());
    for (auto& v : a) v = rng.uniform(-1.0, 1.0);
    for (auto& v : b) v = rng.uniform(-1.0, 1.0);

    const double flop = 2.0 * cs.m * cs.k * cs.n;
    const double ts = time_matmul(&kernels::serial::matmul_nn, a, b, c_ser, cs.m, cs.k,
                                  cs.n, reps);
    const double tp = time_matmul(&kernels::matmul_nn, a, b, c_par, cs.m, cs.k, cs.n, reps);
    if (std::memcmp(c_ser.data(), c_par.data(), c_ser.size() * sizeof(double)) != 0) {
      std::fprintf(stderr, "FATAL: omp path diverges from serial reference on %s\n",
                   cs.name);
      return 1;
    }
    std::printf("%-28s %10.3f %12.2f %12.2f %8.2fx\n", cs.name, flop * 1e-9,
                flop / ts * 1e-9, flop / tp * 1e-9, ts / tp);
  }
  std::puts("(bitwise agreement between serial and omp paths verified on every case)");
  return 0;
}
