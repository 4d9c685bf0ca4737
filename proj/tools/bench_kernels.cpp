// Times the OpenMP kernels against the serial reference and verifies the
// two paths agree bit for bit.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <vector>

#include "dialcomp/kernels.hpp"
#include "dialcomp/rng.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::vector<double> random_matrix(int rows, int cols, uint64_t seed) {
  dialcomp::Rng rng(seed);
  std::vector<double> m(static_cast<size_t>(rows) * cols);
  for (double& v : m) v = rng.uniform(-1.0, 1.0);
  return m;
}

template <typename F>
double time_best_of(int reps, F&& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = Clock::now();
    fn();
    best = std::min(best, ms_since(t0));
  }
  return best;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double mx = 0.0;
  for (size_t i = 0; i < a.size(); ++i) mx = std::max(mx, std::abs(a[i] - b[i]));
  return mx;
}

}  // namespace

int main() {
  namespace k = dialcomp::kernels;
  std::printf("threads: %d\n", k::max_threads());
  std::printf("%-16s %6s %12s %12s %9s %10s\n", "kernel", "size", "serial(ms)", "openmp(ms)",
              "speedup", "max|diff|");

  const int sizes[] = {64, 128, 256, 512};
  for (int n : sizes) {
    const auto a = random_matrix(n, n, 11);
    const auto b = random_matrix(n, n, 23);
    std::vector<double> c_serial(static_cast<size_t>(n) * n);
    std::vector<double> c_parallel(static_cast<size_t>(n) * n);

    const double ts = time_best_of(3, [&] {
      k::serial::matmul(a.data(), b.data(), c_serial.data(), n, n, n);
    });
    const double tp = time_best_of(3, [&] {
      k::matmul(a.data(), b.data(), c_parallel.data(), n, n, n);
    });
    std::printf("%-16s %6d %12.3f %12.3f %8.2fx %10.2e\n", "matmul", n, ts, tp, ts / tp,
                max_abs_diff(c_serial, c_parallel));
  }

  for (int n : sizes) {
    auto x_serial = random_matrix(n, n, 37);
    auto x_parallel = x_serial;
    const double ts = time_best_of(3, [&] {
      auto x = x_serial;
      k::serial::softmax_rows(x.data(), n, n);
      x_serial = x;
    });
    const double tp = time_best_of(3, [&] {
      auto x = x_parallel;
      k::softmax_rows(x.data(), n, n);
      x_parallel = x;
    });
    std::printf("%-16s %6d %12.3f %12.3f %8.2fx %10.2e\n", "softmax_rows", n, ts, tp, ts / tp,
                max_abs_diff(x_serial, x_parallel));
  }
  return 0;
}
