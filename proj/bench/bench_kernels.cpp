// Serial reference kernels against the OpenMP versions.
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>

#include <omp.h>

#include "sgn/kernels.hpp"

using namespace sgn;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Matrix m(r, c);
  for (double& v : m.values()) v = d(rng);
  return m;
}

double seconds(const std::function<void()>& fn, int reps) {
  fn();  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / reps;
}

void report(const char* name, double serial, double parallel, double diff) {
  std::printf("%-28s serial %9.3f ms  openmp %9.3f ms  speedup %5.2fx  max|diff| %.2e\n", name, serial * 1e3,
              parallel * 1e3, serial / parallel, diff);
}

}  // namespace

int main() {
  std::mt19937_64 rng(42);
  std::printf("threads available: %d\n", omp_get_max_threads());
  for (std::size_t n : {64, 128, 256, 512}) {
    const Matrix a = random_matrix(n, n, rng), b = random_matrix(n, n, rng);
    Matrix cs, cp;
    const int reps = n >= 512 ? 3 : 20;
    const double ts = seconds([&] { kernels::serial::gemm(a, false, b, false, cs); }, reps);
    const double tp = seconds([&] { kernels::gemm(a, false, b, false, cp); }, reps);
    char name[64];
    std::snprintf(name, sizeof(name), "gemm %zux%zu", n, n);
    report(name, ts, tp, max_abs_diff(cs, cp));
  }
  {
    const Matrix x = random_matrix(2048, 512, rng);
    Matrix ys, yp;
    const double ts = seconds([&] { kernels::serial::softmax_rows(x, ys); }, 10);
    const double tp = seconds([&] { kernels::softmax_rows(x, yp); }, 10);
    report("softmax_rows 2048x512", ts, tp, max_abs_diff(ys, yp));
  }
  {
    const Matrix x = random_matrix(2048, 512, rng);
    Matrix ys, yp;
    std::vector<double> is, ip;
    const double ts = seconds([&] { kernels::serial::normalize_rows(x, 1e-5, ys, is); }, 10);
    const double tp = seconds([&] { kernels::normalize_rows(x, 1e-5, yp, ip); }, 10);
    report("normalize_rows 2048x512", ts, tp, max_abs_diff(ys, yp));
  }
  return 0;
}
