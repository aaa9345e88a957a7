// Timing comparison between the OpenMP kernels and their serial reference
// implementations. Build in Release for meaningful numbers.

#include <chrono>
#include <cstdio>
#include <functional>

#include "dragon/diversity.hpp"
#include "dragon/eval_stats.hpp"
#include "dragon/gauss_stats.hpp"
#include "dragon/matrix.hpp"
#include "dragon/parallel.hpp"
#include "dragon/rng.hpp"

namespace {

using namespace dragon;

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Matrix m(rows, cols);
  Rng rng(seed);
  for (auto& v : m.data()) v = rng.normal();
  return m;
}

double time_ms(const std::function<void()>& fn, int reps) {
  using clock = std::chrono::steady_clock;
  fn();  // warm up
  const auto t0 = clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void row(const char* name, double serial_ms, double parallel_ms) {
  std::printf("%-28s %10.3f ms %10.3f ms %8.2fx\n", name, serial_ms, parallel_ms,
              serial_ms / parallel_ms);
}

}  // namespace

int main() {
  std::printf("threads: %d\n", par::max_threads());
  std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");

  {
    const Matrix x = random_matrix(20000, 64, 1);
    volatile double sink = 0.0;
    const double s = time_ms([&] { sink = stats::accumulate_stats_serial(x).mean[0]; }, 5);
    const double p = time_ms([&] { sink = stats::accumulate_stats(x).mean[0]; }, 5);
    row("accumulate_stats 20000x64", s, p);
  }
  {
    const Matrix x = random_matrix(1500, 48, 2);
    volatile double sink = 0.0;
    const double s = time_ms([&] { sink = diversity::vendi_score_serial(x); }, 3);
    const double p = time_ms([&] { sink = diversity::vendi_score(x); }, 3);
    row("vendi_score 1500x48", s, p);
  }
  {
    const Matrix model = random_matrix(512, 16, 3);
    const Matrix base = random_matrix(512, 16, 4);
    const stats::GaussStats ref = stats::accumulate_stats(random_matrix(512, 16, 5));
    volatile double sink = 0.0;
    const double s = time_ms(
        [&] { sink = evalstats::bootstrap_dataset_win_rate_serial(model, base, ref, 200, 40, 7); },
        3);
    const double p = time_ms(
        [&] { sink = evalstats::bootstrap_dataset_win_rate(model, base, ref, 200, 40, 7); }, 3);
    row("bootstrap 200x40 d=16", s, p);
  }
  return 0;
}
