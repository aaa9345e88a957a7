#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "dragon/diversity.hpp"
#include "dragon/errors.hpp"
#include "dragon/eval_stats.hpp"
#include "dragon/gauss_stats.hpp"
#include "dragon/parallel.hpp"
#include "test_util.hpp"

using namespace dragon;
using testutil::random_matrix;

namespace {

template <class Fn>
auto with_threads(int n, Fn&& fn) {
#ifdef _OPENMP
  const int before = omp_get_max_threads();
  omp_set_num_threads(n);
  auto out = fn();
  omp_set_num_threads(before);
  return out;
#else
  (void)n;
  return fn();
#endif
}

}  // namespace

TEST_CASE("chunk bookkeeping") {
  CHECK(par::chunk_count(0) == 0);
  CHECK(par::chunk_count(1) == 1);
  CHECK(par::chunk_count(par::kChunk) == 1);
  CHECK(par::chunk_count(par::kChunk + 1) == 2);
}

TEST_CASE("for_each_index covers every element exactly once") {
  std::vector<int> hits(1000, 0);
  par::for_each_index(hits.size(), [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
}

TEST_CASE("exceptions inside parallel regions surface to the caller") {
  CHECK_THROWS_AS(par::for_each_index(100,
                                      [&](std::size_t i) {
                                        if (i == 37) throw InvalidInput("boom");
                                      }),
                  InvalidInput);
}

TEST_CASE("kernel results do not depend on the thread count") {
  const Matrix x = random_matrix(3000, 12, 5);
  auto stats1 = with_threads(1, [&] { return stats::accumulate_stats(x); });
  auto stats4 = with_threads(4, [&] { return stats::accumulate_stats(x); });
  CHECK(stats1.mean == stats4.mean);
  CHECK(stats1.cov.data() == stats4.cov.data());

  const Matrix v = random_matrix(300, 9, 6);
  const double v1 = with_threads(1, [&] { return diversity::vendi_score(v); });
  const double v4 = with_threads(4, [&] { return diversity::vendi_score(v); });
  CHECK(v1 == v4);

  const Matrix model = random_matrix(128, 4, 7);
  const Matrix base = random_matrix(128, 4, 8);
  const auto ref = stats::accumulate_stats(random_matrix(128, 4, 9));
  const double b1 = with_threads(
      1, [&] { return evalstats::bootstrap_dataset_win_rate(model, base, ref, 250, 20, 3); });
  const double b4 = with_threads(
      4, [&] { return evalstats::bootstrap_dataset_win_rate(model, base, ref, 250, 20, 3); });
  CHECK(b1 == b4);
}

TEST_CASE("parallel kernels agree with their serial references") {
  const Matrix x = random_matrix(777, 10, 15);
  auto par_stats = stats::accumulate_stats(x);
  auto ser_stats = stats::accumulate_stats_serial(x);
  for (std::size_t i = 0; i < par_stats.mean.size(); ++i)
    CHECK(par_stats.mean[i] == doctest::Approx(ser_stats.mean[i]).epsilon(1e-13));
  for (std::size_t i = 0; i < par_stats.cov.data().size(); ++i)
    CHECK(par_stats.cov.data()[i] == doctest::Approx(ser_stats.cov.data()[i]).epsilon(1e-12));

  const Matrix v = random_matrix(120, 7, 16);
  CHECK(diversity::vendi_score(v) ==
        doctest::Approx(diversity::vendi_score_serial(v)).epsilon(1e-12));

  const Matrix model = random_matrix(96, 3, 17);
  const Matrix base = random_matrix(96, 3, 18);
  const auto ref = stats::accumulate_stats(random_matrix(96, 3, 19));
  CHECK(evalstats::bootstrap_dataset_win_rate(model, base, ref, 300, 16, 23) ==
        evalstats::bootstrap_dataset_win_rate_serial(model, base, ref, 300, 16, 23));
}
