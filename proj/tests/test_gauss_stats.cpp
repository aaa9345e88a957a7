#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dragon/errors.hpp"
#include "dragon/gauss_stats.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dragon;
using namespace dragon::stats;
using testutil::random_matrix;
using testutil::random_psd_stats;

TEST_CASE("single row has zero scatter") {
  Matrix x = Matrix::from_rows({{3.0, 4.0}});
  GaussStats s = accumulate_stats(x);
  CHECK(s.count == 1);
  CHECK(s.mean[0] == doctest::Approx(3.0));
  CHECK(s.mean[1] == doctest::Approx(4.0));
  for (double v : s.cov.data()) CHECK(v == 0.0);
}

TEST_CASE("two-point covariance follows the n-1 divisor") {
  Matrix x = Matrix::from_rows({{0.0, 0.0}, {2.0, 2.0}});
  GaussStats s = accumulate_stats(x);
  CHECK(s.mean[0] == doctest::Approx(1.0));
  CHECK(s.mean[1] == doctest::Approx(1.0));
  for (double v : s.cov.data()) CHECK(v == doctest::Approx(2.0));
}

TEST_CASE("standard-normal sample moments land near the truth") {
  Matrix x = random_matrix(1000, 3, 42);
  GaussStats s = accumulate_stats(x);
  for (double m : s.mean) CHECK(std::abs(m) < 0.15);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(s.cov.at(i, i) - 1.0) < 0.2);
}

TEST_CASE("non-finite entries are rejected") {
  Matrix x = Matrix::from_rows({{1.0, std::nan("")}});
  CHECK_THROWS_AS(accumulate_stats(x), InvalidInput);
}

TEST_CASE("merge matches accumulation over the concatenation") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 1 + rng.below(4);
    const std::size_t n = 2 + rng.below(40);
    Matrix all = random_matrix(n, d, rng.next_u64());
    const std::size_t cut = 1 + rng.below(n - 1);
    std::vector<std::size_t> front, back;
    for (std::size_t i = 0; i < n; ++i) (i < cut ? front : back).push_back(i);
    GaussStats merged =
        merge_stats(accumulate_stats(all.take_rows(front)), accumulate_stats(all.take_rows(back)));
    GaussStats whole = accumulate_stats(all);
    CHECK(merged.count == whole.count);
    for (std::size_t i = 0; i < d; ++i)
      CHECK(merged.mean[i] == doctest::Approx(whole.mean[i]).epsilon(1e-9));
    for (std::size_t i = 0; i < d * d; ++i)
      CHECK(merged.cov.data()[i] == doctest::Approx(whole.cov.data()[i]).epsilon(1e-9));
  }
}

TEST_CASE("a zero-count summary is the merge identity") {
  GaussStats s = accumulate_stats(random_matrix(6, 3, 99));
  GaussStats empty;
  empty.mean.assign(3, 0.0);
  empty.cov = Matrix(3, 3);
  empty.count = 0;
  GaussStats merged = merge_stats(s, empty);
  CHECK(merged.count == s.count);
  CHECK(merged.mean == s.mean);
  CHECK(merged.cov.data() == s.cov.data());
  GaussStats flipped = merge_stats(empty, s);
  CHECK(flipped.mean == s.mean);
}

TEST_CASE("merge of singletons equals the pair fit") {
  Matrix a = Matrix::from_rows({{1.0, 2.0}});
  Matrix b = Matrix::from_rows({{3.0, -1.0}});
  Matrix both = Matrix::from_rows({{1.0, 2.0}, {3.0, -1.0}});
  GaussStats merged = merge_stats(accumulate_stats(a), accumulate_stats(b));
  GaussStats whole = accumulate_stats(both);
  for (std::size_t i = 0; i < 2; ++i) CHECK(merged.mean[i] == doctest::Approx(whole.mean[i]));
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(merged.cov.data()[i] == doctest::Approx(whole.cov.data()[i]));
}

TEST_CASE("merge is associative across random three-way splits") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix all = random_matrix(30, 3, rng.next_u64());
    std::vector<std::size_t> p1, p2, p3;
    for (std::size_t i = 0; i < 30; ++i) (i < 7 ? p1 : i < 19 ? p2 : p3).push_back(i);
    GaussStats s1 = accumulate_stats(all.take_rows(p1));
    GaussStats s2 = accumulate_stats(all.take_rows(p2));
    GaussStats s3 = accumulate_stats(all.take_rows(p3));
    GaussStats left = merge_stats(merge_stats(s1, s2), s3);
    GaussStats right = merge_stats(s1, merge_stats(s2, s3));
    for (std::size_t i = 0; i < left.mean.size(); ++i)
      CHECK(left.mean[i] == doctest::Approx(right.mean[i]).epsilon(1e-9));
    for (std::size_t i = 0; i < left.cov.data().size(); ++i)
      CHECK(left.cov.data()[i] == doctest::Approx(right.cov.data()[i]).epsilon(1e-9));
  }
}

TEST_CASE("merge rejects dimension mismatches") {
  GaussStats a = accumulate_stats(random_matrix(4, 2, 1));
  GaussStats b = accumulate_stats(random_matrix(4, 3, 2));
  CHECK_THROWS_AS(merge_stats(a, b), InvalidInput);
}

TEST_CASE("matrix square root on easy fixtures") {
  Matrix eye = Matrix::identity(3);
  Matrix s = matrix_sqrt_psd(eye);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(s.at(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));

  Matrix diag(2, 2);
  diag.at(0, 0) = 4.0;
  diag.at(1, 1) = 9.0;
  Matrix r = matrix_sqrt_psd(diag);
  CHECK(r.at(0, 0) == doctest::Approx(2.0));
  CHECK(r.at(1, 1) == doctest::Approx(3.0));
  CHECK(r.at(0, 1) == doctest::Approx(0.0));
}

TEST_CASE("matrix square root reconstructs random PSD matrices") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t d = 2 + rng.below(6);
    GaussStats s = random_psd_stats(d, rng.next_u64());
    Matrix root = matrix_sqrt_psd(s.cov);
    // S.S should reproduce the input within 1e-6 relative Frobenius error.
    double err = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < d; ++k) acc += root.at(i, k) * root.at(k, j);
        err += (acc - s.cov.at(i, j)) * (acc - s.cov.at(i, j));
        ref += s.cov.at(i, j) * s.cov.at(i, j);
      }
    CHECK(std::sqrt(err / ref) < 1e-6);
    // Output symmetric and PSD (eigenvalues >= -1e-9 via the Jacobi oracle).
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j)
        CHECK(root.at(i, j) == doctest::Approx(root.at(j, i)).epsilon(1e-10));
    auto eig = oracle::jacobi_eig(root.data(), d);
    for (double lam : eig.values) CHECK(lam >= -1e-9);
  }
}

TEST_CASE("matrix square root rejects significantly negative eigenvalues") {
  Matrix m(2, 2);
  m.at(0, 0) = 1.0;
  m.at(1, 1) = -0.5;
  CHECK_THROWS_AS(matrix_sqrt_psd(m), NotPsd);
}

TEST_CASE("tiny negative eigenvalues are clamped to zero") {
  Matrix m(2, 2);
  m.at(0, 0) = 1.0;
  m.at(1, 1) = -5e-9;
  Matrix r = matrix_sqrt_psd(m);
  CHECK(r.at(1, 1) == doctest::Approx(0.0).epsilon(1e-8));
}

TEST_CASE("frechet distance analytic 1D fixtures") {
  GaussStats a{{0.0}, Matrix::from_rows({{1.0}}), 10};
  GaussStats b{{1.0}, Matrix::from_rows({{1.0}}), 10};
  CHECK(frechet_distance(a, b) == doctest::Approx(1.0).epsilon(1e-10));

  GaussStats c{{0.5}, Matrix::from_rows({{4.0}}), 10};
  GaussStats d{{0.5}, Matrix::from_rows({{1.0}}), 10};
  CHECK(frechet_distance(c, d) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("frechet distance identity, symmetry and positivity") {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t dim = 1 + rng.below(6);
    GaussStats a = random_psd_stats(dim, rng.next_u64());
    GaussStats b = random_psd_stats(dim, rng.next_u64());
    CHECK(frechet_distance(a, a) <= 1e-8);
    const double ab = frechet_distance(a, b);
    const double ba = frechet_distance(b, a);
    CHECK(ab >= 0.0);
    CHECK(std::abs(ab - ba) <= 1e-7 * std::max(1.0, std::abs(ab)));
  }
}

TEST_CASE("frechet distance rejects dimension mismatches") {
  GaussStats a = random_psd_stats(2, 1);
  GaussStats b = random_psd_stats(3, 2);
  CHECK_THROWS_AS(frechet_distance(a, b), InvalidInput);
}

TEST_CASE("frechet distance matches the Jacobi oracle") {
  Rng rng(17);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t d = 1 + rng.below(5);
    const std::size_t n = d + 2 + rng.below(20);
    Matrix xa = random_matrix(n, d, rng.next_u64());
    Matrix xb = random_matrix(n, d, rng.next_u64(), 1.5);
    const double lib = frechet_distance(accumulate_stats(xa), accumulate_stats(xb));
    const double ora = oracle::frechet(oracle::fit_moments(xa.data(), n, d),
                                       oracle::fit_moments(xb.data(), n, d));
    CHECK(lib == doctest::Approx(ora).epsilon(1e-9));
  }
}

TEST_CASE("parallel accumulation agrees with the serial reference") {
  Matrix x = random_matrix(1000, 8, 23);
  GaussStats par = accumulate_stats(x);
  GaussStats ser = accumulate_stats_serial(x);
  for (std::size_t i = 0; i < par.mean.size(); ++i)
    CHECK(par.mean[i] == doctest::Approx(ser.mean[i]).epsilon(1e-12));
  for (std::size_t i = 0; i < par.cov.data().size(); ++i)
    CHECK(par.cov.data()[i] == doctest::Approx(ser.cov.data()[i]).epsilon(1e-12));
  // The chunked kernel is bit-deterministic across reruns.
  GaussStats again = accumulate_stats(x);
  CHECK(par.mean == again.mean);
  CHECK(par.cov.data() == again.cov.data());
}
