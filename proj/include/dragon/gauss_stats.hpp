#pragma once

#include <cstddef>

#include "dragon/matrix.hpp"

namespace dragon::stats {

/// Mean vector and covariance matrix of an embedding set, plus the number of
/// samples they summarize. Covariance uses the n-1 divisor; a single sample
/// has an all-zero covariance.
struct GaussStats {
  std::vector<double> mean;
  Matrix cov;  // dim x dim, symmetric
  std::size_t count = 0;

  std::size_t dim() const { return mean.size(); }

  /// Symmetry / PSD / count sanity checks. Throws InvalidInput.
  void validate() const;
};

/// Two-pass mean and sample covariance over the rows of x (OpenMP kernel).
GaussStats accumulate_stats(const EmbeddingMatrix& x);

/// Plain single-threaded reference used by tests and the kernel benchmark.
GaussStats accumulate_stats_serial(const EmbeddingMatrix& x);

/// Combines two summaries as if their underlying rows were concatenated.
GaussStats merge_stats(const GaussStats& a, const GaussStats& b);

/// Symmetric PSD square root via eigendecomposition. Eigenvalues below
/// -tolerance throw NotPsd; eigenvalues in [-tolerance, 0] clamp to zero.
Matrix matrix_sqrt_psd(const Matrix& m, double tolerance = 1e-8);

/// Sum of the square roots of the (clamped) eigenvalues of a symmetric PSD
/// matrix, i.e. trace(matrix_sqrt_psd(m)) without forming the root.
double trace_sqrt_psd(const Matrix& m, double tolerance = 1e-8);

/// Frechet distance between two Gaussians:
///   ||mu_a - mu_b||^2 + tr(cov_a) + tr(cov_b)
///     - 2 tr((cov_a^1/2 cov_b cov_a^1/2)^1/2),
/// clamped to be non-negative.
double frechet_distance(const GaussStats& a, const GaussStats& b);

}  // namespace dragon::stats
