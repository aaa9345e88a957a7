#include "dragon/gauss_stats.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <string>

#include "dragon/errors.hpp"
#include "dragon/parallel.hpp"

namespace dragon::stats {

namespace {

using EigenRowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const EigenRowMajor> as_eigen(const Matrix& m) {
  return {m.data().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

Matrix from_eigen(const Eigen::MatrixXd& e) {
  Matrix out(static_cast<std::size_t>(e.rows()), static_cast<std::size_t>(e.cols()));
  for (Eigen::Index r = 0; r < e.rows(); ++r)
    for (Eigen::Index c = 0; c < e.cols(); ++c)
      out.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = e(r, c);
  return out;
}

void require_symmetric(const Matrix& m, const char* what) {
  if (m.rows() != m.cols()) throw InvalidInput(std::string(what) + ": matrix not square");
  double scale = 0.0;
  for (double v : m.data()) scale = std::max(scale, std::abs(v));
  const double tol = 1e-8 * std::max(1.0, scale);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = r + 1; c < m.cols(); ++c)
      if (std::abs(m.at(r, c) - m.at(c, r)) > tol)
        throw InvalidInput(std::string(what) + ": matrix not symmetric");
}

/// Eigendecomposition with the PSD clamp shared by matrix_sqrt_psd and
/// trace_sqrt_psd. Negative eigenvalues beyond the tolerance are an error.
struct ClampedEig {
  Eigen::VectorXd values;  // clamped to >= 0
  Eigen::MatrixXd vectors;
};

ClampedEig clamped_eig_psd(const Matrix& m, double tolerance, bool want_vectors) {
  require_symmetric(m, "matrix_sqrt_psd");
  const auto em = as_eigen(m);
  const Eigen::MatrixXd sym = 0.5 * (em + em.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(
      sym, want_vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NotPsd("matrix_sqrt_psd: eigendecomposition failed");
  ClampedEig out;
  out.values = solver.eigenvalues();
  for (Eigen::Index i = 0; i < out.values.size(); ++i) {
    if (out.values(i) < -tolerance)
      throw NotPsd("matrix_sqrt_psd: eigenvalue " + std::to_string(out.values(i)) +
                   " below -" + std::to_string(tolerance));
    if (out.values(i) < 0.0) out.values(i) = 0.0;
  }
  if (want_vectors) out.vectors = solver.eigenvectors();
  return out;
}

struct MomentPartial {
  std::vector<double> sum;
  std::vector<double> centered;  // dim x dim accumulator in pass 2
};

}  // namespace

void GaussStats::validate() const {
  if (count < 1) throw InvalidInput("GaussStats: count must be >= 1");
  if (cov.rows() != dim() || cov.cols() != dim())
    throw InvalidInput("GaussStats: covariance shape mismatch");
  double scale = 0.0;
  for (double v : cov.data()) scale = std::max(scale, std::abs(v));
  const double tol = 1e-10 * std::max(1.0, scale);
  for (std::size_t r = 0; r < cov.rows(); ++r)
    for (std::size_t c = r + 1; c < cov.cols(); ++c)
      if (std::abs(cov.at(r, c) - cov.at(c, r)) > tol)
        throw InvalidInput("GaussStats: covariance not symmetric");
}

GaussStats accumulate_stats(const EmbeddingMatrix& x) {
  x.validate("accumulate_stats");
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();

  // Pass 1: mean. Chunk partials fold in fixed order for determinism.
  auto sums = par::map_chunks<std::vector<double>>(n, [&](std::size_t b, std::size_t e) {
    std::vector<double> s(d, 0.0);
    for (std::size_t r = b; r < e; ++r) {
      auto row = x.row(r);
      for (std::size_t c = 0; c < d; ++c) s[c] += row[c];
    }
    return s;
  });
  GaussStats out;
  out.count = n;
  out.mean.assign(d, 0.0);
  for (const auto& s : sums)
    for (std::size_t c = 0; c < d; ++c) out.mean[c] += s[c];
  for (std::size_t c = 0; c < d; ++c) out.mean[c] /= static_cast<double>(n);

  // Pass 2: centered outer products.
  out.cov = Matrix(d, d);
  if (n > 1) {
    auto outers = par::map_chunks<std::vector<double>>(n, [&](std::size_t b, std::size_t e) {
      std::vector<double> acc(d * d, 0.0);
      std::vector<double> delta(d);
      for (std::size_t r = b; r < e; ++r) {
        auto row = x.row(r);
        for (std::size_t c = 0; c < d; ++c) delta[c] = row[c] - out.mean[c];
        for (std::size_t i = 0; i < d; ++i) {
          const double di = delta[i];
          for (std::size_t j = i; j < d; ++j) acc[i * d + j] += di * delta[j];
        }
      }
      return acc;
    });
    auto& cov = out.cov.data();
    for (const auto& acc : outers)
      for (std::size_t k = 0; k < cov.size(); ++k) cov[k] += acc[k];
    const double inv = 1.0 / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i; j < d; ++j) {
        const double v = out.cov.at(i, j) * inv;
        out.cov.at(i, j) = v;
        out.cov.at(j, i) = v;
      }
  }
  return out;
}

GaussStats accumulate_stats_serial(const EmbeddingMatrix& x) {
  x.validate("accumulate_stats");
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  GaussStats out;
  out.count = n;
  out.mean.assign(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out.mean[c] += x.at(r, c);
  for (std::size_t c = 0; c < d; ++c) out.mean[c] /= static_cast<double>(n);
  out.cov = Matrix(d, d);
  if (n > 1) {
    std::vector<double> delta(d);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < d; ++c) delta[c] = x.at(r, c) - out.mean[c];
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) out.cov.at(i, j) += delta[i] * delta[j];
    }
    for (auto& v : out.cov.data()) v /= static_cast<double>(n - 1);
  }
  return out;
}

GaussStats merge_stats(const GaussStats& a, const GaussStats& b) {
  // A zero-count summary is the neutral element of the merge.
  if (a.count == 0) return b;
  if (b.count == 0) return a;
  if (a.dim() != b.dim()) throw InvalidInput("merge_stats: dimension mismatch");
  const std::size_t d = a.dim();
  const double na = static_cast<double>(a.count);
  const double nb = static_cast<double>(b.count);
  const double n = na + nb;

  GaussStats out;
  out.count = a.count + b.count;
  out.mean.assign(d, 0.0);
  std::vector<double> delta(d);
  for (std::size_t c = 0; c < d; ++c) {
    delta[c] = b.mean[c] - a.mean[c];
    out.mean[c] = a.mean[c] + delta[c] * nb / n;
  }
  // Chan et al. pairwise update on the scatter matrices M2 = (n-1) * cov.
  out.cov = Matrix(d, d);
  const double cross = na * nb / n;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double m2 = a.cov.at(i, j) * (na - 1.0) + b.cov.at(i, j) * (nb - 1.0) +
                  cross * delta[i] * delta[j];
      out.cov.at(i, j) = m2 / (n - 1.0);
    }
  return out;
}

Matrix matrix_sqrt_psd(const Matrix& m, double tolerance) {
  ClampedEig eig = clamped_eig_psd(m, tolerance, true);
  Eigen::VectorXd roots = eig.values.array().sqrt();
  Eigen::MatrixXd s = eig.vectors * roots.asDiagonal() * eig.vectors.transpose();
  s = 0.5 * (s + s.transpose().eval());
  return from_eigen(s);
}

double trace_sqrt_psd(const Matrix& m, double tolerance) {
  ClampedEig eig = clamped_eig_psd(m, tolerance, false);
  double t = 0.0;
  for (Eigen::Index i = 0; i < eig.values.size(); ++i) t += std::sqrt(eig.values(i));
  return t;
}

double frechet_distance(const GaussStats& a, const GaussStats& b) {
  if (a.dim() != b.dim()) throw InvalidInput("frechet_distance: dimension mismatch");
  const std::size_t d = a.dim();

  double mean_term = 0.0;
  for (std::size_t c = 0; c < d; ++c) {
    const double diff = a.mean[c] - b.mean[c];
    mean_term += diff * diff;
  }
  double trace_a = 0.0, trace_b = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    trace_a += a.cov.at(i, i);
    trace_b += b.cov.at(i, i);
  }

  const Matrix sqrt_a = matrix_sqrt_psd(a.cov);
  const Eigen::MatrixXd sa = as_eigen(sqrt_a);
  const Eigen::MatrixXd inner = sa * as_eigen(b.cov) * sa;
  Matrix inner_sym = from_eigen(0.5 * (inner + inner.transpose().eval()));
  // Rounding in the triple product scales with the covariance magnitude, so
  // the PSD tolerance for the cross term is scale-relative.
  double scale = 0.0;
  for (double v : inner_sym.data()) scale = std::max(scale, std::abs(v));
  const double cross = trace_sqrt_psd(inner_sym, 1e-8 * std::max(1.0, scale));

  const double fd = mean_term + trace_a + trace_b - 2.0 * cross;
  return fd > 0.0 ? fd : 0.0;
}

}  // namespace dragon::stats
