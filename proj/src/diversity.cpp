#include "dragon/diversity.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <string>

#include "dragon/errors.hpp"
#include "dragon/parallel.hpp"

namespace dragon::diversity {

namespace {

constexpr double kZeroNorm = 1e-12;
constexpr double kZeroEig = 1e-12;

Matrix normalize_rows(const EmbeddingMatrix& x) {
  Matrix out(x.rows(), x.cols());
  par::for_each_index(x.rows(), [&](std::size_t r) {
    auto row = x.row(r);
    double n = norm2(row);
    if (!(n >= kZeroNorm))
      throw InvalidInput("vendi_score: zero-norm row " + std::to_string(r));
    for (std::size_t c = 0; c < x.cols(); ++c) out.at(r, c) = row[c] / n;
  });
  return out;
}

double entropy_score(const Eigen::VectorXd& eigenvalues, std::size_t n) {
  // Divide by n so the spectrum sums to one, then exponentiate the entropy.
  double h = 0.0;
  for (Eigen::Index i = 0; i < eigenvalues.size(); ++i) {
    const double lam = eigenvalues(i) / static_cast<double>(n);
    if (lam > kZeroEig) h -= lam * std::log(lam);
  }
  return std::exp(h);
}

double score_from_normalized(const Matrix& xn, bool parallel_gram) {
  const std::size_t n = xn.rows();
  const std::size_t d = xn.cols();

  // K = Xn Xn^T (n x n) and G = Xn^T Xn (d x d) share their nonzero
  // spectrum; eigendecompose whichever is smaller.
  const bool use_gram_rows = n <= d;
  const std::size_t m = use_gram_rows ? n : d;
  Matrix k(m, m);
  auto fill = [&](std::size_t i) {
    for (std::size_t j = i; j < m; ++j) {
      double v = 0.0;
      if (use_gram_rows) {
        v = dot(xn.row(i), xn.row(j));
      } else {
        for (std::size_t r = 0; r < n; ++r) v += xn.at(r, i) * xn.at(r, j);
      }
      k.at(i, j) = v;
      k.at(j, i) = v;
    }
  };
  if (parallel_gram) {
    par::for_each_index(m, fill);
  } else {
    for (std::size_t i = 0; i < m; ++i) fill(i);
  }

  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> ek(
      k.data().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(ek.eval(), Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw InvalidInput("vendi_score: eigendecomposition failed");
  return entropy_score(solver.eigenvalues(), n);
}

}  // namespace

double vendi_score(const EmbeddingMatrix& x) {
  x.validate("vendi_score");
  return score_from_normalized(normalize_rows(x), true);
}

double vendi_score_serial(const EmbeddingMatrix& x) {
  x.validate("vendi_score");
  Matrix xn(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double n = norm2(x.row(r));
    if (!(n >= kZeroNorm))
      throw InvalidInput("vendi_score: zero-norm row " + std::to_string(r));
    for (std::size_t c = 0; c < x.cols(); ++c) xn.at(r, c) = x.at(r, c) / n;
  }
  return score_from_normalized(xn, false);
}

}  // namespace dragon::diversity
